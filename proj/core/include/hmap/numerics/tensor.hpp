#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace hmap {

#if defined(HMAP_REAL_DOUBLE)
using real = double;
#else
using real = float;
#endif

/// True in the 64-bit verification build.
inline constexpr bool kDoublePrecision = sizeof(real) == 8;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// 64-byte aligned allocation. Vectorized kernels peel a scalar head off
/// misaligned buffers, which would make results depend on heap addresses.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<real, AlignedAllocator<real>>;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  // Shared so that parameter replicas can alias one buffer.
  std::shared_ptr<Buffer> data;
  Buffer grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  std::span<real> ensure_grad();
};

}  // namespace detail

/// Dense row-major tensor handle with reverse-mode autodiff.
///
/// Copies share the underlying node. Values are immutable once produced by an
/// op; only leaves (parameters) are mutated, and only by the optimizer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from(Shape shape, Buffer values, bool requires_grad = false);
  static Tensor from(Shape shape, std::span<const real> values, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const real> data() const;
  /// Writable view. Intended for leaves only (parameter init, optimizer, tests).
  std::span<real> mutable_data();
  real item() const;
  real at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const real> grad() const;
  std::span<real> mutable_grad();
  void zero_grad();
  bool is_leaf() const;
  const char* op_name() const;

  /// New leaf holding a copy of the values, outside any graph.
  Tensor detach() const;
  /// New leaf aliasing this tensor's storage with its own gradient buffer.
  Tensor alias_leaf() const;
  Tensor reshape(Shape shape) const;

  // Used by op implementations.
  static Tensor make_result(Shape shape, Buffer values, const char* op,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward_fn);
  detail::Node& node() const;
  const detail::NodePtr& node_ptr() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  detail::NodePtr node_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate.
void backward(const Tensor& loss);

}  // namespace hmap
