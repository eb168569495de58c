#include "hmap/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "hmap/errors.hpp"

namespace hmap {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

std::span<real> Node::ensure_grad() {
  if (grad.empty()) grad.assign(data->size(), real(0));
  return grad;
}

}  // namespace detail

namespace {

detail::NodePtr make_node(Shape shape, Buffer values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::make_shared<Buffer>(std::move(values));
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), Buffer(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, Buffer values, bool requires_grad) {
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from(Shape shape, std::span<const real> values, bool requires_grad) {
  return Tensor(make_node(std::move(shape), Buffer(values.begin(), values.end()), requires_grad));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
  return Tensor(make_node({}, {value}, requires_grad));
}

detail::Node& Tensor::node() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node().data->size(); }

std::span<const real> Tensor::data() const { return *node().data; }

std::span<real> Tensor::mutable_data() { return *node().data; }

real Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

real Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("at(): wrong number of indices");
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto idx : index) {
    if (idx >= s[i]) throw DimensionError("at(): index out of range");
    flat = flat * s[i] + idx;
    ++i;
  }
  return data()[flat];
}

bool Tensor::requires_grad() const { return node().requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("requires_grad can only be toggled on leaves");
  node().requires_grad = on;
}

bool Tensor::has_grad() const { return !node().grad.empty(); }

std::span<const real> Tensor::grad() const { return node().grad; }

std::span<real> Tensor::mutable_grad() { return node().ensure_grad(); }

void Tensor::zero_grad() {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), real(0));
}

bool Tensor::is_leaf() const { return node().parents.empty() && !node().backward_fn; }

const char* Tensor::op_name() const { return node().op; }

Tensor Tensor::detach() const {
  return Tensor(make_node(shape(), *node().data, false));
}

Tensor Tensor::alias_leaf() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = shape();
  node->data = node_->data;
  node->requires_grad = node_->requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::reshape(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(new_shape);
  node->data = node_->data;
  node->op = "reshape";
  if (node_->requires_grad) {
    node->requires_grad = true;
    node->parents = {node_};
    node->backward_fn = [](detail::Node& self) {
      auto pg = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += self.grad[i];
    };
  }
  return Tensor(std::move(node));
}

Tensor Tensor::make_result(Shape shape, Buffer values, const char* op,
                           std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward_fn) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at element " +
                             std::to_string(i),
                         i);
    }
  }
  auto node = make_node(std::move(shape), std::move(values), false);
  node->op = op;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return p.defined() && p.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward() on an undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order; each node once.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(&loss.node(), 0);
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node().ensure_grad()[0] += real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  // Interior gradients are not needed after the sweep.
  for (auto* node : order) {
    if (node->backward_fn) Buffer().swap(node->grad);
  }
}

}  // namespace hmap
