#include "hmap/train/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "hmap/detail/binary_io.hpp"
#include "hmap/errors.hpp"

namespace hmap::train {
namespace {

constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

[[maybe_unused]] void put_values(std::ostream& os, std::span<const float> values) {
  detail::put_le(os, kDtypeF32);
  detail::put_f32_array(os, values);
}

[[maybe_unused]] void put_values(std::ostream& os, std::span<const double> values) {
  detail::put_le(os, kDtypeF64);
  for (double v : values) detail::put_le(os, v);
}

[[maybe_unused]] bool get_f32_values(std::istream& is, std::span<float> out) { return detail::get_f32_array(is, out); }

[[maybe_unused]] bool get_f32_values(std::istream& is, std::span<double> out) {
  for (double& v : out) {
    float f = 0;
    if (!detail::get_le(is, f)) return false;
    v = f;
  }
  return true;
}

template <class T>
void need(std::istream& is, T& value, const char* what) {
  if (!detail::get_le(is, value)) throw IoError(std::string("checkpoint truncated reading ") + what);
}

void put_tensors(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  if (tensors.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw IoError("checkpoint: too many tensors");
  }
  detail::put_le(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw IoError("checkpoint: tensor name too long: " + t.name.substr(0, 64));
    }
    if (t.shape.size() > std::numeric_limits<std::uint8_t>::max()) {
      throw IoError("checkpoint: too many dims for " + t.name);
    }
    if (shape_numel(t.shape) != t.data.size()) {
      throw ContractError("checkpoint: shape/data size mismatch for " + t.name);
    }
    detail::put_le(os, static_cast<std::uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_le(os, static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t d : t.shape) detail::put_le(os, static_cast<std::uint64_t>(d));
    put_values(os, std::span<const real>(t.data));
  }
}

std::vector<NamedTensor> get_tensors(std::istream& is, const char* section) {
  std::uint32_t count = 0;
  need(is, count, section);
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    std::uint16_t name_len = 0;
    need(is, name_len, "tensor name length");
    t.name.resize(name_len);
    if (!is.read(t.name.data(), name_len)) throw IoError("checkpoint truncated reading tensor name");
    std::uint8_t ndim = 0;
    need(is, ndim, "tensor rank");
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      std::uint64_t dim = 0;
      need(is, dim, "tensor dims");
      if (dim != 0 && numel > kMaxElements / dim) throw IoError("checkpoint: tensor " + t.name + " too large");
      numel *= dim;
      t.shape.push_back(static_cast<std::size_t>(dim));
    }
    std::uint8_t dtype = 0;
    need(is, dtype, "tensor dtype");
    t.data.resize(static_cast<std::size_t>(numel));
    if (dtype == kDtypeF32) {
      if (!get_f32_values(is, std::span<real>(t.data))) {
        throw IoError("checkpoint truncated reading " + t.name);
      }
    } else if (dtype == kDtypeF64) {
      for (auto& v : t.data) {
        double d = 0;
        need(is, d, "tensor data");
        v = static_cast<real>(d);
      }
    } else {
      throw IoError("checkpoint: unknown dtype " + std::to_string(dtype) + " for " + t.name);
    }
    out.push_back(std::move(t));
  }
  return out;
}

void write_all(std::ostream& os, const Checkpoint& c) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le(os, c.version);
  if (c.config_json.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw IoError("checkpoint: config echo too long");
  }
  detail::put_le(os, static_cast<std::uint32_t>(c.config_json.size()));
  os.write(c.config_json.data(), static_cast<std::streamsize>(c.config_json.size()));
  put_tensors(os, c.params);
  put_tensors(os, c.optimizer);
  detail::put_le(os, c.step);
  for (std::uint64_t w : c.rng) detail::put_le(os, w);
}

Checkpoint read_all(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof(magic))) throw IoError("checkpoint truncated reading magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw IoError("not a checkpoint (bad magic)");
  Checkpoint c;
  need(is, c.version, "version");
  if (c.version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(c.version));
  }
  std::uint32_t len = 0;
  need(is, len, "config length");
  c.config_json.resize(len);
  if (!is.read(c.config_json.data(), len)) throw IoError("checkpoint truncated reading config");
  c.params = get_tensors(is, "parameter count");
  c.optimizer = get_tensors(is, "optimizer count");
  need(is, c.step, "step");
  for (auto& w : c.rng) need(is, w, "rng state");
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("checkpoint has trailing bytes");
  return c;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  std::ostringstream os(std::ios::binary);
  write_all(os, checkpoint);
  return os.str();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_all(is);
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  write_all(out, checkpoint);
  out.flush();
  if (!out) throw IoError("write failed for checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  try {
    return read_all(in);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace hmap::train
