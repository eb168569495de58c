#pragma once

#include <cstdint>
#include <vector>

namespace hmap::data {

/// C x H x W image, row-major, pixel values in [0, 1]. Pixels are stored as
/// 32-bit floats regardless of the build's compute precision because that is
/// what the archive format carries.
struct Image {
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> pixels;

  float at(std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float& at(std::uint32_t c, std::uint32_t y, std::uint32_t x) {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct DatasetRecord {
  std::uint32_t label = 0;
  Image image;

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

}  // namespace hmap::data
