#include "hmap/data/token_grid.hpp"

#include <cmath>

#include "hmap/errors.hpp"

namespace hmap::data {

namespace {

void check_tiling(const Image& image, PatchSize patch) {
  if (patch.height == 0 || patch.width == 0) throw TilingError("patch size must be positive");
  if (image.height % patch.height != 0 || image.width % patch.width != 0) {
    throw TilingError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                      " is not divisible by patch " + std::to_string(patch.height) + "x" +
                      std::to_string(patch.width));
  }
  if (image.pixels.size() != static_cast<std::size_t>(image.channels) * image.height * image.width) {
    throw DimensionError("image pixel buffer does not match its dimensions");
  }
}

// Writes the tokens of one image into `out` ([M*N, D] row-major).
void cut_patches(const Image& image, PatchSize patch, real* out) {
  const std::size_t cols = image.width / patch.width;
  const std::size_t rows = image.height / patch.height;
  const std::size_t dim = image.channels * patch.height * patch.width;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      real* token = out + (i * cols + j) * dim;
      std::size_t k = 0;
      for (std::uint32_t c = 0; c < image.channels; ++c) {
        for (std::size_t py = 0; py < patch.height; ++py) {
          for (std::size_t px = 0; px < patch.width; ++px) {
            token[k++] = static_cast<real>(image.at(c, static_cast<std::uint32_t>(i * patch.height + py),
                                                    static_cast<std::uint32_t>(j * patch.width + px)));
          }
        }
      }
    }
  }
}

}  // namespace

TokenGrid patchify(const Image& image, PatchSize patch) {
  check_tiling(image, patch);
  TokenGrid grid;
  grid.rows = image.height / patch.height;
  grid.cols = image.width / patch.width;
  grid.channels = image.channels;
  grid.patch = patch;
  grid.image_height = image.height;
  grid.image_width = image.width;
  std::vector<real> values(grid.length() * grid.patch_dim());
  cut_patches(image, patch, values.data());
  grid.tokens = Tensor::from({grid.length(), grid.patch_dim()}, std::move(values));
  return grid;
}

Image unpatchify(const TokenGrid& grid) {
  if (grid.tokens.shape() != Shape{grid.length(), grid.patch_dim()}) {
    throw DimensionError("unpatchify: tokens " + shape_str(grid.tokens.shape()) +
                         " do not match the grid geometry");
  }
  Image image;
  image.channels = static_cast<std::uint32_t>(grid.channels);
  image.height = static_cast<std::uint32_t>(grid.image_height);
  image.width = static_cast<std::uint32_t>(grid.image_width);
  image.pixels.resize(grid.channels * grid.image_height * grid.image_width);
  const auto values = grid.tokens.data();
  const std::size_t dim = grid.patch_dim();
  for (std::size_t i = 0; i < grid.rows; ++i) {
    for (std::size_t j = 0; j < grid.cols; ++j) {
      const real* token = values.data() + (i * grid.cols + j) * dim;
      std::size_t k = 0;
      for (std::uint32_t c = 0; c < image.channels; ++c) {
        for (std::size_t py = 0; py < grid.patch.height; ++py) {
          for (std::size_t px = 0; px < grid.patch.width; ++px) {
            image.at(c, static_cast<std::uint32_t>(i * grid.patch.height + py),
                     static_cast<std::uint32_t>(j * grid.patch.width + px)) =
                static_cast<float>(token[k++]);
          }
        }
      }
    }
  }
  return image;
}

Tensor patchify_batch(std::span<const Image> images, PatchSize patch) {
  if (images.empty()) throw ContractError("patchify_batch: empty batch");
  const Image& first = images.front();
  check_tiling(first, patch);
  const std::size_t len = (first.height / patch.height) * (first.width / patch.width);
  const std::size_t dim = first.channels * patch.height * patch.width;
  std::vector<real> values(images.size() * len * dim);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.channels != first.channels || img.height != first.height || img.width != first.width) {
      throw DimensionError("patchify_batch: images differ in size");
    }
    check_tiling(img, patch);
    cut_patches(img, patch, values.data() + n * len * dim);
  }
  return Tensor::from({images.size(), len, dim}, std::move(values));
}

namespace {

void standardize_rows(std::span<const real> in, std::size_t dim, std::vector<real>& out,
                      std::vector<real>* means, std::vector<real>* stds) {
  if (dim < 2) throw ContractError("target normalization needs a patch dimension >= 2");
  const std::size_t rows = in.size() / dim;
  out.resize(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    // Statistics in double so a constant patch yields an exactly zero target.
    double mu = 0;
    for (std::size_t j = 0; j < dim; ++j) mu += in[r * dim + j];
    mu /= static_cast<double>(dim);
    double var = 0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double e = in[r * dim + j] - mu;
      var += e * e;
    }
    var /= static_cast<double>(dim);
    const double sd = std::sqrt(var + kTargetEps);
    for (std::size_t j = 0; j < dim; ++j) {
      out[r * dim + j] = static_cast<real>((in[r * dim + j] - mu) / sd);
    }
    if (means) means->push_back(static_cast<real>(mu));
    if (stds) stds->push_back(static_cast<real>(sd));
  }
}

}  // namespace

ReconstructionTarget make_targets(const TokenGrid& grid) {
  ReconstructionTarget target;
  std::vector<real> out;
  standardize_rows(grid.tokens.data(), grid.patch_dim(), out, &target.mean, &target.std);
  target.normalized = Tensor::from(grid.tokens.shape(), std::move(out));
  return target;
}

Tensor normalize_tokens(const Tensor& tokens) {
  std::vector<real> out;
  standardize_rows(tokens.data(), tokens.shape().back(), out, nullptr, nullptr);
  return Tensor::from(tokens.shape(), std::move(out));
}

Tensor denormalize(const ReconstructionTarget& target) {
  const auto& shape = target.normalized.shape();
  const std::size_t dim = shape.back();
  const auto in = target.normalized.data();
  std::vector<real> out(in.size());
  for (std::size_t r = 0; r < target.mean.size(); ++r) {
    for (std::size_t j = 0; j < dim; ++j) {
      out[r * dim + j] = in[r * dim + j] * target.std[r] + target.mean[r];
    }
  }
  return Tensor::from(shape, std::move(out));
}

}  // namespace hmap::data
