#include "hmap/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hmap/errors.hpp"

namespace hmap::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kNoise = 0.03;

struct Painter {
  std::uint32_t family;
  bool variant;
  double p[8] = {};
};

Painter make_painter(std::uint32_t label, std::uint32_t width, std::uint32_t height, Rng& rng) {
  Painter pt{label % 4, label >= 4, {}};
  switch (pt.family) {
    case 0:  // ramp: angle, centre, contrast
      pt.p[0] = rng.uniform(0.0, kTwoPi);
      pt.p[1] = rng.uniform(0.3, 0.7) * width;
      pt.p[2] = rng.uniform(0.3, 0.7) * height;
      pt.p[3] = rng.uniform(0.8, 1.2);
      break;
    case 1:  // checker: cell size, phase, two levels
      pt.p[0] = pt.variant ? 8.0 : static_cast<double>(2 + 2 * rng.below(2));
      pt.p[1] = static_cast<double>(rng.below(8));
      pt.p[2] = static_cast<double>(rng.below(8));
      pt.p[3] = rng.uniform(0.7, 0.95);
      pt.p[4] = rng.uniform(0.05, 0.3);
      break;
    case 2:  // blobs: count and background level
      pt.p[0] = static_cast<double>(1 + rng.below(3));
      pt.p[1] = rng.uniform(0.05, 0.15);
      break;
    default:  // stripes / rings: angle, period, phase
      pt.p[0] = rng.uniform(0.0, std::numbers::pi);
      pt.p[1] = rng.uniform(5.0, 8.0);
      pt.p[2] = rng.uniform(0.0, kTwoPi);
      pt.p[3] = rng.uniform(0.3, 0.7) * width;
      pt.p[4] = rng.uniform(0.3, 0.7) * height;
      break;
  }
  return pt;
}

}  // namespace

SynthStream::SynthStream(std::uint64_t seed, SynthOptions options)
    : seed_(seed), options_(options) {
  if (options_.num_classes == 0 || options_.num_classes > 8) {
    throw ContractError("synthetic data supports 1..8 classes");
  }
  if (options_.channels == 0 || options_.height == 0 || options_.width == 0) {
    throw ContractError("synthetic image dimensions must be positive");
  }
}

DatasetRecord SynthStream::next() {
  if (done()) throw ContractError("SynthStream::next() past the end");
  return record(next_++);
}

DatasetRecord SynthStream::record(std::size_t index) const {
  std::uint64_t mix = seed_ ^ (0xd1b54a32d192ed03ULL * (index + 1));
  Rng rng(Rng::splitmix64(mix));
  const auto w = options_.width;
  const auto h = options_.height;

  DatasetRecord rec;
  rec.label = static_cast<std::uint32_t>(index % options_.num_classes);
  rec.image.channels = options_.channels;
  rec.image.height = h;
  rec.image.width = w;
  rec.image.pixels.assign(static_cast<std::size_t>(options_.channels) * h * w, 0.0f);

  const Painter pt = make_painter(rec.label, w, h, rng);

  // Blob parameters are drawn up front so the per-pixel loop is pure.
  struct Blob {
    double cx, cy, sigma, amp;
  };
  std::vector<Blob> blobs;
  if (pt.family == 2) {
    for (int k = 0; k < static_cast<int>(pt.p[0]); ++k) {
      blobs.push_back({rng.uniform(0.2, 0.8) * w, rng.uniform(0.2, 0.8) * h, rng.uniform(2.5, 4.5),
                       rng.uniform(0.6, 0.85)});
    }
  }
  const double diag = std::sqrt(static_cast<double>(w) * w + static_cast<double>(h) * h);

  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      double v = 0.0;
      const double fx = x + 0.5;
      const double fy = y + 0.5;
      switch (pt.family) {
        case 0: {
          const double dx = fx - pt.p[1];
          const double dy = fy - pt.p[2];
          if (pt.variant) {
            v = 0.9 - pt.p[3] * 1.4 * std::sqrt(dx * dx + dy * dy) / diag;
          } else {
            v = 0.5 + pt.p[3] * 0.8 * (dx * std::cos(pt.p[0]) + dy * std::sin(pt.p[0])) / diag;
          }
          break;
        }
        case 1: {
          const auto cell = static_cast<std::uint32_t>(pt.p[0]);
          const auto cx = (x + static_cast<std::uint32_t>(pt.p[1])) / cell;
          const auto cy = (y + static_cast<std::uint32_t>(pt.p[2])) / cell;
          v = ((cx + cy) % 2) ? pt.p[3] : pt.p[4];
          break;
        }
        case 2: {
          double acc = 0.0;
          for (const auto& b : blobs) {
            const double dx = fx - b.cx;
            const double dy = fy - b.cy;
            acc += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
          }
          v = pt.variant ? 1.0 - pt.p[1] - acc : pt.p[1] + acc;
          break;
        }
        default: {
          double phase;
          if (pt.variant) {
            const double dx = fx - pt.p[3];
            const double dy = fy - pt.p[4];
            phase = std::sqrt(dx * dx + dy * dy) / pt.p[1];
          } else {
            phase = (fx * std::cos(pt.p[0]) + fy * std::sin(pt.p[0])) / pt.p[1];
          }
          v = 0.5 + 0.4 * std::sin(kTwoPi * phase + pt.p[2]);
          break;
        }
      }
      for (std::uint32_t c = 0; c < options_.channels; ++c) {
        const double noisy = v + kNoise * rng.normal();
        rec.image.at(c, y, x) = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
      }
    }
  }
  return rec;
}

std::vector<DatasetRecord> synth_dataset(std::uint64_t seed, const SynthOptions& options) {
  SynthStream stream(seed, options);
  std::vector<DatasetRecord> out;
  out.reserve(options.count);
  while (!stream.done()) out.push_back(stream.next());
  return out;
}

Image random_crop(const Image& image, std::uint32_t pad, Rng& rng) {
  const auto dy = static_cast<std::int64_t>(rng.below(2 * pad + 1)) - pad;
  const auto dx = static_cast<std::int64_t>(rng.below(2 * pad + 1)) - pad;
  Image out = image;
  for (std::uint32_t c = 0; c < image.channels; ++c) {
    for (std::uint32_t y = 0; y < image.height; ++y) {
      for (std::uint32_t x = 0; x < image.width; ++x) {
        const std::int64_t sy = static_cast<std::int64_t>(y) + dy;
        const std::int64_t sx = static_cast<std::int64_t>(x) + dx;
        const bool inside = sy >= 0 && sx >= 0 && sy < image.height && sx < image.width;
        out.at(c, y, x) = inside ? image.at(c, static_cast<std::uint32_t>(sy),
                                            static_cast<std::uint32_t>(sx))
                                 : 0.0f;
      }
    }
  }
  return out;
}

}  // namespace hmap::data
