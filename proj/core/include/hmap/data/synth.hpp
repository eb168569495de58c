#pragma once

#include <cstdint>
#include <vector>

#include "hmap/data/image.hpp"
#include "hmap/rng.hpp"

namespace hmap::data {

struct SynthOptions {
  std::size_t count = 1000;
  std::uint32_t num_classes = 4;  // 1..8
  std::uint32_t channels = 1;
  std::uint32_t height = 32;
  std::uint32_t width = 32;
};

/// Procedural, class-balanced stand-in for a natural image dataset.
///
/// Class families (label % 4): smooth oriented ramps, checkerboards, bright
/// Gaussian blobs, oriented sinusoidal stripes. Labels 4..7 are second
/// variants of the same families (radial ramps, coarse checkers, dark blobs,
/// concentric rings). Record i has label i % num_classes, so any prefix is
/// as balanced as possible. Each record depends only on (seed, i).
class SynthStream {
 public:
  SynthStream(std::uint64_t seed, SynthOptions options);

  bool done() const { return next_ >= options_.count; }
  /// Generates the next record; must not be called once done().
  DatasetRecord next();
  /// Record at an arbitrary index.
  DatasetRecord record(std::size_t index) const;

 private:
  std::uint64_t seed_;
  SynthOptions options_;
  std::size_t next_ = 0;
};

std::vector<DatasetRecord> synth_dataset(std::uint64_t seed, const SynthOptions& options);

/// Pads by `pad` pixels with zeros and crops back to the original size at a
/// random offset.
Image random_crop(const Image& image, std::uint32_t pad, Rng& rng);

}  // namespace hmap::data
