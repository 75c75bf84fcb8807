#pragma once

// Sequence-level random masking (one rectangle, fixed across all frames of a
// selected sequence) and the per-frame random-erasing baseline.

#include "gaitasms/data.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace gaitasms {

struct MaskPolicy {
  double mask_rate = 0.1;
  double region_height_fraction = 0.25;
  double region_width_fraction = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Rect {
  Index top = 0, left = 0, height = 0, width = 0;
};

/// ceil(fraction * extent) per axis; ConfigError when it cannot fit.
Rect region_size(const MaskPolicy& policy, Index height, Index width);

/// Zeroes `r` in every frame of `frames` (T x H x W).
void zero_region(Tensor<float>& frames, const Rect& r, Index only_frame = -1);

/// Each sequence is selected with probability mask_rate; a selected sequence
/// gets one rectangle, drawn once, zeroed in every frame.
std::vector<SilhouetteSequence> random_mask(std::vector<SilhouetteSequence> batch, const MaskPolicy& policy,
                                            std::mt19937_64& rng);

/// Every frame is erased independently with probability `rate` at a freshly
/// drawn position; region geometry comes from `policy`.
std::vector<SilhouetteSequence> random_erasing(std::vector<SilhouetteSequence> batch, double rate,
                                               const MaskPolicy& policy, std::mt19937_64& rng);

}  // namespace gaitasms
