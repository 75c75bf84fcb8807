#include "gaitasms/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gaitasms {

void MaskPolicy::validate() const {
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw ConfigError("mask policy: rate must lie in [0, 1]");
  if (!(region_height_fraction > 0.0 && region_height_fraction <= 1.0) ||
      !(region_width_fraction > 0.0 && region_width_fraction <= 1.0))
    throw ConfigError("mask policy: region fractions must lie in (0, 1]");
}

Rect region_size(const MaskPolicy& policy, Index height, Index width) {
  policy.validate();
  const auto rh = static_cast<Index>(std::ceil(policy.region_height_fraction * static_cast<double>(height) - 1e-9));
  const auto rw = static_cast<Index>(std::ceil(policy.region_width_fraction * static_cast<double>(width) - 1e-9));
  if (rh > height || rw > width || rh < 1 || rw < 1)
    throw ConfigError("mask region " + std::to_string(rh) + "x" + std::to_string(rw) + " does not fit a " +
                      std::to_string(height) + "x" + std::to_string(width) + " frame");
  return Rect{0, 0, rh, rw};
}

void zero_region(Tensor<float>& frames, const Rect& r, Index only_frame) {
  const Index t_count = frames.extent(0), h = frames.extent(1), w = frames.extent(2);
  for (Index t = 0; t < t_count; ++t) {
    if (only_frame >= 0 && t != only_frame) continue;
    for (Index y = r.top; y < r.top + r.height; ++y)
      std::fill(frames.data() + (t * h + y) * w + r.left, frames.data() + (t * h + y) * w + r.left + r.width, 0.0f);
  }
}

namespace {
Rect place(Rect r, Index height, Index width, std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> top(0, height - r.height), left(0, width - r.width);
  r.top = top(rng);
  r.left = left(rng);
  return r;
}
}  // namespace

std::vector<SilhouetteSequence> random_mask(std::vector<SilhouetteSequence> batch, const MaskPolicy& policy,
                                            std::mt19937_64& rng) {
  policy.validate();
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (auto& seq : batch) {
    if (seq.length() == 0) continue;
    const Rect size = region_size(policy, seq.height(), seq.width());
    if (!(coin(rng) < policy.mask_rate)) continue;
    zero_region(seq.frames, place(size, seq.height(), seq.width(), rng));
  }
  return batch;
}

std::vector<SilhouetteSequence> random_erasing(std::vector<SilhouetteSequence> batch, double rate,
                                               const MaskPolicy& policy, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("random_erasing: rate must lie in [0, 1]");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (auto& seq : batch) {
    if (seq.length() == 0) continue;
    const Rect size = region_size(policy, seq.height(), seq.width());
    for (Index t = 0; t < seq.length(); ++t) {
      if (!(coin(rng) < rate)) continue;
      zero_region(seq.frames, place(size, seq.height(), seq.width(), rng), t);
    }
  }
  return batch;
}

}  // namespace gaitasms
