#pragma once

// Procedural articulated walker used as a desk-scale stand-in for real
// silhouette datasets.

#include "gaitasms/data.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gaitasms {

/// Per-subject body and gait parameters. Lengths are fractions of stature.
struct WalkerLatents {
  double stature = 1.0;
  double head_radius = 0.065;
  double torso_width = 0.18;
  double torso_depth = 0.11;
  double leg_length = 0.49;
  double arm_length = 0.40;
  double limb_thickness = 0.045;
  double stride_deg = 28.0;
  double knee_bend_deg = 30.0;
  double arm_swing_deg = 20.0;
  double lean_deg = 2.0;
  double bob = 0.012;
  double cycle_frames = 24.0;

  friend bool operator==(const WalkerLatents&, const WalkerLatents&) = default;
};

/// Per-recording nuisance: gait phase, small cycle and pose jitter.
struct SequenceJitter {
  double phase = 0.0;        // cycles
  double cycle_scale = 1.0;
  double angle_noise_deg = 0.0;
  double drift = 0.0;        // pixels per frame
};

WalkerLatents subject_latents(std::uint64_t seed, int subject);

struct RawCanvas {
  Index height = 128;
  Index width = 96;
};

/// One binary raw frame of the walker seen from `view_deg` (0 = frontal,
/// 90 = side).
Image render_walker(const WalkerLatents& body, const SequenceJitter& jitter, Condition condition, int view_deg,
                    Index frame, RawCanvas canvas = {});

struct SynthOptions {
  int num_subjects = 8;
  int first_subject = 1;
  int sequences_per_condition = 1;
  std::vector<int> views{0, 90};
  std::vector<Walk> conditions{Walk::NM};
  Index frames = 40;
  std::uint64_t seed = 0;
  FrameSize target{};
  RawCanvas canvas{};

  void validate() const;
};

struct SyntheticDataset {
  DatasetIndex index;                         // paths empty until exported
  std::vector<SilhouetteSequence> sequences;  // normalized, aligned with index
};

/// Renders T raw frames for one recording.
Tensor<float> render_sequence(const SynthOptions& opt, int subject, Condition condition, int view);

SyntheticDataset synth_generate(const SynthOptions& opt);

/// Writes raw frames as root/SSS/cond-II/VVV/SSS-cond-II-VVV-FFF.png and
/// returns the number of sequences written.
std::size_t export_casia_layout(const SynthOptions& opt, const std::filesystem::path& root);

}  // namespace gaitasms
