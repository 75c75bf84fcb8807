#pragma once

// Adam training loop over P x K batches, checkpoints, and the loss log.

#include "gaitasms/augment.hpp"
#include "gaitasms/loss.hpp"
#include "gaitasms/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaitasms {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double lr = 1e-4;
  double lr_after_drop = 1e-5;
  Index lr_drop_step = 70000;
  Index total_steps = 80000;
  AdamConfig adam;
  TripletConfig triplet;
  bool use_cross_entropy = true;
  SamplerConfig sampler{8, 8, 30};
  bool use_mask = true;
  MaskPolicy mask;
  double erasing_rate = 0.0;  // per-frame random erasing baseline; 0 disables
  std::uint64_t seed = 0;
  Index checkpoint_every = 0;  // 0: only the final checkpoint
  Index log_every = 1;

  double lr_at(Index step) const { return step < lr_drop_step ? lr : lr_after_drop; }
  void validate() const;
};

/// Step-indexed state: everything a resumed run needs to continue bit-exactly.
struct TrainingState {
  ModelConfig model;
  ParamStore<float> params;
  ParamStore<float> adam_m;
  ParamStore<float> adam_v;
  Index step = 0;
  std::mt19937_64 sample_rng;
  std::mt19937_64 mask_rng;
};

TrainingState init_training(const ModelConfig& model, const TrainConfig& cfg);

/// Dense class indices for the subjects of a training pool, in ascending
/// subject order.
class LabelMap {
 public:
  explicit LabelMap(const std::vector<SilhouetteSequence>& pool);
  int operator()(int subject) const;
  std::vector<int> labels(const std::vector<SilhouetteSequence>& batch) const;
  Index size() const { return static_cast<Index>(classes_.size()); }

 private:
  std::map<int, int> classes_;
};

struct StepLosses {
  Index step = 0;
  double lr = 0;
  double triplet = 0;
  double cross_entropy = 0;
  double total = 0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, std::vector<SilhouetteSequence> batch)
      : std::runtime_error(what), batch_(std::move(batch)) {}
  const std::vector<SilhouetteSequence>& batch() const { return batch_; }

 private:
  std::vector<SilhouetteSequence> batch_;
};

/// pk_sample from the sampler stream, then random_mask / random_erasing from
/// the mask stream.
std::vector<SilhouetteSequence> draw_batch(TrainingState& state, const std::vector<SilhouetteSequence>& pool,
                                           const TrainConfig& cfg);

/// One forward/backward pass and Adam update. Throws NonFiniteLoss (state left
/// untouched) when the loss or a gradient is not finite.
StepLosses train_step(TrainingState& state, const std::vector<SilhouetteSequence>& batch,
                      const std::vector<int>& labels, const TrainConfig& cfg);

using StepCallback = std::function<void(const StepLosses&, const TrainingState&)>;

/// Runs steps until state.step == cfg.total_steps.
void run_training(TrainingState& state, const std::vector<SilhouetteSequence>& pool, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

// --- checkpoints ------------------------------------------------------------

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout (little-endian): "GASMCKPT", u32 version, u64 step, u32 rng byte
/// count + rng text, u32 tensor count, then per tensor u32 name length, name
/// bytes, u32 rank, u32 extents, f32 data. Adam moments are stored as
/// "adam.m/<name>" and "adam.v/<name>".
struct Checkpoint {
  static constexpr std::uint32_t version = 1;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<NamedTensor<float>> tensors;
};

Checkpoint make_checkpoint(const TrainingState& state);
void restore_checkpoint(TrainingState& state, const Checkpoint& ckpt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const TrainingState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gaitasms
