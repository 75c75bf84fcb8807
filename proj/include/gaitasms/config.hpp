#pragma once

// Sectioned key = value run configuration shared by the CLI commands.
//
//   [model]   input_height, input_width, channels, threshold, branch_activation,
//             leaky_slope, kernel, dilations, temporal_kernel, p, embed_dim,
//             class_count
//   [train]   lr, lr_drop_step, lr_after_drop, total_steps, adam_beta1,
//             adam_beta2, adam_epsilon, margin, triplet_reduction,
//             cross_entropy, erasing_rate, seed, checkpoint_every, log_every
//   [sampler] subjects, per_subject, frames
//   [mask]    enabled, rate, region_height_fraction, region_width_fraction, seed

#include "gaitasms/train.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gaitasms {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate();
  }
};

/// Full-scale values: 64x44 input, channels 64/128/256/256, 80k steps.
RunConfig paper_config();

/// Small-machine preset used by the synthetic benchmark.
RunConfig desk_config();

/// Sets one value by dotted key ("train.lr"). Unknown keys and malformed
/// values raise ConfigError.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// Applies a "key=value" override.
void apply_override(RunConfig& cfg, std::string_view assignment);

/// Parses sectioned text on top of `cfg`; later lines win.
void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& origin = "config");

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base);

/// Every effective value, in a form apply_config_text reads back exactly.
std::string config_text(const RunConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace gaitasms
