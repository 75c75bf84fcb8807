#pragma once

// Multi-scale temporal aggregation: residual blocks of dilated temporal
// convolutions (Conv -> Relu -> BatchNorm, twice) chained with growing dilation.

#include "gaitasms/ops.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace gaitasms {

struct DcbConfig {
  static constexpr Index layers_per_block = 2;

  Index channels_in = 128;
  Index channels_out = 256;
  Index dilation = 2;
  Index temporal_kernel = 3;

  Index padding() const { return dilation * (temporal_kernel - 1) / 2; }
  bool needs_projection() const { return channels_in != channels_out; }

  void validate() const {
    if (channels_in < 1 || channels_out < 1) throw ConfigError("dcb: channel counts must be positive");
    if (dilation < 1) throw ConfigError("dcb: dilation must be positive");
    if (temporal_kernel < 1 || temporal_kernel % 2 == 0)
      throw ConfigError("dcb: temporal kernel must be odd, got " + std::to_string(temporal_kernel));
  }
};

template <typename Scalar>
struct ConvBnParams {
  Var<Scalar> weight;
  Var<Scalar> bias;
  Var<Scalar> gamma;
  Var<Scalar> beta;
  BatchNormStats<Scalar> stats;
};

template <typename Scalar>
struct DcbParams {
  std::array<ConvBnParams<Scalar>, DcbConfig::layers_per_block> layers;
  std::optional<Var<Scalar>> projection;  // 1x1x1, present iff channel counts differ
};

/// y = BN(Relu(DConv(BN(Relu(DConv(x)))))) + proj(x)
template <typename Scalar>
Var<Scalar> dcb_forward(const Var<Scalar>& x, const DcbParams<Scalar>& params, const DcbConfig& cfg, bool training) {
  cfg.validate();
  const Volume in = Volume::of(x.shape(), "dcb_forward");
  if (in.c != cfg.channels_in)
    throw ShapeError("dcb_forward: expected " + std::to_string(cfg.channels_in) + " channels, got " +
                     std::to_string(in.c));
  if (cfg.needs_projection() != params.projection.has_value())
    throw ConfigError(cfg.needs_projection() ? "dcb_forward: channel change requires a residual projection"
                                             : "dcb_forward: projection given but channel counts match");
  const ConvSpec spec = ConvSpec::temporal(cfg.temporal_kernel, cfg.dilation);
  Var<Scalar> h = x;
  for (const auto& layer : params.layers) {
    h = relu(conv3d(h, layer.weight, layer.bias, spec));
    h = batch_norm(h, layer.gamma, layer.beta, layer.stats, training);
  }
  Var<Scalar> skip = params.projection ? conv3d(x, *params.projection, std::nullopt, ConvSpec{}) : x;
  return add(h, skip);
}

template <typename Scalar>
Var<Scalar> msta_forward(const Var<Scalar>& x, const DcbParams<Scalar>& first, const DcbParams<Scalar>& second,
                         const DcbConfig& first_cfg, const DcbConfig& second_cfg, bool training) {
  return dcb_forward(dcb_forward(x, first, first_cfg, training), second, second_cfg, training);
}

/// Frames of input that can influence one output frame.
inline Index receptive_field(const std::vector<DcbConfig>& blocks) {
  Index frames = 1;
  for (const auto& b : blocks) frames += DcbConfig::layers_per_block * b.dilation * (b.temporal_kernel - 1);
  return frames;
}

}  // namespace gaitasms
