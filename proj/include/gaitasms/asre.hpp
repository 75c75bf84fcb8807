#pragma once

// Adaptive structured representation extraction: temporal edge masks, the
// masked local extractor (LEM), the global extractor (GFE) and their fusion.

#include "gaitasms/ops.hpp"

#include <string>

namespace gaitasms {

enum class Fusion { Add, CatH };
enum class BranchActivation { None, LeakyRelu };

struct AsreConfig {
  Index in_channels = 1;
  Index out_channels = 64;
  Index kernel = 3;
  double threshold = 0.5;
  Fusion fusion = Fusion::Add;
  BranchActivation branch_activation = BranchActivation::LeakyRelu;
  double leaky_slope = 0.01;

  void validate() const {
    if (in_channels < 1 || out_channels < 1) throw ConfigError("asre: channel counts must be positive");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("asre: kernel must be odd, got " + std::to_string(kernel));
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("asre: threshold must lie in (0, 1)");
  }
};

template <typename Scalar>
struct EdgeMaskPair {
  Tensor<Scalar> edge;
  Tensor<Scalar> complement;
};

/// The local weight/bias pair is shared by both masked branches.
template <typename Scalar>
struct AsreParams {
  Var<Scalar> local_weight;
  Var<Scalar> local_bias;
  Var<Scalar> global_weight;
  Var<Scalar> global_bias;
};

/// sigmoid(MaxPool_3x1x1(x) - AvgPool_3x1x1(x)) with temporal padding 1.
template <typename Scalar>
Tensor<Scalar> temporal_stats(const Tensor<Scalar>& x) {
  const Volume in = Volume::of(x.shape(), "temporal_stats");
  const ConvSpec sp = pool_spec({3, 1, 1}, {1, 1, 1}, {1, 0, 0});
  const Volume out = in.output(sp, in.c);
  Tensor<Scalar> hi(x.shape()), lo(x.shape());
  std::vector<Index> scratch(static_cast<std::size_t>(x.size()));
  kernels::max_pool(x.data(), in, out, sp, hi.data(), scratch.data());
  kernels::avg_pool(x.data(), in, out, sp, lo.data(), scratch.data());
  Tensor<Scalar> s(x.shape());
  s.array() = Scalar(1) / (Scalar(1) + (lo.array() - hi.array()).exp());
  return s;
}

/// Hard threshold (s >= threshold) into a complementary {0,1} pair.
template <typename Scalar>
EdgeMaskPair<Scalar> edge_mask(const Tensor<Scalar>& s, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("edge_mask: threshold must lie in (0, 1)");
  EdgeMaskPair<Scalar> m{Tensor<Scalar>(s.shape()), Tensor<Scalar>(s.shape())};
  const Scalar th = static_cast<Scalar>(threshold);
  m.edge.array() = (s.array() >= th).template cast<Scalar>();
  m.complement.array() = Scalar(1) - m.edge.array();
  return m;
}

namespace detail {
template <typename Scalar>
Var<Scalar> branch_act(const Var<Scalar>& x, const AsreConfig& cfg) {
  if (cfg.branch_activation == BranchActivation::None) return x;
  return leaky_relu(x, static_cast<Scalar>(cfg.leaky_slope));
}
}  // namespace detail

/// act(conv(x * M)) + act(conv(x * (1 - M))) with one shared convolution.
template <typename Scalar>
Var<Scalar> lem_forward(const Var<Scalar>& x, const EdgeMaskPair<Scalar>& masks, const AsreParams<Scalar>& params,
                        const AsreConfig& cfg) {
  cfg.validate();
  if (masks.edge.shape() != x.shape() || masks.complement.shape() != x.shape())
    throw ShapeError("lem_forward: masks must be shaped like the input " + shape_string(x.shape()));
  auto& tape = x.tape();
  const ConvSpec spec = ConvSpec::same(cfg.kernel);
  auto edge = conv3d(mul(x, tape.constant(masks.edge)), params.local_weight, params.local_bias, spec);
  auto rest = conv3d(mul(x, tape.constant(masks.complement)), params.local_weight, params.local_bias, spec);
  return add(detail::branch_act(edge, cfg), detail::branch_act(rest, cfg));
}

template <typename Scalar>
Var<Scalar> gfe_forward(const Var<Scalar>& x, const AsreParams<Scalar>& params, const AsreConfig& cfg) {
  cfg.validate();
  return detail::branch_act(conv3d(x, params.global_weight, params.global_bias, ConvSpec::same(cfg.kernel)), cfg);
}

/// Add keeps the height; CatH stacks GFE above LEM along the height axis.
template <typename Scalar>
Var<Scalar> asre_forward(const Var<Scalar>& x, const AsreParams<Scalar>& params, const AsreConfig& cfg) {
  cfg.validate();
  const auto masks = edge_mask(temporal_stats(x.value()), cfg.threshold);
  auto global = gfe_forward(x, params, cfg);
  auto local = lem_forward(x, masks, params, cfg);
  if (global.shape() != local.shape())
    throw std::logic_error("asre_forward: branch shapes diverged " + shape_string(global.shape()) + " vs " +
                           shape_string(local.shape()));
  if (cfg.fusion == Fusion::Add) return add(global, local);
  return concat<Scalar>({global, local}, static_cast<Index>(x.shape().size()) - 2);
}

}  // namespace gaitasms
