#pragma once

// Recognition head: temporal max pooling, GeM pooling over the width of every
// height row ("strip"), and an independent linear map per strip.

#include "gaitasms/ops.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gaitasms {

struct HeadConfig {
  double p = 6.5;
  Index strips = 64;
  Index embed_dim = 128;
  Index class_count = 0;  // 0 disables the classifier

  void validate() const {
    if (!(p > 0.0)) throw ConfigError("head: GeM exponent p must be positive");
    if (strips < 1 || embed_dim < 1) throw ConfigError("head: strips and embed_dim must be positive");
    if (class_count < 0) throw ConfigError("head: class_count must be nonnegative");
  }
};

template <typename Scalar>
struct HeadParams {
  Var<Scalar> fc;                         // strips x C x embed_dim
  std::optional<Var<Scalar>> classifier;  // strips x embed_dim x class_count
};

template <typename Scalar>
struct HeadOutput {
  Var<Scalar> embeddings;            // N x strips x embed_dim
  std::optional<Var<Scalar>> logits;  // N x strips x class_count
};

/// Per-sequence strip embeddings with identity tags.
struct EmbeddingMatrix {
  RowMatrix<float> values;  // strips x embed_dim
  std::uint32_t label = 0;
  std::uint32_t view = 0;
  std::uint32_t condition = 0;
};

/// Max over the whole temporal extent: [N x] C x T x H x W -> [N x] C x 1 x H x W.
template <typename Scalar>
Var<Scalar> temporal_max(const Var<Scalar>& x) {
  const Volume v = Volume::of(x.shape(), "temporal_max");
  return max_pool3d(x, {v.t, 1, 1}, {1, 1, 1});
}

/// Generalized mean over the width axis, (mean_w max(y,0)^p)^(1/p).
/// Rows whose mean is exactly zero pass no gradient.
template <typename Scalar>
Var<Scalar> gem_pool(const Var<Scalar>& y, double p) {
  if (!(p > 0.0)) throw ConfigError("gem_pool: p must be positive");
  const Volume v = Volume::of(y.shape(), "gem_pool");
  const Index rows = v.n * v.c * v.t * v.h;
  Shape out_shape = y.shape();
  out_shape.back() = 1;
  Tensor<Scalar> out(out_shape);
  auto means = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  const Scalar* yd = y.value().data();
  for (Index r = 0; r < rows; ++r) {
    double acc = 0;
    for (Index w = 0; w < v.w; ++w) acc += std::pow(std::max(0.0, static_cast<double>(yd[r * v.w + w])), p);
    const double m = acc / static_cast<double>(v.w);
    (*means)[static_cast<std::size_t>(r)] = m;
    out[r] = static_cast<Scalar>(p == 1.0 ? m : std::pow(m, 1.0 / p));
  }
  const std::size_t yid = y.id();
  const Index width = v.w;
  return y.tape().record(std::move(out), {y}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    Scalar* gx = t.grad_buffer(yid).data();
    const Scalar* yd = t.value(yid).data();
    for (Index r = 0; r < rows; ++r) {
      const double m = (*means)[static_cast<std::size_t>(r)];
      if (m <= 0.0) continue;
      const double lead = static_cast<double>(g[r]) * std::pow(m, 1.0 / p - 1.0) / static_cast<double>(width);
      for (Index w = 0; w < width; ++w) {
        const double val = static_cast<double>(yd[r * width + w]);
        if (val > 0.0) gx[r * width + w] += static_cast<Scalar>(lead * std::pow(val, p - 1.0));
      }
    }
  });
}

/// [N x] C x 1 x H x 1 pooled map -> N x H x C strip features.
template <typename Scalar>
Var<Scalar> strip_features(const Var<Scalar>& pooled) {
  const Volume v = Volume::of(pooled.shape(), "strip_features");
  if (v.t != 1 || v.w != 1) throw ShapeError("strip_features: expected singleton T and W, got " + shape_string(pooled.shape()));
  Tensor<Scalar> out(Shape{v.n, v.h, v.c});
  const Scalar* src = pooled.value().data();
  for (Index n = 0; n < v.n; ++n)
    for (Index c = 0; c < v.c; ++c)
      for (Index h = 0; h < v.h; ++h) out[(n * v.h + h) * v.c + c] = src[(n * v.c + c) * v.h + h];
  const std::size_t pid = pooled.id();
  return pooled.tape().record(std::move(out), {pooled}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    Scalar* dst = t.grad_buffer(pid).data();
    for (Index n = 0; n < v.n; ++n)
      for (Index c = 0; c < v.c; ++c)
        for (Index h = 0; h < v.h; ++h) dst[(n * v.c + c) * v.h + h] += g[(n * v.h + h) * v.c + c];
  });
}

/// out[n, h, :] = x[n, h, :] * W[h]; one unshared matrix per strip, no bias.
template <typename Scalar>
Var<Scalar> separate_fc(const Var<Scalar>& x, const Var<Scalar>& weights) {
  const Shape& xs = x.shape();
  const Shape& ws = weights.shape();
  if (xs.size() != 3 || ws.size() != 3) throw ShapeError("separate_fc: expected N x H x Din input and H x Din x Dout weights");
  if (xs[1] != ws[0])
    throw ShapeError("separate_fc: " + std::to_string(xs[1]) + " strips but " + std::to_string(ws[0]) + " weight matrices");
  if (xs[2] != ws[1]) throw ShapeError("separate_fc: feature width mismatch " + shape_string(xs) + " vs " + shape_string(ws));
  const Index n = xs[0], strips = xs[1], din = xs[2], dout = ws[2];
  using Strided = Eigen::Map<RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
  using ConstStrided = Eigen::Map<const RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
  Tensor<Scalar> out(Shape{n, strips, dout});
  for (Index h = 0; h < strips; ++h) {
    ConstStrided xh(x.value().data() + h * din, n, din, Eigen::OuterStride<>(strips * din));
    Eigen::Map<const RowMatrix<Scalar>> wh(weights.value().data() + h * din * dout, din, dout);
    Strided(out.data() + h * dout, n, dout, Eigen::OuterStride<>(strips * dout)).noalias() = xh * wh;
  }
  const std::size_t xid = x.id(), wid = weights.id();
  return x.tape().record(std::move(out), {x, weights}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    const bool gx = t.requires_grad(xid), gw = t.requires_grad(wid);
    Scalar* dx = gx ? t.grad_buffer(xid).data() : nullptr;
    Scalar* dw = gw ? t.grad_buffer(wid).data() : nullptr;
    for (Index h = 0; h < strips; ++h) {
      ConstStrided gh(g.data() + h * dout, n, dout, Eigen::OuterStride<>(strips * dout));
      if (gx) {
        Eigen::Map<const RowMatrix<Scalar>> wh(t.value(wid).data() + h * din * dout, din, dout);
        Strided(dx + h * din, n, din, Eigen::OuterStride<>(strips * din)).noalias() += gh * wh.transpose();
      }
      if (gw) {
        ConstStrided xh(t.value(xid).data() + h * din, n, din, Eigen::OuterStride<>(strips * din));
        Eigen::Map<RowMatrix<Scalar>>(dw + h * din * dout, din, dout).noalias() += xh.transpose() * gh;
      }
    }
  });
}

/// temporal_max -> gem_pool(p) -> separate_fc, plus per-strip logits when a classifier is present.
template <typename Scalar>
HeadOutput<Scalar> head_forward(const Var<Scalar>& x, const HeadConfig& cfg, const HeadParams<Scalar>& params) {
  cfg.validate();
  const Volume v = Volume::of(x.shape(), "head_forward");
  if (v.h != cfg.strips)
    throw ShapeError("head_forward: configured for " + std::to_string(cfg.strips) + " strips, input height is " +
                     std::to_string(v.h));
  auto strips = strip_features(gem_pool(temporal_max(x), cfg.p));
  HeadOutput<Scalar> out{separate_fc(strips, params.fc), std::nullopt};
  if (cfg.class_count > 0) {
    if (!params.classifier) throw ConfigError("head_forward: class_count set but no classifier weights");
    out.logits = separate_fc(out.embeddings, *params.classifier);
  }
  return out;
}

}  // namespace gaitasms
