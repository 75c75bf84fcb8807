#pragma once

// Differentiable operations on tape variables.

#include "gaitasms/kernels.hpp"
#include "gaitasms/parallel.hpp"
#include "gaitasms/tape.hpp"

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <optional>
#include <type_traits>
#include <vector>

namespace gaitasms {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Convolution

/// Dilated 3-D cross-correlation. x: [N x] Cin x T x H x W, weight: Cout x Cin x kt x kh x kw.
template <typename Scalar>
Var<Scalar> conv3d(const Var<Scalar>& x, const Var<Scalar>& weight, const std::type_identity_t<std::optional<Var<Scalar>>>& bias,
                   const ConvSpec& spec) {
  const Volume in = Volume::of(x.shape(), "conv3d");
  const Shape& ws = weight.shape();
  if (ws.size() != 5) throw ShapeError("conv3d: weight must be Cout x Cin x kt x kh x kw, got " + shape_string(ws));
  if (ws[1] != in.c)
    throw ShapeError("conv3d: weight expects " + std::to_string(ws[1]) + " input channels, input has " +
                     std::to_string(in.c));
  if (ws[2] != spec.kernel.t || ws[3] != spec.kernel.h || ws[4] != spec.kernel.w)
    throw ShapeError("conv3d: weight kernel " + shape_string(ws) + " disagrees with the conv spec");
  const Index cout = ws[0];
  if (bias && (bias->value().rank() != 1 || bias->value().size() != cout))
    throw ShapeError("conv3d: bias must have " + std::to_string(cout) + " entries");
  const Volume out = in.output(spec, cout);
  const Index rows = in.c * spec.taps();
  const bool pointwise = spec.taps() == 1 && spec.stride == Triple{1, 1, 1} && spec.padding == Triple{0, 0, 0};

  auto y = Tensor<Scalar>::uninitialized(out.shape_like(x.shape()));
  {
    const Scalar* xd = x.value().data();
    const Scalar* bd = bias ? bias->value().data() : nullptr;
    Eigen::Map<const RowMatrix<Scalar>> w(weight.value().data(), cout, rows);
    Scalar* yd = y.data();
    parallel_for(in.n, [&](Index n) {
      Eigen::Map<RowMatrix<Scalar>> yn(yd + n * out.sample(), cout, out.plane());
      if (pointwise) {
        yn.noalias() = w * Eigen::Map<const RowMatrix<Scalar>>(xd + n * in.sample(), rows, out.plane());
      } else {
        RowMatrix<Scalar> col(rows, out.plane());
        kernels::im2col(xd + n * in.sample(), in, out, spec, col.data());
        yn.noalias() = w * col;
      }
      if (bd) yn.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bd, cout);
    });
  }

  const bool needs = x.requires_grad() || weight.requires_grad() || (bias && bias->requires_grad());
  const std::size_t xid = x.id(), wid = weight.id();
  const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
  return x.tape().record_if(std::move(y), needs, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
    const bool gx_needed = t.requires_grad(xid);
    const bool gw_needed = t.requires_grad(wid);
    const bool gb_needed = bid && t.requires_grad(*bid);
    const Scalar* xd = t.value(xid).data();
    Eigen::Map<const RowMatrix<Scalar>> w(t.value(wid).data(), cout, rows);
    Scalar* gxd = gx_needed ? t.grad_buffer(xid).data() : nullptr;
    std::vector<RowMatrix<Scalar>> gw_parts(gw_needed ? static_cast<std::size_t>(in.n) : 0);
    std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> gb_parts(gb_needed ? static_cast<std::size_t>(in.n) : 0);
    parallel_for(in.n, [&](Index n) {
      Eigen::Map<const RowMatrix<Scalar>> g(gy.data() + n * out.sample(), cout, out.plane());
      if (gb_needed) gb_parts[static_cast<std::size_t>(n)] = g.rowwise().sum();
      if (pointwise) {
        Eigen::Map<const RowMatrix<Scalar>> col(xd + n * in.sample(), rows, out.plane());
        if (gw_needed) gw_parts[static_cast<std::size_t>(n)].noalias() = g * col.transpose();
        if (gx_needed) Eigen::Map<RowMatrix<Scalar>>(gxd + n * in.sample(), rows, out.plane()).noalias() += w.transpose() * g;
        return;
      }
      RowMatrix<Scalar> col(rows, out.plane());
      if (gw_needed) {
        kernels::im2col(xd + n * in.sample(), in, out, spec, col.data());
        gw_parts[static_cast<std::size_t>(n)].noalias() = g * col.transpose();
      }
      if (gx_needed) {
        col.noalias() = w.transpose() * g;
        kernels::col2im_add(col.data(), in, out, spec, gxd + n * in.sample());
      }
    });
    if (gw_needed) {
      RowMatrix<Scalar> total = gw_parts[0];
      for (std::size_t n = 1; n < gw_parts.size(); ++n) total += gw_parts[n];
      t.accumulate(wid, Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(total.data(), total.size()));
    }
    if (gb_needed) {
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> total = gb_parts[0];
      for (std::size_t n = 1; n < gb_parts.size(); ++n) total += gb_parts[n];
      t.accumulate(*bid, total.array());
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling

inline ConvSpec pool_spec(Triple kernel, Triple stride, Triple padding) {
  return ConvSpec{kernel, stride, {1, 1, 1}, padding};
}

/// Max pooling; padded cells are never selected.
template <typename Scalar>
Var<Scalar> max_pool3d(const Var<Scalar>& x, Triple kernel, Triple stride, Triple padding = {0, 0, 0}) {
  const ConvSpec sp = pool_spec(kernel, stride, padding);
  kernels::check_pool_spec(sp);
  const Volume in = Volume::of(x.shape(), "max_pool3d");
  const Volume out = in.output(sp, in.c);
  auto y = Tensor<Scalar>::uninitialized(out.shape_like(x.shape()));
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(y.size()));
  kernels::max_pool(x.value().data(), in, out, sp, y.data(), argmax->data());
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {x}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
    Scalar* gx = t.grad_buffer(xid).data();
    const Index* am = argmax->data();
    for (Index nc = 0; nc < in.n * in.c; ++nc)
      for (Index o = 0; o < out.plane(); ++o) {
        const Index k = nc * out.plane() + o;
        gx[nc * in.plane() + am[k]] += gy[k];
      }
  });
}

/// Average pooling with padding excluded from the denominator.
template <typename Scalar>
Var<Scalar> avg_pool3d(const Var<Scalar>& x, Triple kernel, Triple stride, Triple padding = {0, 0, 0}) {
  const ConvSpec sp = pool_spec(kernel, stride, padding);
  kernels::check_pool_spec(sp);
  const Volume in = Volume::of(x.shape(), "avg_pool3d");
  const Volume out = in.output(sp, in.c);
  auto y = Tensor<Scalar>::uninitialized(out.shape_like(x.shape()));
  auto counts = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.plane()));
  kernels::avg_pool(x.value().data(), in, out, sp, y.data(), counts->data());
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {x}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& gy) {
    kernels::avg_pool_backward(gy.data(), in, out, sp, counts->data(), t.grad_buffer(xid).data());
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  auto y = Tensor<Scalar>::uninitialized(x.shape());
  y.array() = Scalar(1) / (Scalar(1) + (-x.value().array()).exp());
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {x}, [=](Tape<Scalar>& t, const Tensor<Scalar>& y, const Tensor<Scalar>& g) {
    t.accumulate(xid, g.array() * y.array() * (Scalar(1) - y.array()));
  });
}

template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& x, Scalar slope) {
  auto y = Tensor<Scalar>::uninitialized(x.shape());
  const auto& xa = x.value().array();
  y.array() = (xa > Scalar(0)).select(xa, slope * xa);
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {x}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    const auto& xa = t.value(xid).array();
    t.accumulate(xid, (xa > Scalar(0)).select(g.array(), slope * g.array()));
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  return leaky_relu(x, Scalar(0));
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.value(), b.value(), "add");
  auto y = Tensor<Scalar>::uninitialized(a.shape());
  y.array() = a.value().array() + b.value().array();
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {a, b}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    t.accumulate(ai, g.array());
    t.accumulate(bi, g.array());
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  auto y = Tensor<Scalar>::uninitialized(a.shape());
  y.array() = a.value().array() - b.value().array();
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {a, b}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    t.accumulate(ai, g.array());
    t.accumulate(bi, -g.array());
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  auto y = Tensor<Scalar>::uninitialized(a.shape());
  y.array() = a.value().array() * b.value().array();
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(y), {a, b}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    if (t.requires_grad(ai)) t.accumulate(ai, g.array() * t.value(bi).array());
    if (t.requires_grad(bi)) t.accumulate(bi, g.array() * t.value(ai).array());
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar s) {
  auto y = Tensor<Scalar>::uninitialized(x.shape());
  y.array() = s * x.value().array();
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {x}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    t.accumulate(xid, s * g.array());
  });
}

/// x^p elementwise for p > 0 (x is expected nonnegative for fractional p).
template <typename Scalar>
Var<Scalar> power(const Var<Scalar>& x, Scalar p) {
  if (!(p > Scalar(0))) throw ConfigError("power: exponent must be positive");
  auto y = Tensor<Scalar>::uninitialized(x.shape());
  y.array() = x.value().array().pow(p);
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {x}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    t.accumulate(xid, g.array() * p * t.value(xid).array().pow(p - Scalar(1)));
  });
}

// ---------------------------------------------------------------------------
// Reductions and layout

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Tensor<Scalar> y(Shape{1});
  y[0] = static_cast<Scalar>(x.value().array().template cast<double>().sum());
  const std::size_t xid = x.id();
  const Shape xs = x.shape();
  return x.tape().record(std::move(y), {x}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    t.accumulate(xid, Tensor<Scalar>::Array::Constant(shape_size(xs), g[0]));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.value().size()));
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  Tensor<Scalar> y = x.value().reshaped(std::move(shape));
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {x}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    t.accumulate(xid, g.array());
  });
}

namespace detail {
inline void outer_inner(const Shape& s, Index axis, Index& outer, Index& inner) {
  outer = 1;
  inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < static_cast<Index>(s.size()); ++i) inner *= s[static_cast<std::size_t>(i)];
}
}  // namespace detail

/// Concatenates along `axis`; all other extents must agree.
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Shape shape = parts[0].shape();
  if (axis < 0) axis += static_cast<Index>(shape.size());
  if (axis < 0 || axis >= static_cast<Index>(shape.size())) throw ShapeError("concat: axis out of range");
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    s[static_cast<std::size_t>(axis)] = shape[static_cast<std::size_t>(axis)];
    if (s != shape) throw ShapeError("concat: shape mismatch " + shape_string(p.shape()) + " vs " + shape_string(shape));
    widths.push_back(p.shape()[static_cast<std::size_t>(axis)]);
    total += widths.back();
  }
  shape[static_cast<std::size_t>(axis)] = total;
  Index outer = 0, inner = 0;
  detail::outer_inner(shape, axis, outer, inner);
  Tensor<Scalar> y(shape);
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Scalar* src = parts[k].value().data();
    const Index block = widths[k] * inner;
    for (Index o = 0; o < outer; ++o)
      std::copy(src + o * block, src + (o + 1) * block, y.data() + o * total * inner + offset * inner);
    offset += widths[k];
  }
  std::vector<std::size_t> ids;
  bool needs = false;
  for (const auto& p : parts) {
    ids.push_back(p.id());
    needs = needs || p.requires_grad();
  }
  return parts[0].tape().record_if(std::move(y), needs, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const Index block = widths[k] * inner;
      if (t.requires_grad(ids[k])) {
        Scalar* dst = t.grad_buffer(ids[k]).data();
        for (Index o = 0; o < outer; ++o)
          for (Index i = 0; i < block; ++i) dst[o * block + i] += g[o * total * inner + off * inner + i];
      }
      off += widths[k];
    }
  });
}

/// Half-open slice [begin, end) along `axis`.
template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& x, Index axis, Index begin, Index end) {
  Shape shape = x.shape();
  if (axis < 0) axis += static_cast<Index>(shape.size());
  if (axis < 0 || axis >= static_cast<Index>(shape.size())) throw ShapeError("slice: axis out of range");
  const Index full = shape[static_cast<std::size_t>(axis)];
  if (begin < 0 || end > full || begin >= end) throw ShapeError("slice: bad range on " + shape_string(shape));
  shape[static_cast<std::size_t>(axis)] = end - begin;
  Index outer = 0, inner = 0;
  detail::outer_inner(shape, axis, outer, inner);
  const Index block = (end - begin) * inner;
  Tensor<Scalar> y(shape);
  const Scalar* src = x.value().data();
  for (Index o = 0; o < outer; ++o)
    std::copy(src + o * full * inner + begin * inner, src + o * full * inner + end * inner, y.data() + o * block);
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {x}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    Scalar* dst = t.grad_buffer(xid).data();
    for (Index o = 0; o < outer; ++o)
      for (Index i = 0; i < block; ++i) dst[o * full * inner + begin * inner + i] += g[o * block + i];
  });
}

// ---------------------------------------------------------------------------
// Dense layers

/// x: N x Din, weight: Din x Dout, bias: Dout.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const std::type_identity_t<std::optional<Var<Scalar>>>& bias = std::nullopt) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0])
    throw ShapeError("linear: incompatible shapes " + shape_string(xs) + " and " + shape_string(ws));
  if (bias && bias->value().size() != ws[1]) throw ShapeError("linear: bias length mismatch");
  const Index n = xs[0], din = ws[0], dout = ws[1];
  Tensor<Scalar> y(Shape{n, dout});
  Eigen::Map<RowMatrix<Scalar>> ym(y.data(), n, dout);
  ym.noalias() = Eigen::Map<const RowMatrix<Scalar>>(x.value().data(), n, din) *
                 Eigen::Map<const RowMatrix<Scalar>>(weight.value().data(), din, dout);
  if (bias) ym.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias->value().data(), dout);
  const std::size_t xid = x.id(), wid = weight.id();
  const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
  const bool needs = x.requires_grad() || weight.requires_grad() || (bias && bias->requires_grad());
  return x.tape().record_if(std::move(y), needs, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    Eigen::Map<const RowMatrix<Scalar>> gm(g.data(), n, dout);
    if (t.requires_grad(xid)) {
      RowMatrix<Scalar> gx = gm * Eigen::Map<const RowMatrix<Scalar>>(t.value(wid).data(), din, dout).transpose();
      t.accumulate(xid, Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(gx.data(), gx.size()));
    }
    if (t.requires_grad(wid)) {
      RowMatrix<Scalar> gw = Eigen::Map<const RowMatrix<Scalar>>(t.value(xid).data(), n, din).transpose() * gm;
      t.accumulate(wid, Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(gw.data(), gw.size()));
    }
    if (bid && t.requires_grad(*bid)) {
      Eigen::Matrix<Scalar, 1, Eigen::Dynamic> gb = gm.colwise().sum();
      t.accumulate(*bid, gb.transpose().array());
    }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization

/// Running statistics owned by the parameter store; updated in training mode.
template <typename Scalar>
struct BatchNormStats {
  Tensor<Scalar>* mean = nullptr;
  Tensor<Scalar>* var = nullptr;
};

struct BatchNormOptions {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

/// Per-channel normalization over every axis except channel (axis 0 for
/// rank-4 input, axis 1 for rank-5). Training mode uses batch statistics and
/// updates the running estimates.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       BatchNormStats<Scalar> stats, bool training, BatchNormOptions opt = {}) {
  const Volume v = Volume::of(x.shape(), "batch_norm");
  if (gamma.value().size() != v.c || beta.value().size() != v.c)
    throw ShapeError("batch_norm: gamma/beta must have one entry per channel");
  if (!stats.mean || !stats.var || stats.mean->size() != v.c || stats.var->size() != v.c)
    throw ShapeError("batch_norm: running statistics must have one entry per channel");
  const Index count = v.n * v.plane();
  const Scalar* xd = x.value().data();
  auto shift = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(v.c));
  auto inv_std = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(v.c));
  for (Index c = 0; c < v.c; ++c) {
    double mu = 0, var = 0;
    if (training) {
      for (Index n = 0; n < v.n; ++n) {
        const Scalar* p = xd + n * v.sample() + c * v.plane();
        for (Index i = 0; i < v.plane(); ++i) mu += static_cast<double>(p[i]);
      }
      mu /= static_cast<double>(count);
      for (Index n = 0; n < v.n; ++n) {
        const Scalar* p = xd + n * v.sample() + c * v.plane();
        for (Index i = 0; i < v.plane(); ++i) {
          const double d = static_cast<double>(p[i]) - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      Scalar& rm = (*stats.mean)[c];
      Scalar& rv = (*stats.var)[c];
      rm = static_cast<Scalar>((1.0 - opt.momentum) * static_cast<double>(rm) + opt.momentum * mu);
      rv = static_cast<Scalar>((1.0 - opt.momentum) * static_cast<double>(rv) + opt.momentum * unbiased);
    } else {
      mu = static_cast<double>((*stats.mean)[c]);
      var = static_cast<double>((*stats.var)[c]);
    }
    (*shift)[static_cast<std::size_t>(c)] = static_cast<Scalar>(mu);
    (*inv_std)[static_cast<std::size_t>(c)] = static_cast<Scalar>(1.0 / std::sqrt(var + opt.epsilon));
  }
  auto y = Tensor<Scalar>::uninitialized(x.shape());
  for (Index n = 0; n < v.n; ++n)
    for (Index c = 0; c < v.c; ++c) {
      const Index off = n * v.sample() + c * v.plane();
      const Scalar a = gamma.value()[c] * (*inv_std)[static_cast<std::size_t>(c)];
      const Scalar b = beta.value()[c] - a * (*shift)[static_cast<std::size_t>(c)];
      y.array().segment(off, v.plane()) = a * x.value().array().segment(off, v.plane()) + b;
    }
  const std::size_t xid = x.id(), gid = gamma.id(), bid = beta.id();
  return x.tape().record(std::move(y), {x, gamma, beta}, [=](Tape<Scalar>& t, const Tensor<Scalar>&, const Tensor<Scalar>& g) {
    const Scalar* xd = t.value(xid).data();
    const Scalar* gd = g.data();
    Tensor<Scalar> dgamma(Shape{v.c}), dbeta(Shape{v.c});
    Scalar* gx = t.requires_grad(xid) ? t.grad_buffer(xid).data() : nullptr;
    for (Index c = 0; c < v.c; ++c) {
      const Scalar mu = (*shift)[static_cast<std::size_t>(c)];
      const Scalar is = (*inv_std)[static_cast<std::size_t>(c)];
      double sum_g = 0, sum_gx = 0;
      for (Index n = 0; n < v.n; ++n) {
        const Index off = n * v.sample() + c * v.plane();
        for (Index i = 0; i < v.plane(); ++i) {
          sum_g += static_cast<double>(gd[off + i]);
          sum_gx += static_cast<double>(gd[off + i]) * static_cast<double>((xd[off + i] - mu) * is);
        }
      }
      dgamma[c] = static_cast<Scalar>(sum_gx);
      dbeta[c] = static_cast<Scalar>(sum_g);
      if (!gx) continue;
      const Scalar gam = t.value(gid)[c];
      if (training) {
        const Scalar mg = static_cast<Scalar>(sum_g / static_cast<double>(count));
        const Scalar mgx = static_cast<Scalar>(sum_gx / static_cast<double>(count));
        for (Index n = 0; n < v.n; ++n) {
          const Index off = n * v.sample() + c * v.plane();
          for (Index i = 0; i < v.plane(); ++i) {
            const Scalar xhat = (xd[off + i] - mu) * is;
            gx[off + i] += gam * is * (gd[off + i] - mg - xhat * mgx);
          }
        }
      } else {
        for (Index n = 0; n < v.n; ++n) {
          const Index off = n * v.sample() + c * v.plane();
          for (Index i = 0; i < v.plane(); ++i) gx[off + i] += gam * is * gd[off + i];
        }
      }
    }
    t.accumulate(gid, dgamma.array());
    t.accumulate(bid, dbeta.array());
  });
}

}  // namespace gaitasms
