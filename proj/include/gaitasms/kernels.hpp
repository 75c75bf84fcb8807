#pragma once

// Raw (non-differentiable) kernels over batched C x T x H x W volumes.

#include "gaitasms/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <string>
#include <utility>

namespace gaitasms {

struct Triple {
  Index t = 1, h = 1, w = 1;
  friend bool operator==(const Triple&, const Triple&) = default;
};

struct ConvSpec {
  Triple kernel{1, 1, 1};
  Triple stride{1, 1, 1};
  Triple dilation{1, 1, 1};
  Triple padding{0, 0, 0};

  Index taps() const { return kernel.t * kernel.h * kernel.w; }

  /// Cube kernel k x k x k with "same" padding (k odd).
  static ConvSpec same(Index k) { return ConvSpec{{k, k, k}, {1, 1, 1}, {1, 1, 1}, {(k - 1) / 2, (k - 1) / 2, (k - 1) / 2}}; }

  /// Temporal-only kernel kt x 1 x 1 with dilation on time and T-preserving padding.
  static ConvSpec temporal(Index kt, Index dilation) {
    return ConvSpec{{kt, 1, 1}, {1, 1, 1}, {dilation, 1, 1}, {dilation * (kt - 1) / 2, 0, 0}};
  }
};

/// floor((in + 2p - d(k-1) - 1)/s) + 1, or a ConfigError when that is < 1.
inline Index conv_out_extent(Index in, Index k, Index s, Index d, Index p, const char* axis) {
  if (k < 1 || s < 1 || d < 1 || p < 0)
    throw ConfigError(std::string("invalid kernel/stride/dilation/padding on axis ") + axis);
  const Index span = in + 2 * p - d * (k - 1) - 1;
  if (span < 0)
    throw ConfigError(std::string("zero-size output on axis ") + axis + " (input extent " + std::to_string(in) +
                      ", kernel " + std::to_string(k) + ", dilation " + std::to_string(d) + ")");
  return span / s + 1;
}

/// Batched view of a rank-4 (C,T,H,W) or rank-5 (N,C,T,H,W) shape.
struct Volume {
  Index n = 1, c = 1, t = 1, h = 1, w = 1;

  static Volume of(const Shape& s, const char* op) {
    if (s.size() == 4) return Volume{1, s[0], s[1], s[2], s[3]};
    if (s.size() == 5) return Volume{s[0], s[1], s[2], s[3], s[4]};
    throw ShapeError(std::string(op) + ": expected C x T x H x W or N x C x T x H x W, got " + shape_string(s));
  }

  Index plane() const { return t * h * w; }
  Index sample() const { return c * plane(); }

  /// Shape with the same rank as `like`.
  Shape shape_like(const Shape& like) const {
    if (like.size() == 4) return Shape{c, t, h, w};
    return Shape{n, c, t, h, w};
  }

  Volume output(const ConvSpec& spec, Index channels) const {
    return Volume{n, channels,
                  conv_out_extent(t, spec.kernel.t, spec.stride.t, spec.dilation.t, spec.padding.t, "T"),
                  conv_out_extent(h, spec.kernel.h, spec.stride.h, spec.dilation.h, spec.padding.h, "H"),
                  conv_out_extent(w, spec.kernel.w, spec.stride.w, spec.dilation.w, spec.padding.w, "W")};
  }
};

namespace kernels {

/// Output columns [lo, hi) whose source index ow * stride - offset lies inside [0, extent).
inline std::pair<Index, Index> valid_span(Index out_extent, Index stride, Index offset, Index extent) {
  const Index lo = offset > 0 ? (offset + stride - 1) / stride : 0;
  const Index last = extent - 1 + offset;
  const Index hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
  return {std::min(lo, out_extent), std::max(hi, std::min(lo, out_extent))};
}

/// Unfolds one sample (C x T x H x W) into a (C * taps) x (T' * H' * W') matrix.
template <typename Scalar>
void im2col(const Scalar* x, const Volume& in, const Volume& out, const ConvSpec& sp, Scalar* col) {
  const Index cols = out.plane();
  const Index row_len = out.h * out.w;
  const bool planar = sp.kernel.h == 1 && sp.kernel.w == 1 && sp.padding.h == 0 && sp.padding.w == 0 &&
                      sp.stride.h == 1 && sp.stride.w == 1 && in.h == out.h && in.w == out.w;
  Scalar* row = col;
  for (Index c = 0; c < in.c; ++c) {
    const Scalar* xc = x + c * in.plane();
    for (Index kt = 0; kt < sp.kernel.t; ++kt)
      for (Index kh = 0; kh < sp.kernel.h; ++kh)
        for (Index kw = 0; kw < sp.kernel.w; ++kw) {
          Scalar* dst = row;
          const Index w0 = sp.padding.w - kw * sp.dilation.w;
          const auto [lo, hi] = valid_span(out.w, sp.stride.w, w0, in.w);
          for (Index ot = 0; ot < out.t; ++ot, dst += row_len) {
            const Index it = ot * sp.stride.t - sp.padding.t + kt * sp.dilation.t;
            if (it < 0 || it >= in.t) {
              std::fill(dst, dst + row_len, Scalar(0));
              continue;
            }
            if (planar) {
              std::copy(xc + it * row_len, xc + (it + 1) * row_len, dst);
              continue;
            }
            for (Index oh = 0; oh < out.h; ++oh) {
              Scalar* d = dst + oh * out.w;
              const Index ih = oh * sp.stride.h - sp.padding.h + kh * sp.dilation.h;
              if (ih < 0 || ih >= in.h) {
                std::fill(d, d + out.w, Scalar(0));
                continue;
              }
              const Scalar* src = xc + (it * in.h + ih) * in.w;
              std::fill(d, d + lo, Scalar(0));
              if (sp.stride.w == 1) {
                std::copy(src + lo - w0, src + hi - w0, d + lo);
              } else {
                for (Index ow = lo; ow < hi; ++ow) d[ow] = src[ow * sp.stride.w - w0];
              }
              std::fill(d + hi, d + out.w, Scalar(0));
            }
          }
          row += cols;
        }
  }
}

/// Adjoint of im2col: scatters-and-adds a column matrix back into a sample.
template <typename Scalar>
void col2im_add(const Scalar* col, const Volume& in, const Volume& out, const ConvSpec& sp, Scalar* x) {
  using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const Index cols = out.plane();
  const Index row_len = out.h * out.w;
  const bool planar = sp.kernel.h == 1 && sp.kernel.w == 1 && sp.padding.h == 0 && sp.padding.w == 0 &&
                      sp.stride.h == 1 && sp.stride.w == 1 && in.h == out.h && in.w == out.w;
  const Scalar* row = col;
  for (Index c = 0; c < in.c; ++c) {
    Scalar* xc = x + c * in.plane();
    for (Index kt = 0; kt < sp.kernel.t; ++kt)
      for (Index kh = 0; kh < sp.kernel.h; ++kh)
        for (Index kw = 0; kw < sp.kernel.w; ++kw) {
          const Scalar* src = row;
          const Index w0 = sp.padding.w - kw * sp.dilation.w;
          const auto [lo, hi] = valid_span(out.w, sp.stride.w, w0, in.w);
          for (Index ot = 0; ot < out.t; ++ot, src += row_len) {
            const Index it = ot * sp.stride.t - sp.padding.t + kt * sp.dilation.t;
            if (it < 0 || it >= in.t) continue;
            if (planar) {
              Eigen::Map<Vec>(xc + it * row_len, row_len) += Eigen::Map<const Vec>(src, row_len);
              continue;
            }
            for (Index oh = 0; oh < out.h; ++oh) {
              const Index ih = oh * sp.stride.h - sp.padding.h + kh * sp.dilation.h;
              if (ih < 0 || ih >= in.h || hi <= lo) continue;
              Scalar* dst = xc + (it * in.h + ih) * in.w;
              const Scalar* s = src + oh * out.w;
              if (sp.stride.w == 1) {
                Eigen::Map<Vec>(dst + lo - w0, hi - lo) += Eigen::Map<const Vec>(s + lo, hi - lo);
              } else {
                for (Index ow = lo; ow < hi; ++ow) dst[ow * sp.stride.w - w0] += s[ow];
              }
            }
          }
          row += cols;
        }
  }
}

inline void check_pool_spec(const ConvSpec& sp) {
  if (2 * sp.padding.t > sp.kernel.t || 2 * sp.padding.h > sp.kernel.h || 2 * sp.padding.w > sp.kernel.w)
    throw ConfigError("pooling padding must not exceed half the window");
}

/// Max pooling; `argmax` receives the in-plane source offset of every output cell.
template <typename Scalar>
void max_pool(const Scalar* x, const Volume& in, const Volume& out, const ConvSpec& sp, Scalar* y, Index* argmax) {
  for (Index nc = 0; nc < in.n * in.c; ++nc) {
    const Scalar* xp = x + nc * in.plane();
    Scalar* yp = y + nc * out.plane();
    Index* ap = argmax + nc * out.plane();
    for (Index ot = 0; ot < out.t; ++ot)
      for (Index oh = 0; oh < out.h; ++oh)
        for (Index ow = 0; ow < out.w; ++ow) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Index where = -1;
          for (Index kt = 0; kt < sp.kernel.t; ++kt) {
            const Index it = ot * sp.stride.t - sp.padding.t + kt * sp.dilation.t;
            if (it < 0 || it >= in.t) continue;
            for (Index kh = 0; kh < sp.kernel.h; ++kh) {
              const Index ih = oh * sp.stride.h - sp.padding.h + kh * sp.dilation.h;
              if (ih < 0 || ih >= in.h) continue;
              for (Index kw = 0; kw < sp.kernel.w; ++kw) {
                const Index iw = ow * sp.stride.w - sp.padding.w + kw * sp.dilation.w;
                if (iw < 0 || iw >= in.w) continue;
                const Index off = (it * in.h + ih) * in.w + iw;
                if (where < 0 || xp[off] > best) {
                  best = xp[off];
                  where = off;
                }
              }
            }
          }
          const Index o = (ot * out.h + oh) * out.w + ow;
          yp[o] = best;
          ap[o] = where;
        }
  }
}

/// Average pooling; padded cells are excluded from the denominator. `counts`
/// (one plane) receives the number of real cells per window.
template <typename Scalar>
void avg_pool(const Scalar* x, const Volume& in, const Volume& out, const ConvSpec& sp, Scalar* y, Index* counts) {
  for (Index nc = 0; nc < in.n * in.c; ++nc) {
    const Scalar* xp = x + nc * in.plane();
    Scalar* yp = y + nc * out.plane();
    for (Index ot = 0; ot < out.t; ++ot)
      for (Index oh = 0; oh < out.h; ++oh)
        for (Index ow = 0; ow < out.w; ++ow) {
          double acc = 0;
          Index count = 0;
          for (Index kt = 0; kt < sp.kernel.t; ++kt) {
            const Index it = ot * sp.stride.t - sp.padding.t + kt * sp.dilation.t;
            if (it < 0 || it >= in.t) continue;
            for (Index kh = 0; kh < sp.kernel.h; ++kh) {
              const Index ih = oh * sp.stride.h - sp.padding.h + kh * sp.dilation.h;
              if (ih < 0 || ih >= in.h) continue;
              for (Index kw = 0; kw < sp.kernel.w; ++kw) {
                const Index iw = ow * sp.stride.w - sp.padding.w + kw * sp.dilation.w;
                if (iw < 0 || iw >= in.w) continue;
                acc += static_cast<double>(xp[(it * in.h + ih) * in.w + iw]);
                ++count;
              }
            }
          }
          const Index o = (ot * out.h + oh) * out.w + ow;
          yp[o] = static_cast<Scalar>(acc / static_cast<double>(count));
          if (nc == 0) counts[o] = count;
        }
  }
}

template <typename Scalar>
void avg_pool_backward(const Scalar* gy, const Volume& in, const Volume& out, const ConvSpec& sp,
                       const Index* counts, Scalar* gx) {
  for (Index nc = 0; nc < in.n * in.c; ++nc) {
    const Scalar* gp = gy + nc * out.plane();
    Scalar* xp = gx + nc * in.plane();
    for (Index ot = 0; ot < out.t; ++ot)
      for (Index oh = 0; oh < out.h; ++oh)
        for (Index ow = 0; ow < out.w; ++ow) {
          const Index o = (ot * out.h + oh) * out.w + ow;
          const Scalar share = gp[o] / static_cast<Scalar>(counts[o]);
          for (Index kt = 0; kt < sp.kernel.t; ++kt) {
            const Index it = ot * sp.stride.t - sp.padding.t + kt * sp.dilation.t;
            if (it < 0 || it >= in.t) continue;
            for (Index kh = 0; kh < sp.kernel.h; ++kh) {
              const Index ih = oh * sp.stride.h - sp.padding.h + kh * sp.dilation.h;
              if (ih < 0 || ih >= in.h) continue;
              for (Index kw = 0; kw < sp.kernel.w; ++kw) {
                const Index iw = ow * sp.stride.w - sp.padding.w + kw * sp.dilation.w;
                if (iw < 0 || iw >= in.w) continue;
                xp[(it * in.h + ih) * in.w + iw] += share;
              }
            }
          }
        }
  }
}

}  // namespace kernels
}  // namespace gaitasms
