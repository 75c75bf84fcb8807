#pragma once

// Full network: ASRE(Add) -> spatial max-pool (1,2,2) -> ASRE(CatH) ->
// DCB(d1) -> DCB(d2) -> head, plus the named parameter store it reads from.

#include "gaitasms/asre.hpp"
#include "gaitasms/data.hpp"
#include "gaitasms/head.hpp"
#include "gaitasms/msta.hpp"

#include <array>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace gaitasms {

struct ModelConfig {
  FrameSize input{64, 44};
  std::array<Index, 4> channels{64, 128, 256, 256};
  double threshold = 0.5;
  BranchActivation activation = BranchActivation::LeakyRelu;
  double leaky_slope = 0.01;
  Index kernel = 3;
  Index dilation1 = 2;
  Index dilation2 = 4;
  Index temporal_kernel = 3;
  double p = 6.5;
  Index embed_dim = 128;
  Index class_count = 0;

  /// CatH doubles the pooled height back, so one strip per input row.
  Index strips() const { return input.height; }

  AsreConfig asre1() const {
    return AsreConfig{1, channels[0], kernel, threshold, Fusion::Add, activation, leaky_slope};
  }
  AsreConfig asre2() const {
    return AsreConfig{channels[0], channels[1], kernel, threshold, Fusion::CatH, activation, leaky_slope};
  }
  DcbConfig dcb1() const { return DcbConfig{channels[1], channels[2], dilation1, temporal_kernel}; }
  DcbConfig dcb2() const { return DcbConfig{channels[2], channels[3], dilation2, temporal_kernel}; }
  HeadConfig head() const { return HeadConfig{p, strips(), embed_dim, class_count}; }

  /// Checks the whole shape chain up front.
  void validate() const {
    if (input.height < 2 || input.width < 2 || input.height % 2 || input.width % 2)
      throw ConfigError("model: input height and width must be even and at least 2, got " +
                        std::to_string(input.height) + "x" + std::to_string(input.width));
    for (Index c : channels)
      if (c < 1) throw ConfigError("model: channel counts must be positive");
    if (embed_dim < 1) throw ConfigError("model: embed_dim must be positive");
    if (class_count < 0) throw ConfigError("model: class_count must be non-negative");
    asre1().validate();
    asre2().validate();
    dcb1().validate();
    dcb2().validate();
    head().validate();
  }

  /// Per-sample feature shape after each stage, C x H x W (T is preserved).
  std::vector<Shape> shape_chain() const {
    const Index h = input.height, w = input.width;
    return {Shape{1, h, w},
            Shape{channels[0], h, w},
            Shape{channels[0], h / 2, w / 2},
            Shape{channels[1], h, w / 2},
            Shape{channels[2], h, w / 2},
            Shape{channels[3], h, w / 2},
            Shape{strips(), embed_dim}};
  }
};

// ---------------------------------------------------------------------------
// Parameter store

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> value;
  bool trainable = true;
};

/// Ordered name -> tensor map. Entries are never removed or reallocated once
/// added, so BN statistics can be referenced by pointer while bound.
template <typename Scalar>
class ParamStore {
 public:
  Tensor<Scalar>& add(std::string name, Tensor<Scalar> value, bool trainable) {
    if (index_.count(name)) throw ConfigError("parameter store: duplicate name " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back(NamedTensor<Scalar>{std::move(name), std::move(value), trainable});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t position(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("parameter store: no tensor named " + name);
    return it->second;
  }
  Tensor<Scalar>& at(const std::string& name) { return entries_[position(name)].value; }
  const Tensor<Scalar>& at(const std::string& name) const { return entries_[position(name)].value; }

  std::vector<NamedTensor<Scalar>>& entries() { return entries_; }
  const std::vector<NamedTensor<Scalar>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.value.size();
    return n;
  }

  template <typename To>
  ParamStore<To> cast() const {
    ParamStore<To> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<To>(), e.trainable);
    return out;
  }

 private:
  std::vector<NamedTensor<Scalar>> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> xavier(const Shape& shape, Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(u(rng));
  return t;
}

template <typename Scalar>
void add_conv(ParamStore<Scalar>& store, const std::string& prefix, Index cout, Index cin, Triple k, bool bias,
              std::mt19937_64& rng) {
  const Index taps = k.t * k.h * k.w;
  store.add(prefix + ".weight", xavier<Scalar>(Shape{cout, cin, k.t, k.h, k.w}, cin * taps, cout * taps, rng), true);
  if (bias) store.add(prefix + ".bias", Tensor<Scalar>::zeros(Shape{cout}), true);
}

template <typename Scalar>
void add_dcb(ParamStore<Scalar>& store, const std::string& prefix, const DcbConfig& cfg, std::mt19937_64& rng) {
  Index cin = cfg.channels_in;
  for (Index l = 0; l < DcbConfig::layers_per_block; ++l) {
    const std::string p = prefix + "." + std::to_string(l);
    add_conv(store, p + ".conv", cfg.channels_out, cin, Triple{cfg.temporal_kernel, 1, 1}, true, rng);
    store.add(p + ".bn.gamma", Tensor<Scalar>::constant(Shape{cfg.channels_out}, Scalar(1)), true);
    store.add(p + ".bn.beta", Tensor<Scalar>::zeros(Shape{cfg.channels_out}), true);
    store.add(p + ".bn.running_mean", Tensor<Scalar>::zeros(Shape{cfg.channels_out}), false);
    store.add(p + ".bn.running_var", Tensor<Scalar>::constant(Shape{cfg.channels_out}, Scalar(1)), false);
    cin = cfg.channels_out;
  }
  if (cfg.needs_projection()) add_conv(store, prefix + ".proj", cfg.channels_out, cfg.channels_in, Triple{1, 1, 1}, false, rng);
}

}  // namespace detail

/// Xavier-uniform weights, zero biases, BN gamma 1 / beta 0, running stats (0, 1).
template <typename Scalar>
ParamStore<Scalar> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamStore<Scalar> store;
  const Triple k{cfg.kernel, cfg.kernel, cfg.kernel};
  for (const auto& [name, a] : {std::pair{std::string("asre1"), cfg.asre1()}, std::pair{std::string("asre2"), cfg.asre2()}}) {
    detail::add_conv(store, name + ".local", a.out_channels, a.in_channels, k, true, rng);
    detail::add_conv(store, name + ".global", a.out_channels, a.in_channels, k, true, rng);
  }
  detail::add_dcb(store, "dcb1", cfg.dcb1(), rng);
  detail::add_dcb(store, "dcb2", cfg.dcb2(), rng);
  const Index strips = cfg.strips(), c = cfg.channels[3], d = cfg.embed_dim;
  store.add("head.fc", detail::xavier<Scalar>(Shape{strips, c, d}, c, d, rng), true);
  if (cfg.class_count > 0)
    store.add("head.classifier", detail::xavier<Scalar>(Shape{strips, d, cfg.class_count}, d, cfg.class_count, rng), true);
  return store;
}

template <typename Scalar>
struct BoundModel {
  AsreParams<Scalar> asre1, asre2;
  DcbParams<Scalar> dcb1, dcb2;
  HeadParams<Scalar> head;
  /// Store position and tape handle of every trainable tensor, in store order.
  std::vector<std::pair<std::size_t, Var<Scalar>>> trainable;
};

/// Puts every store tensor on the tape. BN running statistics are referenced
/// in place so training-mode forwards update the store directly.
template <typename Scalar>
BoundModel<Scalar> bind_parameters(Tape<Scalar>& tape, ParamStore<Scalar>& store, bool requires_grad) {
  std::map<std::string, Var<Scalar>> vars;
  BoundModel<Scalar> m;
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store.entries()[i];
    if (!e.trainable) continue;
    auto v = tape.leaf(e.value, requires_grad);
    vars.emplace(e.name, v);
    m.trainable.emplace_back(i, v);
  }
  auto get = [&](const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end()) throw ConfigError("bind_parameters: missing tensor " + name);
    return it->second;
  };
  auto asre = [&](const std::string& p) {
    return AsreParams<Scalar>{get(p + ".local.weight"), get(p + ".local.bias"), get(p + ".global.weight"),
                              get(p + ".global.bias")};
  };
  auto dcb = [&](const std::string& p) {
    DcbParams<Scalar> d;
    for (Index l = 0; l < DcbConfig::layers_per_block; ++l) {
      const std::string q = p + "." + std::to_string(l);
      d.layers[static_cast<std::size_t>(l)] =
          ConvBnParams<Scalar>{get(q + ".conv.weight"), get(q + ".conv.bias"), get(q + ".bn.gamma"), get(q + ".bn.beta"),
                               BatchNormStats<Scalar>{&store.at(q + ".bn.running_mean"), &store.at(q + ".bn.running_var")}};
    }
    if (vars.count(p + ".proj.weight")) d.projection = get(p + ".proj.weight");
    return d;
  };
  m.asre1 = asre("asre1");
  m.asre2 = asre("asre2");
  m.dcb1 = dcb("dcb1");
  m.dcb2 = dcb("dcb2");
  m.head.fc = get("head.fc");
  if (vars.count("head.classifier")) m.head.classifier = get("head.classifier");
  return m;
}

/// N x 1 x T x H x W input from equal-length sequences.
inline Tensor<float> stack_sequences(const std::vector<SilhouetteSequence>& batch) {
  if (batch.empty()) throw ShapeError("stack_sequences: empty batch");
  const Shape& fs = batch.front().frames.shape();
  Tensor<float> out(Shape{static_cast<Index>(batch.size()), 1, fs[0], fs[1], fs[2]});
  const Index per = shape_size(fs);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].frames.shape() != fs)
      throw ShapeError("stack_sequences: sequence " + std::to_string(i) + " has shape " +
                       shape_string(batch[i].frames.shape()) + ", expected " + shape_string(fs));
    std::copy(batch[i].frames.data(), batch[i].frames.data() + per, out.data() + static_cast<Index>(i) * per);
  }
  return out;
}

template <typename Scalar>
HeadOutput<Scalar> model_forward(const Var<Scalar>& x, const ModelConfig& cfg, const BoundModel<Scalar>& params,
                                 bool training) {
  const Volume v = Volume::of(x.shape(), "model_forward");
  if (v.c != 1 || v.h != cfg.input.height || v.w != cfg.input.width)
    throw ShapeError("model_forward: expected 1 x T x " + std::to_string(cfg.input.height) + " x " +
                     std::to_string(cfg.input.width) + " samples, got " + shape_string(x.shape()));
  auto h = asre_forward(x, params.asre1, cfg.asre1());
  h = max_pool3d(h, {1, 2, 2}, {1, 2, 2});
  h = asre_forward(h, params.asre2, cfg.asre2());
  h = msta_forward(h, params.dcb1, params.dcb2, cfg.dcb1(), cfg.dcb2(), training);
  return head_forward(h, cfg.head(), params.head);
}

}  // namespace gaitasms
