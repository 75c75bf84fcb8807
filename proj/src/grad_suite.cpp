#include "gaitasms/grad_suite.hpp"

#include "gaitasms/grad_check.hpp"
#include "gaitasms/loss.hpp"
#include "gaitasms/model.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>

namespace gaitasms {

namespace {

using T = Tensor<double>;
using V = Var<double>;

T random(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  T t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

/// sum(y * w) with a fixed random weighting w shaped like y.
class Weighted {
 public:
  explicit Weighted(std::mt19937_64& rng) : rng_(rng) {}
  V operator()(Tape<double>& t, const V& y) {
    auto it = weights_.find(y.shape());
    if (it == weights_.end()) it = weights_.emplace(y.shape(), random(y.shape(), rng_)).first;
    return sum(mul(y, t.leaf(it->second)));
  }

 private:
  std::mt19937_64& rng_;
  std::map<Shape, T> weights_;
};

/// Analytic vs central-difference gradient of the model loss w.r.t. one
/// parameter tensor of the store.
double model_param_check(const ModelConfig& cfg, const ParamStore<double>& store, const std::string& name,
                         const T& input, const std::function<V(Tape<double>&, const HeadOutput<double>&)>& loss_of,
                         double eps = 1e-6) {
  auto run = [&](ParamStore<double> s, bool grad, T* out_grad) {
    Tape<double> tape;
    auto bound = bind_parameters(tape, s, grad);
    auto loss = loss_of(tape, model_forward(tape.constant(input), cfg, bound, true));
    if (grad) {
      tape.backward(loss);
      for (const auto& [pos, var] : bound.trainable)
        if (s.entries()[pos].name == name) *out_grad = tape.grad(var);
    }
    return loss.value()[0];
  };
  T analytic;
  run(store, true, &analytic);
  double worst = 0;
  ParamStore<double> probe = store;
  T& p = probe.at(name);
  for (Index i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + eps;
    const double up = run(probe, false, nullptr);
    p[i] = orig - eps;
    const double down = run(probe, false, nullptr);
    p[i] = orig;
    const double err = std::abs(analytic[i] - (up - down) / (2 * eps)) / std::max(1.0, std::abs(analytic[i]));
    if (!std::isfinite(err)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

std::vector<GradCheckResult> gradient_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Weighted weigh(rng);
  std::vector<GradCheckResult> out;
  auto check = [&](const std::string& name, const ScalarFn& f, const T& x) { out.push_back({name, grad_check(f, x)}); };

  // --- tensor core
  const T x = random({2, 2, 5, 4, 3}, rng);
  const T w = random({3, 2, 3, 2, 3}, rng, -0.5, 0.5);
  const T b = random({3}, rng);
  const ConvSpec spec{{3, 2, 3}, {1, 2, 1}, {2, 1, 1}, {2, 1, 1}};
  check("conv3d/input", [&](Tape<double>& t, const V& v) { return weigh(t, conv3d(v, t.leaf(w), t.leaf(b), spec)); }, x);
  check("conv3d/weight", [&](Tape<double>& t, const V& v) { return weigh(t, conv3d(t.leaf(x), v, t.leaf(b), spec)); }, w);
  check("conv3d/bias", [&](Tape<double>& t, const V& v) { return weigh(t, conv3d(t.leaf(x), t.leaf(w), v, spec)); }, b);
  const T w1 = random({4, 2, 1, 1, 1}, rng);
  check("conv3d/pointwise", [&](Tape<double>& t, const V& v) { return weigh(t, conv3d(v, t.leaf(w1), std::nullopt, ConvSpec{})); }, x);
  check("max_pool3d", [&](Tape<double>& t, const V& v) { return weigh(t, max_pool3d(v, {3, 2, 1}, {1, 2, 1}, {1, 0, 0})); }, x);
  check("avg_pool3d", [&](Tape<double>& t, const V& v) { return weigh(t, avg_pool3d(v, {3, 2, 1}, {1, 2, 1}, {1, 0, 0})); }, x);
  const T other = random(x.shape(), rng);
  check("sigmoid", [&](Tape<double>& t, const V& v) { return weigh(t, sigmoid(v)); }, x);
  check("relu", [&](Tape<double>& t, const V& v) { return weigh(t, relu(v)); }, x);
  check("leaky_relu", [&](Tape<double>& t, const V& v) { return weigh(t, leaky_relu(v, 0.01)); }, x);
  check("add", [&](Tape<double>& t, const V& v) { return weigh(t, add(v, t.leaf(other))); }, x);
  check("sub", [&](Tape<double>& t, const V& v) { return weigh(t, sub(t.leaf(other), v)); }, x);
  check("mul", [&](Tape<double>& t, const V& v) { return weigh(t, mul(v, t.leaf(other))); }, x);
  check("scale", [&](Tape<double>& t, const V& v) { return weigh(t, scale(v, -2.5)); }, x);
  T positive(x.shape());
  positive.array() = x.array().abs() + 0.5;
  check("power", [&](Tape<double>& t, const V& v) { return weigh(t, power(v, 6.5)); }, positive);
  check("sum", [&](Tape<double>&, const V& v) { return sum(v); }, x);
  check("mean", [&](Tape<double>&, const V& v) { return mean(v); }, x);
  const T tail = random({2, 2, 5, 2, 3}, rng);
  check("concat", [&](Tape<double>& t, const V& v) { return weigh(t, concat<double>({v, t.leaf(tail)}, 3)); }, x);
  check("slice", [&](Tape<double>& t, const V& v) { return weigh(t, slice(v, 2, 1, 3)); }, x);
  check("reshape", [&](Tape<double>& t, const V& v) { return weigh(t, reshape(v, {4, 60})); }, x);
  const T lin_x = random({4, 3}, rng), lin_w = random({3, 5}, rng), lin_b = random({5}, rng);
  check("linear/input", [&](Tape<double>& t, const V& v) { return weigh(t, linear(v, t.leaf(lin_w), t.leaf(lin_b))); }, lin_x);
  check("linear/weight", [&](Tape<double>& t, const V& v) { return weigh(t, linear(t.leaf(lin_x), v, t.leaf(lin_b))); }, lin_w);
  check("linear/bias", [&](Tape<double>& t, const V& v) { return weigh(t, linear(t.leaf(lin_x), t.leaf(lin_w), v)); }, lin_b);
  const T gamma = random({2}, rng, 0.5, 1.5), beta = random({2}, rng);
  for (bool training : {true, false}) {
    T rm = random({2}, rng), rv = random({2}, rng, 0.5, 2.0);
    const BatchNormStats<double> st{&rm, &rv};
    const std::string mode = training ? "batch_norm/train" : "batch_norm/eval";
    check(mode + "/input", [&](Tape<double>& t, const V& v) { return weigh(t, batch_norm(v, t.leaf(gamma), t.leaf(beta), st, training)); }, x);
    check(mode + "/gamma", [&](Tape<double>& t, const V& v) { return weigh(t, batch_norm(t.leaf(x), v, t.leaf(beta), st, training)); }, gamma);
    check(mode + "/beta", [&](Tape<double>& t, const V& v) { return weigh(t, batch_norm(t.leaf(x), t.leaf(gamma), v, st, training)); }, beta);
  }

  // --- asre
  const AsreConfig acfg{2, 3, 3, 0.55, Fusion::CatH, BranchActivation::LeakyRelu, 0.01};
  const T lw = random({3, 2, 3, 3, 3}, rng, -0.5, 0.5), lb = random({3}, rng), gw = random({3, 2, 3, 3, 3}, rng, -0.5, 0.5),
          gb = random({3}, rng);
  const T ax = random({2, 2, 4, 4, 3}, rng);
  const auto masks = edge_mask(temporal_stats(ax), acfg.threshold);
  auto asre_params = [&](Tape<double>& t, std::optional<V> local_w) {
    return AsreParams<double>{local_w ? *local_w : t.leaf(lw), t.leaf(lb), t.leaf(gw), t.leaf(gb)};
  };
  check("lem_forward/input", [&](Tape<double>& t, const V& v) { return weigh(t, lem_forward(v, masks, asre_params(t, std::nullopt), acfg)); }, ax);
  check("lem_forward/local_weight", [&](Tape<double>& t, const V& v) { return weigh(t, lem_forward(t.leaf(ax), masks, asre_params(t, v), acfg)); }, lw);
  check("gfe_forward/input", [&](Tape<double>& t, const V& v) { return weigh(t, gfe_forward(v, asre_params(t, std::nullopt), acfg)); }, ax);
  AsreConfig inert = acfg;
  inert.threshold = 0.5;  // s >= 0.5 everywhere, so the mask cannot flip under perturbation
  check("asre_forward/input", [&](Tape<double>& t, const V& v) { return weigh(t, asre_forward(v, asre_params(t, std::nullopt), inert)); }, ax);

  // --- msta
  const DcbConfig dcfg{2, 3, 2, 3};
  const T dx = random({2, 2, 7, 2, 2}, rng);
  std::vector<T> dparams = {random({3, 2, 3, 1, 1}, rng, -0.5, 0.5), random({3}, rng), random({3}, rng, 0.5, 1.5), random({3}, rng),
                            random({3, 3, 3, 1, 1}, rng, -0.5, 0.5), random({3}, rng), random({3}, rng, 0.5, 1.5), random({3}, rng),
                            random({3, 2, 1, 1, 1}, rng)};
  T rm0 = T::zeros({3}), rv0 = T::constant({3}, 1.0), rm1 = T::zeros({3}), rv1 = T::constant({3}, 1.0);
  auto dcb = [&](Tape<double>& t, const V& in, int replace, const V* v) {
    auto leaf = [&](int k) { return k == replace ? *v : t.leaf(dparams[static_cast<std::size_t>(k)]); };
    DcbParams<double> p;
    p.layers[0] = ConvBnParams<double>{leaf(0), leaf(1), leaf(2), leaf(3), {&rm0, &rv0}};
    p.layers[1] = ConvBnParams<double>{leaf(4), leaf(5), leaf(6), leaf(7), {&rm1, &rv1}};
    p.projection = leaf(8);
    return dcb_forward(in, p, dcfg, true);
  };
  check("dcb_forward/input", [&](Tape<double>& t, const V& v) { return weigh(t, dcb(t, v, -1, nullptr)); }, dx);
  const char* dnames[] = {"conv0", "bias0", "gamma0", "beta0", "conv1", "bias1", "gamma1", "beta1", "projection"};
  for (int k = 0; k < 9; ++k)
    check(std::string("dcb_forward/") + dnames[k], [&, k](Tape<double>& t, const V& v) { return weigh(t, dcb(t, t.leaf(dx), k, &v)); },
          dparams[static_cast<std::size_t>(k)]);

  // --- head
  const T hx = random({2, 3, 4, 5, 3}, rng, -0.2, 1.0);
  const HeadConfig hcfg{6.5, 5, 4, 3};
  const T fc = random({5, 3, 4}, rng), cls = random({5, 4, 3}, rng);
  check("temporal_max", [&](Tape<double>& t, const V& v) { return weigh(t, temporal_max(v)); }, hx);
  T gem_in(hx.shape());
  gem_in.array() = hx.array().abs() + 0.1;
  check("gem_pool/p=6.5", [&](Tape<double>& t, const V& v) { return weigh(t, gem_pool(v, 6.5)); }, gem_in);
  check("gem_pool/p=1", [&](Tape<double>& t, const V& v) { return weigh(t, gem_pool(v, 1.0)); }, gem_in);
  const T pooled = random({2, 3, 1, 5, 1}, rng);
  check("strip_features", [&](Tape<double>& t, const V& v) { return weigh(t, strip_features(v)); }, pooled);
  const T sfc_x = random({2, 5, 3}, rng);
  check("separate_fc/input", [&](Tape<double>& t, const V& v) { return weigh(t, separate_fc(v, t.leaf(fc))); }, sfc_x);
  check("separate_fc/weights", [&](Tape<double>& t, const V& v) { return weigh(t, separate_fc(t.leaf(sfc_x), v)); }, fc);
  const std::vector<int> two_labels{0, 2};
  auto head_loss = [&](Tape<double>& t, const HeadOutput<double>& o) { return add(weigh(t, o.embeddings), cross_entropy(*o.logits, two_labels)); };
  check("head_forward/input", [&](Tape<double>& t, const V& v) { return head_loss(t, head_forward(v, hcfg, HeadParams<double>{t.leaf(fc), t.leaf(cls)})); }, gem_in);
  check("head_forward/fc", [&](Tape<double>& t, const V& v) { return head_loss(t, head_forward(t.leaf(gem_in), hcfg, HeadParams<double>{v, t.leaf(cls)})); }, fc);
  check("head_forward/classifier", [&](Tape<double>& t, const V& v) { return head_loss(t, head_forward(t.leaf(gem_in), hcfg, HeadParams<double>{t.leaf(fc), v})); }, cls);

  // --- losses
  const T emb = random({6, 2, 4}, rng);
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  check("triplet_batch_all/mean_nonzero", [&](Tape<double>&, const V& v) { return triplet_batch_all(v, labels, TripletConfig{0.2, TripletReduction::MeanNonZero}); }, emb);
  check("triplet_batch_all/mean_all", [&](Tape<double>&, const V& v) { return triplet_batch_all(v, labels, TripletConfig{0.2, TripletReduction::MeanAll}); }, emb);
  const T logits = random({6, 2, 3}, rng, -2.0, 2.0);
  check("cross_entropy", [&](Tape<double>&, const V& v) { return cross_entropy(v, labels); }, logits);

  // --- full model on a 2 x 8 x 16 x 12 micro input
  ModelConfig mcfg;
  mcfg.input = FrameSize{16, 12};
  mcfg.channels = {2, 3, 4, 4};
  mcfg.embed_dim = 5;
  mcfg.class_count = 2;
  // Zero biases would park every masked-out branch on the activation kink.
  ParamStore<double> store = init_parameters<double>(mcfg, seed + 1);
  for (auto& e : store.entries())
    if (e.trainable && e.value.rank() == 1) e.value = random(e.value.shape(), rng, -0.3, 0.3);
  const T mx = random({2, 1, 8, 16, 12}, rng, 0.0, 1.0);
  const std::vector<int> model_labels{0, 1};
  auto model_loss = [&](Tape<double>& t, const HeadOutput<double>& o) { return add(weigh(t, o.embeddings), cross_entropy(*o.logits, model_labels)); };
  out.push_back({"model_forward/input", grad_check([&](Tape<double>& t, const V& v) {
                   ParamStore<double> s = store;
                   return model_loss(t, model_forward(v, mcfg, bind_parameters(t, s, false), true));
                 }, mx, 1e-6)});
  for (const auto& e : store.entries())
    if (e.trainable) out.push_back({"model_forward/" + e.name, model_param_check(mcfg, store, e.name, mx, model_loss)});
  return out;
}

}  // namespace gaitasms
