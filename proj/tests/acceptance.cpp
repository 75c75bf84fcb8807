// Acceptance suite: one PASS/FAIL line per criterion. Criteria can be picked
// by number on the command line (default: all).

#include "oracles.hpp"

#include "gaitasms/asre.hpp"
#include "gaitasms/config.hpp"
#include "gaitasms/evaluate.hpp"
#include "gaitasms/grad_suite.hpp"
#include "gaitasms/msta.hpp"
#include "gaitasms/parallel.hpp"
#include "gaitasms/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <string>

using namespace gaitasms;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  return (a.array() - b.array()).abs().maxCoeff();
}

// --- 1

Outcome conv_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<Index> ext(1, 6), small(1, 3), ch(1, 3);
  double worst = 0;
  int checked = 0;
  while (checked < 200) {
    ConvSpec s{{small(rng), small(rng), small(rng)},
               {small(rng), small(rng), small(rng)},
               {small(rng), small(rng), small(rng)},
               {small(rng) - 1, small(rng) - 1, small(rng) - 1}};
    const Index n = ch(rng), c = ch(rng), o = ch(rng), t = ext(rng), h = ext(rng), w = ext(rng);
    auto fits = [](Index in, Index k, Index d, Index p) { return in + 2 * p - d * (k - 1) - 1 >= 0; };
    if (!fits(t, s.kernel.t, s.dilation.t, s.padding.t) || !fits(h, s.kernel.h, s.dilation.h, s.padding.h) ||
        !fits(w, s.kernel.w, s.dilation.w, s.padding.w))
      continue;
    const auto x = oracle::random_tensor({n, c, t, h, w}, rng);
    const auto wt = oracle::random_tensor({o, c, s.kernel.t, s.kernel.h, s.kernel.w}, rng);
    const auto b = oracle::random_tensor({o}, rng);
    Tape<double> tape;
    const auto y = conv3d(tape.leaf(x), tape.leaf(wt), tape.leaf(b), s).value();
    worst = std::max(worst, max_abs_diff(y, oracle::conv3d(x, wt, std::vector<double>(b.data(), b.data() + o), s)));
    ++checked;
  }
  const double el = seconds_since(t0);
  return {worst < 1e-10 && el < 30, fmt("%d dilated configurations, max |diff| %.2e (< 1e-10), %.2f s (< 30 s)", checked, worst, el)};
}

// --- 2

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  const auto results = gradient_suite(1);
  const double el = seconds_since(t0);
  double worst = 0;
  std::string worst_name, failed;
  for (const auto& r : results) {
    if (r.error >= worst) {
      worst = r.error;
      worst_name = r.name;
    }
    if (!(r.error < kGradTolerance)) failed += " " + r.name;
  }
  std::string detail = fmt("%zu checks, worst %.2e (%s) (< 1e-4), %.1f s (< 300 s)", results.size(), worst, worst_name.c_str(), el);
  if (!failed.empty()) detail += "; failed:" + failed;
  return {failed.empty() && el < 300, detail};
}

// --- 3

Outcome asre_invariants() {
  std::mt19937_64 rng(3);
  bool complementary = true;
  double lo = 1, hi = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto stats = temporal_stats(oracle::random_tensor({1, 2, 6, 5, 4}, rng, -3, 3));
    lo = std::min(lo, stats.array().minCoeff());
    hi = std::max(hi, stats.array().maxCoeff());
    const auto m = edge_mask(stats, 0.55);
    for (Index i = 0; i < m.edge.size(); ++i)
      complementary = complementary && (m.edge[i] == 0.0 || m.edge[i] == 1.0) && m.edge[i] + m.complement[i] == 1.0;
  }

  // Collapse: no activation and zero bias make LEM a single convolution.
  Tape<double> tape;
  AsreConfig cfg{2, 3, 3, 0.6, Fusion::Add, BranchActivation::None, 0.01};
  const auto x = oracle::random_tensor({1, 2, 6, 5, 4}, rng);
  const auto w = oracle::random_tensor({3, 2, 3, 3, 3}, rng);
  const auto zero = Tensor<double>::zeros({3});
  const AsreParams<double> p{tape.leaf(w), tape.leaf(zero), tape.leaf(w), tape.leaf(zero)};
  const auto masks = edge_mask(temporal_stats(x), cfg.threshold);
  // Copies: values live on the tape, which grows with every op.
  const Tensor<double> lem = lem_forward(tape.leaf(x), masks, p, cfg).value();
  const Tensor<double> conv = conv3d(tape.leaf(x), tape.leaf(w), std::nullopt, ConvSpec::same(3)).value();
  const double collapse = max_abs_diff(lem, conv);

  // Counterexample: a kernel joining two pixels that sit in different branches.
  AsreConfig leaky{1, 1, 3, 0.5, Fusion::Add, BranchActivation::LeakyRelu, 0.01};
  const auto xs = Tensor<double>::from_values({1, 1, 1, 2, 2}, {2, -3, 1, -1});
  const EdgeMaskPair<double> split{Tensor<double>::from_values({1, 1, 1, 2, 2}, {1, 0, 1, 0}),
                                   Tensor<double>::from_values({1, 1, 1, 2, 2}, {0, 1, 0, 1})};
  Tensor<double> w3({1, 1, 3, 3, 3});
  w3.at({0, 0, 1, 1, 1}) = 1;
  w3.at({0, 0, 1, 1, 2}) = 1;
  const auto z1 = Tensor<double>::zeros({1});
  const AsreParams<double> p3{tape.leaf(w3), tape.leaf(z1), tape.leaf(w3), tape.leaf(z1)};
  const Tensor<double> apart = lem_forward(tape.leaf(xs), split, p3, leaky).value();
  const Tensor<double> joint = leaky_relu(conv3d(tape.leaf(xs), tape.leaf(w3), tape.leaf(z1), ConvSpec::same(3)), 0.01).value();
  const double gap = max_abs_diff(apart, joint);

  const bool ok = complementary && lo >= 0.5 - 1e-6 && hi < 1.0 && collapse < 1e-5 && gap > 1e-3;
  return {ok, fmt("complementary on 100 inputs: %s; temporal_stats in [%.6f, %.6f]; collapse |diff| %.1e (< 1e-5); "
                  "LeakyRelu gap %.3f (> 1e-3)",
                  complementary ? "yes" : "no", lo, hi, collapse, gap)};
}

// --- 4

struct Block {
  DcbConfig cfg;
  std::array<Tensor<double>, 2> w, b, gamma, beta, mean, var;
  Tensor<double> proj;

  Block(DcbConfig c, std::mt19937_64& rng) : cfg(c) {
    // Positive weights and shifts keep every Relu open, so no tap is hidden.
    for (std::size_t l = 0; l < 2; ++l) {
      const Index cin = l == 0 ? c.channels_in : c.channels_out;
      w[l] = oracle::random_tensor({c.channels_out, cin, c.temporal_kernel, 1, 1}, rng, 0.05, 0.6);
      b[l] = oracle::random_tensor({c.channels_out}, rng, 0.1, 0.3);
      gamma[l] = oracle::random_tensor({c.channels_out}, rng, 0.5, 1.5);
      beta[l] = oracle::random_tensor({c.channels_out}, rng, 0.1, 0.3);
      mean[l] = oracle::random_tensor({c.channels_out}, rng, -0.1, 0.0);
      var[l] = oracle::random_tensor({c.channels_out}, rng, 0.5, 1.5);
    }
    if (c.needs_projection()) proj = oracle::random_tensor({c.channels_out, c.channels_in, 1, 1, 1}, rng, 0.05, 1.0);
  }

  DcbParams<double> bind(Tape<double>& t) {
    DcbParams<double> p;
    for (std::size_t l = 0; l < 2; ++l)
      p.layers[l] = ConvBnParams<double>{t.leaf(w[l]), t.leaf(b[l]), t.leaf(gamma[l]), t.leaf(beta[l]), {&mean[l], &var[l]}};
    if (cfg.needs_projection()) p.projection = t.leaf(proj);
    return p;
  }
};

Outcome msta_receptive_field() {
  std::mt19937_64 rng(4);
  Block first(DcbConfig{2, 3, 2, 3}, rng), second(DcbConfig{3, 3, 4, 3}, rng);
  auto run = [&](const Tensor<double>& x) {
    Tape<double> t;
    return msta_forward(t.leaf(x), first.bind(t), second.bind(t), first.cfg, second.cfg, false).value();
  };
  const Index T = 41, mid = 20;
  const auto zero = Tensor<double>::zeros({1, 2, T, 1, 1});
  auto impulse = zero;
  impulse[mid] = 1;
  const auto y = run(impulse), base = run(zero);
  Index front = T, back = -1;
  for (Index t = 0; t < T; ++t)
    for (Index c = 0; c < 3; ++c)
      if (std::abs(y[c * T + t] - base[c * T + t]) > 1e-12) {
        front = std::min(front, t);
        back = std::max(back, t);
      }
  const Index support = back >= front ? back - front + 1 : 0;
  const Index rf = receptive_field({first.cfg, second.cfg});

  const auto x = oracle::random_tensor({1, 2, T, 2, 2}, rng);
  auto shifted = Tensor<double>::zeros(x.shape());
  const Index plane = 4, shift = 3, margin = rf / 2;
  for (Index c = 0; c < 2; ++c)
    for (Index t = shift; t < T; ++t)
      for (Index i = 0; i < plane; ++i) shifted[(c * T + t) * plane + i] = x[(c * T + t - shift) * plane + i];
  const auto a = run(x), s = run(shifted);
  double worst = 0;
  for (Index c = 0; c < 3; ++c)
    for (Index t = margin + shift; t < T - margin; ++t)
      for (Index i = 0; i < plane; ++i) worst = std::max(worst, std::abs(s[(c * T + t) * plane + i] - a[(c * T + t - shift) * plane + i]));

  const bool ok = support == 25 && rf == 25 && front == mid - 12 && worst < 1e-5;
  return {ok, fmt("impulse support %lld frames [%lld, %lld], receptive_field() %lld (both 25); interior shift error %.1e (< 1e-5)",
                  static_cast<long long>(support), static_cast<long long>(front), static_cast<long long>(back),
                  static_cast<long long>(rf), worst)};
}

// --- 5

Outcome gem_properties() {
  auto gem = [](const Tensor<double>& x, double p) {
    Tape<double> t;
    return gem_pool(t.leaf(x), p).value();
  };
  std::mt19937_64 rng(5);
  const auto x = oracle::random_tensor({2, 3, 1, 4, 5}, rng, 0.0, 1.0);
  const auto y = gem(x, 1.0);
  double mean_err = 0;
  for (Index r = 0; r < y.size(); ++r) {
    double m = 0;
    for (Index k = 0; k < 5; ++k) m += x[r * 5 + k];
    mean_err = std::max(mean_err, std::abs(y[r] - m / 5));
  }
  const auto rows = oracle::random_tensor({1, 1000, 1, 1, 6}, rng, 0.0, 2.0);
  const double ps[] = {0.5, 1.0, 2.0, 4.0, 6.5, 16.0, 64.0};
  int violations = 0;
  Tensor<double> last = gem(rows, ps[0]);
  for (std::size_t i = 1; i < std::size(ps); ++i) {
    const auto now = gem(rows, ps[i]);
    for (Index r = 0; r < 1000; ++r) violations += now[r] < last[r] - 1e-12;
    last = now;
  }
  const double near_max = gem(Tensor<double>::from_values({1, 1, 1, 2}, {1, 2}), 64.0)[0];
  const double rel = std::abs(near_max - 2.0) / 2.0;
  return {mean_err < 1e-15 && violations == 0 && rel < 0.02,
          fmt("p=1 vs mean max |diff| %.1e; %d monotonicity violations over 1000 rows x 7 exponents; p=64 on [1,2] gives %.4f "
              "(%.2f%% below max, < 2%%)",
              mean_err, violations, near_max, 100 * rel)};
}

// --- 6

Outcome triplet_oracle() {
  std::mt19937_64 rng(6);
  double worst = 0;
  int sets = 0;
  for (int p = 2; p <= 4; ++p)
    for (int k = 2; k <= 4; ++k) {
      if (p * k > 12) continue;
      std::vector<int> labels;
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < k; ++j) labels.push_back(i);
      for (int trial = 0; trial < 4; ++trial, ++sets) {
        const auto e = oracle::random_tensor({p * k, 3, 4}, rng);
        for (auto red : {TripletReduction::MeanNonZero, TripletReduction::MeanAll}) {
          const TripletConfig cfg{0.2 + 0.1 * trial, red};
          double expect = 0;
          for (Index h = 0; h < 3; ++h) {
            auto dist = [&](std::size_t a, std::size_t b) {
              double acc = 0;
              for (Index d = 0; d < 4; ++d) {
                const double diff = e.at({Index(a), h, d}) - e.at({Index(b), h, d});
                acc += diff * diff;
              }
              return std::sqrt(acc);
            };
            const auto tally = oracle::enumerate_triplets(labels, cfg.margin, dist);
            const long denom = red == TripletReduction::MeanNonZero ? tally.positive : tally.total;
            expect += denom > 0 ? tally.sum / static_cast<double>(denom) : 0.0;
          }
          Tape<double> t;
          worst = std::max(worst, std::abs(triplet_batch_all(t.leaf(e), labels, cfg).value()[0] - expect / 3));
        }
      }
    }
  // P=2, K=2: with every embedding equal each triple contributes the margin,
  // so the MeanAll value equals the margin only when the divisor is the triple count.
  const std::vector<int> pk22{0, 0, 1, 1};
  const long triples = oracle::enumerate_triplets(pk22, 0.2, [](std::size_t, std::size_t) { return 0.0; }).total;
  Tape<double> t;
  const auto flat = Tensor<double>::constant({4, 5, 3}, 0.3);
  const double per = triplet_batch_all(t.leaf(flat), pk22, TripletConfig{0.7, TripletReduction::MeanAll}).value()[0];
  const bool ok = worst < 1e-10 && triples == 8 && std::abs(per - 0.7) < 1e-15;
  return {ok, fmt("%d sets with N <= 12, max |diff| %.1e (< 1e-10); P=2,K=2 has %ld triples per strip, mean over them %.3f "
                  "(margin 0.7)",
                  sets, worst, triples, per)};
}

// --- 7

EmbeddingMatrix point(std::initializer_list<float> v, std::uint32_t label, std::uint32_t view) {
  EmbeddingMatrix e;
  e.values = RowMatrix<float>(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (float f : v) e.values(0, i++) = f;
  e.label = label;
  e.view = view;
  e.condition = Condition{Walk::NM, 5}.code();
  return e;
}

Outcome rank1_protocol() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> pick(0, 5);
  std::uniform_real_distribution<float> u(-1, 1);
  int mismatches = 0, cells = 0;
  for (int set = 0; set < 50; ++set) {
    std::vector<EmbeddingMatrix> gallery, probe;
    const int n = 10 + set % 30;
    for (int i = 0; i < n; ++i) {
      EmbeddingMatrix e;
      e.values = RowMatrix<float>::NullaryExpr(1 + set % 4, 2 + set % 3, [&] { return u(rng); });
      e.label = static_cast<std::uint32_t>(pick(rng));
      e.view = static_cast<std::uint32_t>(18 * (pick(rng) % 3));
      e.condition = Condition{static_cast<Walk>(pick(rng) % 3), 1 + pick(rng)}.code();
      (i % 3 == 0 ? probe : gallery).push_back(e);
    }
    for (bool exclude : {false, true}) {
      const auto report = rank1_eval(gallery, probe, exclude);
      const auto expect = oracle::rank1_cells(gallery, probe, exclude);
      mismatches += report.cells.size() != expect.size();
      for (const auto& c : report.cells) {
        ++cells;
        const auto it = expect.find({static_cast<std::uint32_t>(c.walk), c.probe_view});
        if (it == expect.end() || it->second.has_value() != c.accuracy.has_value() ||
            (c.accuracy && std::abs(*c.accuracy - *it->second) > 1e-12))
          ++mismatches;
      }
    }
  }
  // Subject 2's same-view entry is nearest; without it subject 1's other view wins.
  const std::vector<EmbeddingMatrix> gallery{point({0, 0}, 2, 90), point({1, 0}, 1, 0), point({5, 5}, 2, 0)};
  const std::vector<EmbeddingMatrix> probe{point({0.5f, 0}, 1, 90)};
  const double with = *rank1_eval(gallery, probe, false).mean, without = *rank1_eval(gallery, probe, true).mean;
  const bool ok = mismatches == 0 && with == 0.0 && without == 1.0;
  return {ok, fmt("50 random sets, %d cells compared, %d disagreements with brute force; exclusion case %.0f%% -> %.0f%%", cells,
                  mismatches, 100 * with, 100 * without)};
}

// --- shared desk-scale benchmark

constexpr int kViewA = 36, kViewB = 90;
// Calibrated once from the seeded run of criterion 8.
constexpr double kPinnedRank1 = 1.0;

struct Bench {
  RunConfig cfg;
  std::vector<SilhouetteSequence> train, test, occluded;

  Bench() {
    cfg = desk_config();
    cfg.model.class_count = 8;
    cfg.train.seed = 1;
    SynthOptions o;
    o.num_subjects = 12;
    o.views = {kViewA, kViewB};
    o.conditions = {Walk::NM};
    o.sequences_per_condition = 6;
    o.frames = 40;
    o.seed = 7;
    o.target = cfg.model.input;
    for (auto& s : synth_generate(o).sequences) (s.subject <= 8 ? train : test).push_back(std::move(s));
    // Quarter-height band across the full width at a random height, on every probe.
    occluded = test;
    std::mt19937_64 rng(99);
    const MaskPolicy band;
    for (auto& s : occluded) {
      if (s.condition.index <= 4) continue;
      Rect r = region_size(band, s.height(), s.width());
      r.top = std::uniform_int_distribution<Index>(0, s.height() - r.height)(rng);
      zero_region(s.frames, r);
    }
  }

  double rank1(const std::vector<SilhouetteSequence>& seqs, const ParamStore<float>& params, bool exclude) const {
    const auto split = split_protocol(extract_embeddings(seqs, cfg.model, params), Protocol::Casia);
    return rank1_eval(split.gallery, split.probe, exclude).mean.value_or(0.0);
  }

  TrainingState train_run(TrainConfig tc) const {
    auto state = init_training(cfg.model, tc);
    run_training(state, train, tc);
    return state;
  }
};

Bench& bench() {
  static Bench b;
  return b;
}

// --- 8

Outcome desk_end_to_end() {
  const auto& b = bench();
  const auto t0 = Clock::now();
  auto state = init_training(b.cfg.model, b.cfg.train);
  const double untrained = b.rank1(b.test, state.params, true);
  run_training(state, b.train, b.cfg.train);
  const double cross = b.rank1(b.test, state.params, true);
  const double all = b.rank1(b.test, state.params, false);
  const double el = seconds_since(t0);
  const bool ok = cross >= 0.60 && std::abs(cross - kPinnedRank1) <= 0.10 + 1e-12 && el < 20 * 60;
  return {ok, fmt("views %d/%d, %lld steps, P=4 K=4 T=30: held-out cross-view rank-1 %.1f%% (>= 60%%, pinned %.0f%% +- 10), "
                  "untrained %.1f%%, all-view %.1f%%; %.1f min (< 20)",
                  kViewA, kViewB, static_cast<long long>(b.cfg.train.total_steps), 100 * cross, 100 * kPinnedRank1,
                  100 * untrained, 100 * all, el / 60)};
}

// --- 9

Outcome mask_direction() {
  const auto& b = bench();
  constexpr Index kSteps = 500;
  std::vector<double> with, without;
  std::string runs;
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainConfig tc = b.cfg.train;
    tc.total_steps = kSteps;
    tc.lr_drop_step = kSteps * 7 / 8;
    tc.seed = seed;
    tc.use_mask = true;
    with.push_back(b.rank1(b.occluded, b.train_run(tc).params, true));
    tc.use_mask = false;
    without.push_back(b.rank1(b.occluded, b.train_run(tc).params, true));
    runs += fmt(" seed %llu %.1f/%.1f", static_cast<unsigned long long>(seed), 100 * with.back(), 100 * without.back());
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double mw = median(with), mo = median(without);
  return {mw >= mo, fmt("occluded cross-view probes, %lld steps per run: median rank-1 with mask %.1f%% vs without %.1f%% "
                        "(with/without:%s)",
                        static_cast<long long>(kSteps), 100 * mw, 100 * mo, runs.c_str())};
}

// --- 10

Outcome determinism() {
  const auto& b = bench();
  TrainConfig tc = b.cfg.train;
  tc.total_steps = 20;
  tc.lr_drop_step = 15;
  const auto bytes = [](const TrainingState& s) { return serialize_checkpoint(make_checkpoint(s)); };
  const auto first = bytes(b.train_run(tc));
  const auto second = bytes(b.train_run(tc));

  // Stop after 10 steps, round-trip through a file, then finish.
  auto partial = init_training(b.cfg.model, tc);
  const LabelMap labels(b.train);
  while (partial.step < 10) {
    const auto batch = draw_batch(partial, b.train, tc);
    train_step(partial, batch, labels.labels(batch), tc);
  }
  const auto path = std::filesystem::temp_directory_path() / "gaitasms-acceptance-resume.ckpt";
  save_checkpoint(path, partial);
  auto resumed = init_training(b.cfg.model, tc);
  restore_checkpoint(resumed, load_checkpoint(path));
  std::filesystem::remove(path);
  run_training(resumed, b.train, tc);
  const auto third = bytes(resumed);
  return {first == second && first == third,
          fmt("two seeded 20-step runs byte-identical: %s; resume at step 10 identical: %s (%zu bytes)",
              first == second ? "yes" : "no", first == third ? "yes" : "no", first.size())};
}

}  // namespace

int main(int argc, char** argv) {
  retain_heap_memory();
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"convolution oracle", conv_oracle},
      {"gradient suite", gradient_checks},
      {"ASRE invariants", asre_invariants},
      {"MSTA receptive field", msta_receptive_field},
      {"GeM properties", gem_properties},
      {"triplet oracle", triplet_oracle},
      {"rank-1 protocol", rank1_protocol},
      {"desk-scale end-to-end", desk_end_to_end},
      {"random mask under occlusion", mask_direction},
      {"determinism", determinism},
  };
  std::set<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!chosen.empty() && !chosen.count(number)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2d  %s: %s\n", o.pass ? "PASS" : "FAIL", number, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
