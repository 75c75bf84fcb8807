#include "doctest.h"
#include "oracles.hpp"
#include "temp_dir.hpp"

#include "gaitasms/config.hpp"
#include "gaitasms/evaluate.hpp"
#include "gaitasms/synth.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

using namespace gaitasms;

namespace {

ModelConfig micro_model(Index classes = 0) {
  ModelConfig m;
  m.input = FrameSize{16, 12};
  m.channels = {2, 3, 4, 4};
  m.embed_dim = 5;
  m.class_count = classes;
  return m;
}

TrainConfig micro_train() {
  TrainConfig t;
  t.lr = 1e-3;
  t.lr_after_drop = 1e-4;
  t.total_steps = 4;
  t.lr_drop_step = 3;
  t.sampler = SamplerConfig{2, 2, 8};
  t.seed = 11;
  return t;
}

std::vector<SilhouetteSequence> walkers(int subjects, Index frames, std::vector<int> views = {90}, int per_condition = 2) {
  SynthOptions o;
  o.num_subjects = subjects;
  o.views = std::move(views);
  o.sequences_per_condition = per_condition;
  o.frames = frames;
  o.seed = 3;
  o.target = FrameSize{16, 12};
  return synth_generate(o).sequences;
}

bool same_store(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entries()[i].value;
    const auto& y = b.entries()[i].value;
    if (x.shape() != y.shape() || !std::equal(x.data(), x.data() + x.size(), y.data())) return false;
  }
  return true;
}

bool same_embedding(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  return a.values.rows() == b.values.rows() && a.values.cols() == b.values.cols() && (a.values.array() == b.values.array()).all();
}

EmbeddingMatrix embedding(std::initializer_list<float> values, std::uint32_t label, std::uint32_t view,
                          Walk walk = Walk::NM) {
  EmbeddingMatrix e;
  e.values = RowMatrix<float>(1, static_cast<Index>(values.size()));
  Index i = 0;
  for (float v : values) e.values(0, i++) = v;
  e.label = label;
  e.view = view;
  e.condition = Condition{walk, 5}.code();
  return e;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_SUITE("train-eval") {

TEST_CASE("embedding extraction") {
  const auto cfg = micro_model();
  auto params = init_parameters<float>(cfg, 5);
  const auto seqs = walkers(3, 20);
  SUBCASE("repeatable and identical for duplicated sequences") {
    const auto a = embed_sequence(seqs[0], cfg, params);
    const auto b = embed_sequence(seqs[0], cfg, params);
    CHECK(same_embedding(a, b));
    CHECK(a.values.rows() == 16);
    CHECK(a.values.cols() == 5);
    const auto all = extract_embeddings({seqs[0], seqs[0]}, cfg, params);
    CHECK(same_embedding(all[0], all[1]));
  }
  SUBCASE("frame reversal leaves the embedding unchanged when temporal kernels are symmetric") {
    // Reversal commutes with zero-padded convolution only for kernels that are
    // palindromic in time; the temporal max then removes the order.
    for (auto& e : params.entries())
      if (e.value.rank() == 5) {
        const Index k = e.value.extent(2), rest = e.value.extent(3) * e.value.extent(4);
        const Index outer = e.value.size() / (k * rest);
        for (Index o = 0; o < outer; ++o)
          for (Index t = 0; t < k / 2; ++t)
            for (Index i = 0; i < rest; ++i) e.value[(o * k + k - 1 - t) * rest + i] = e.value[(o * k + t) * rest + i];
      }
    auto reversed = seqs[1];
    const Index T = reversed.length(), plane = reversed.height() * reversed.width();
    for (Index t = 0; t < T; ++t)
      std::copy(seqs[1].frames.data() + (T - 1 - t) * plane, seqs[1].frames.data() + (T - t) * plane,
                reversed.frames.data() + t * plane);
    const auto a = embed_sequence(seqs[1], cfg, params), b = embed_sequence(reversed, cfg, params);
    CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-5f);
  }
  SUBCASE("sequence length barely moves the embedding compared with identity") {
    const auto shorter = walkers(6, 20), longer = walkers(6, 40);
    const auto a = extract_embeddings(shorter, cfg, params), b = extract_embeddings(longer, cfg, params);
    std::vector<double> between;
    for (std::size_t i = 0; i < b.size(); ++i)
      for (std::size_t j = 0; j < b.size(); ++j)
        if (b[i].label != b[j].label) between.push_back(strip_distance(b[i], b[j]));
    std::nth_element(between.begin(), between.begin() + between.size() / 2, between.end());
    const double median = between[between.size() / 2];
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(strip_distance(a[i], b[i]) < median);
  }
  SUBCASE("empty sequences are skipped") {
    auto with_empty = seqs;
    with_empty.push_back(SilhouetteSequence{});
    std::size_t skipped = 0;
    CHECK(extract_embeddings(with_empty, cfg, params, &skipped).size() == seqs.size());
    CHECK(skipped == 1);
  }
}

TEST_CASE("rank1_eval") {
  SUBCASE("gallery equal to probe gives 100%") {
    std::mt19937_64 rng(1);
    std::vector<EmbeddingMatrix> set;
    for (std::uint32_t i = 0; i < 10; ++i) {
      const auto r = oracle::random_tensor({3}, rng);
      set.push_back(embedding({float(r[0]), float(r[1]), float(r[2])}, i, 90));
    }
    CHECK(*rank1_eval(set, set, false).mean == 1.0);
  }
  SUBCASE("orthogonal one-hot subjects give 100%") {
    std::vector<EmbeddingMatrix> gallery{embedding({1, 0, 0}, 1, 0), embedding({0, 1, 0}, 2, 0), embedding({0, 0, 1}, 3, 0)};
    std::vector<EmbeddingMatrix> probe{embedding({0.9f, 0, 0}, 1, 0), embedding({0, 2, 0}, 2, 0), embedding({0, 0.1f, 1}, 3, 0)};
    CHECK(*rank1_eval(gallery, probe, false).mean == 1.0);
  }
  SUBCASE("one deliberate confusion among three subjects gives 2/3") {
    std::vector<EmbeddingMatrix> gallery{embedding({0, 0}, 1, 0), embedding({10, 0}, 2, 0), embedding({0, 10}, 3, 0)};
    // Subject 3's probe sits next to subject 2's gallery entry.
    std::vector<EmbeddingMatrix> probe{embedding({1, 0}, 1, 0), embedding({9, 1}, 2, 0), embedding({8, 1}, 3, 0)};
    const auto r = rank1_eval(gallery, probe, false);
    REQUIRE(r.cells.size() == 1);
    CHECK(r.cells[0].correct == 2);
    CHECK(*r.mean == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("identical-view exclusion changes the answer") {
    // The same-view entry of subject 2 is nearest; excluding it leaves subject 1's other view.
    std::vector<EmbeddingMatrix> gallery{embedding({0, 0}, 2, 90), embedding({1, 0}, 1, 0), embedding({5, 5}, 2, 0)};
    std::vector<EmbeddingMatrix> probe{embedding({0.5f, 0}, 1, 90)};
    CHECK(*rank1_eval(gallery, probe, false).mean == 0.0);
    CHECK(*rank1_eval(gallery, probe, true).mean == 1.0);
  }
  SUBCASE("no eligible gallery entry is an undefined cell, not zero") {
    std::vector<EmbeddingMatrix> gallery{embedding({0, 0}, 1, 90)};
    std::vector<EmbeddingMatrix> probe{embedding({0, 0}, 1, 90)};
    const auto r = rank1_eval(gallery, probe, true);
    REQUIRE(r.cells.size() == 1);
    CHECK(!r.cells[0].accuracy);
    CHECK(!r.mean);
    CHECK(rank1_csv(r).find("NA") != std::string::npos);
  }
  SUBCASE("agrees with brute force on random sets") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> pick(0, 3);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<EmbeddingMatrix> gallery, probe;
      for (int i = 0; i < 24; ++i) {
        EmbeddingMatrix e;
        e.values = RowMatrix<float>::NullaryExpr(2, 3, [&] { return std::uniform_real_distribution<float>(-1, 1)(rng); });
        e.label = static_cast<std::uint32_t>(pick(rng));
        e.view = static_cast<std::uint32_t>(90 * (pick(rng) % 2));
        e.condition = Condition{static_cast<Walk>(pick(rng) % 3), 1}.code();
        (i % 2 ? probe : gallery).push_back(e);
      }
      for (bool ex : {false, true}) {
        const auto r = rank1_eval(gallery, probe, ex);
        const auto expect = oracle::rank1_cells(gallery, probe, ex);
        REQUIRE(r.cells.size() == expect.size());
        for (const auto& c : r.cells) {
          const auto& want = expect.at({static_cast<std::uint32_t>(c.walk), c.probe_view});
          CHECK(c.accuracy.has_value() == want.has_value());
          if (want) CHECK(*c.accuracy == doctest::Approx(*want).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("protocols") {
  std::vector<EmbeddingMatrix> set;
  for (int idx = 1; idx <= 6; ++idx) {
    auto e = embedding({float(idx)}, 1, 90);
    e.condition = Condition{Walk::NM, idx}.code();
    set.push_back(e);
  }
  auto bg = embedding({0}, 1, 90, Walk::BG);
  set.push_back(bg);
  const auto gp = split_protocol(set, Protocol::Casia);
  CHECK(gp.gallery.size() == 4);
  for (const auto& g : gp.gallery) {
    const auto c = Condition::from_code(g.condition);
    CHECK(c.walk == Walk::NM);
    CHECK(c.index <= 4);
  }
  CHECK(gp.probe.size() == 3);
  CHECK(split_protocol(set, Protocol::Flat).gallery.size() == set.size());
  // Without any NM #1-4 sequence the protocol cannot form a gallery.
  CHECK_THROWS_AS(split_protocol({bg}, Protocol::Casia), ProtocolError);
  CHECK(parse_protocol("casia") == Protocol::Casia);
  CHECK(!parse_protocol("other"));
}

TEST_CASE("embedding export round trip") {
  TempDir dir("emb");
  std::vector<EmbeddingMatrix> set{embedding({1, 2, 3}, 7, 18, Walk::CL), embedding({-1, 0.5f, 9}, 8, 90)};
  write_embeddings(dir / "e.bin", set);
  const auto back = read_embeddings(dir / "e.bin");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(same_embedding(back[i], set[i]));
    CHECK(back[i].label == set[i].label);
    CHECK(back[i].view == set[i].view);
    CHECK(back[i].condition == set[i].condition);
  }
}

TEST_CASE("training") {
  const auto pool = walkers(4, 16);
  const auto model = micro_model(4);
  auto cfg = micro_train();

  SUBCASE("zero learning rate leaves trainable parameters unchanged") {
    cfg.lr = cfg.lr_after_drop = 0;
    auto state = init_training(model, cfg);
    const auto before = state.params;
    run_training(state, pool, cfg);
    CHECK(state.step == cfg.total_steps);
    for (std::size_t i = 0; i < before.size(); ++i) {
      const auto& e = before.entries()[i];
      if (!e.trainable) continue;
      const auto& now = state.params.entries()[i].value;
      CHECK(std::equal(e.value.data(), e.value.data() + e.value.size(), now.data()));
    }
  }
  SUBCASE("same seed, same trajectory") {
    auto run = [&] {
      auto state = init_training(model, cfg);
      std::vector<double> losses;
      run_training(state, pool, cfg, [&](const StepLosses& l, const TrainingState&) { losses.push_back(l.total); });
      return std::make_pair(losses, state.params);
    };
    const auto a = run(), b = run();
    CHECK(a.first == b.first);
    CHECK(same_store(a.second, b.second));
  }
  SUBCASE("loss decreases over 200 steps on four subjects") {
    cfg.total_steps = 200;
    cfg.lr_drop_step = 199;
    cfg.sampler = SamplerConfig{4, 2, 8};
    auto state = init_training(model, cfg);
    std::vector<double> losses;
    run_training(state, pool, cfg, [&](const StepLosses& l, const TrainingState&) { losses.push_back(l.total); });
    REQUIRE(losses.size() == 200);
    auto window = [&](std::size_t from) {
      double s = 0;
      for (std::size_t i = from; i < from + 20; ++i) s += losses[i];
      return s / 20;
    };
    CHECK(window(180) < window(0));
  }
  SUBCASE("class count must cover the training subjects") {
    auto state = init_training(micro_model(2), cfg);
    CHECK_THROWS_AS(run_training(state, pool, cfg), ConfigError);
  }
}

TEST_CASE("checkpoints") {
  TempDir dir("ckpt");
  const auto pool = walkers(2, 12);
  const auto model = micro_model(2);
  auto cfg = micro_train();
  auto state = init_training(model, cfg);
  run_training(state, pool, [&] {
    auto c = cfg;
    c.total_steps = 2;
    c.lr_drop_step = 1;
    return c;
  }());

  SUBCASE("save, load, save gives identical bytes") {
    save_checkpoint(dir / "a.ckpt", state);
    auto copy = init_training(model, cfg);
    restore_checkpoint(copy, load_checkpoint(dir / "a.ckpt"));
    save_checkpoint(dir / "b.ckpt", copy);
    CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
    CHECK(copy.step == 2);
  }
  SUBCASE("resume equals the uninterrupted run") {
    save_checkpoint(dir / "mid.ckpt", state);
    auto resumed = init_training(model, cfg);
    restore_checkpoint(resumed, load_checkpoint(dir / "mid.ckpt"));
    run_training(resumed, pool, cfg);
    run_training(state, pool, cfg);
    CHECK(same_store(resumed.params, state.params));
    CHECK(same_store(resumed.adam_m, state.adam_m));
    CHECK(serialize_checkpoint(make_checkpoint(resumed)) == serialize_checkpoint(make_checkpoint(state)));
  }
  SUBCASE("truncated and foreign files are rejected") {
    const auto bytes = serialize_checkpoint(make_checkpoint(state));
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1})
      CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, cut)), CheckpointError);
    auto foreign = bytes;
    foreign[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(foreign), CheckpointError);
    auto future = bytes;
    future[8] = 9;  // version field
    CHECK_THROWS_AS(deserialize_checkpoint(future), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
  }
  SUBCASE("a checkpoint for another architecture is refused") {
    auto other = init_training(micro_model(3), cfg);
    CHECK_THROWS_AS(restore_checkpoint(other, make_checkpoint(state)), CheckpointError);
  }
}

TEST_CASE("run configuration") {
  SUBCASE("config text round trip") {
    RunConfig cfg = desk_config();
    apply_override(cfg, "train.lr=0.0025");
    apply_override(cfg, "model.channels=2,3,4,5");
    apply_override(cfg, "mask.enabled=false");
    RunConfig back = paper_config();
    apply_config_text(back, config_text(cfg));
    CHECK(config_text(back) == config_text(cfg));
    CHECK(back.train.lr == 0.0025);
    CHECK(back.model.channels[3] == 5);
    CHECK(!back.train.use_mask);
  }
  SUBCASE("sections and comments") {
    RunConfig cfg = desk_config();
    apply_config_text(cfg, "# desk\n[train]\nlr = 0.5\n\n[sampler]\nsubjects = 3\n");
    CHECK(cfg.train.lr == 0.5);
    CHECK(cfg.train.sampler.subjects == 3);
  }
  SUBCASE("errors") {
    RunConfig cfg = desk_config();
    CHECK_THROWS_AS(apply_override(cfg, "train.nope=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "train.lr=fast"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "train.lr"), ConfigError);
    cfg.train.lr_drop_step = cfg.train.total_steps;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

}  // TEST_SUITE
