#include "doctest.h"
#include "temp_dir.hpp"

#include "gaitasms/synth.hpp"

#include <fstream>
#include <map>
#include <set>

using namespace gaitasms;
namespace fs = std::filesystem;

namespace {

/// Filled ellipse touching the top and bottom rows, symmetric about `center`.
Image blob(Index h, Index w, double center, double half_width) {
  Image img = Image::Zero(h, w);
  const double cy = (static_cast<double>(h) - 1) / 2, ry = static_cast<double>(h) / 2;
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c) {
      const double dy = (static_cast<double>(r) - cy) / ry, dx = (static_cast<double>(c) + 0.5 - center) / half_width;
      if (dx * dx + dy * dy <= 1.0) img(r, c) = 1;
    }
  return img;
}

double mean_abs(const Image& a, const Image& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  return (a - b).abs().mean();
}

double iou(const Tensor<float>& a, const Tensor<float>& b, Index t) {
  const Image fa = frame_at(a, t), fb = frame_at(b, t);
  const double inter = ((fa > 0.5f) && (fb > 0.5f)).cast<double>().sum();
  const double uni = ((fa > 0.5f) || (fb > 0.5f)).cast<double>().sum();
  return uni > 0 ? inter / uni : 1.0;
}

SilhouetteSequence numbered(int subject, Index frames) {
  SilhouetteSequence s;
  s.subject = subject;
  s.frames = Tensor<float>({frames, 1, 1});
  for (Index t = 0; t < frames; ++t) s.frames[t] = static_cast<float>(t);
  return s;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("conditions") {
  CHECK(Condition::parse("nm-05") == Condition{Walk::NM, 5});
  CHECK(Condition::parse("bg-02") == Condition{Walk::BG, 2});
  CHECK(Condition::parse("cl-01") == Condition{Walk::CL, 1});
  CHECK(!Condition::parse("xx-01"));
  CHECK(!Condition::parse("nm"));
  const Condition c{Walk::CL, 2};
  CHECK(Condition::from_code(c.code()) == c);
  CHECK(c.name() == "cl-02");
}

TEST_CASE("normalize_frame") {
  const FrameSize target{64, 44};
  SUBCASE("a centred full-height 64 x 44 blob is unchanged") {
    const Image img = blob(64, 44, 22.0, 15.0);
    auto out = normalize_frame(img, target);
    REQUIRE(out);
    CHECK((*out - img).abs().maxCoeff() < 1e-6);
  }
  SUBCASE("a 2x nearest-neighbour upscale comes back") {
    const Image small = blob(64, 44, 22.0, 12.0);
    Image big(128, 88);
    for (Index r = 0; r < 128; ++r)
      for (Index c = 0; c < 88; ++c) big(r, c) = small(r / 2, c / 2);
    auto out = normalize_frame(big, target);
    REQUIRE(out);
    CHECK(mean_abs(*out, small) < 0.02);
  }
  SUBCASE("horizontal shifts are removed") {
    const Image a = blob(80, 90, 35.0, 14.0);
    const Image b = blob(80, 90, 45.0, 14.0);
    auto na = normalize_frame(a, target), nb = normalize_frame(b, target);
    REQUIRE(na);
    REQUIRE(nb);
    CHECK((*na - *nb).abs().maxCoeff() == 0.0f);
  }
  SUBCASE("vertical crop to the foreground span") {
    Image padded = Image::Zero(100, 44);
    padded.middleRows(20, 64) = blob(64, 44, 22.0, 15.0);
    auto out = normalize_frame(padded, target);
    REQUIRE(out);
    CHECK((*out - blob(64, 44, 22.0, 15.0)).abs().maxCoeff() < 1e-6);
  }
  SUBCASE("idempotent") {
    const Image raw = blob(150, 70, 31.3, 17.0);
    auto once = normalize_frame(raw, target);
    REQUIRE(once);
    auto twice = normalize_frame(*once, target);
    REQUIRE(twice);
    CHECK(mean_abs(*once, *twice) < 1e-3);
    CHECK(once->minCoeff() >= 0.0f);
    CHECK(once->maxCoeff() <= 1.0f);
  }
  SUBCASE("no foreground") { CHECK(!normalize_frame(Image::Zero(10, 10), target)); }
  SUBCASE("empty frames are dropped from a sequence") {
    Tensor<float> raw({3, 64, 44});
    Eigen::Map<Image>(raw.data(), 64, 44) = blob(64, 44, 22.0, 10.0);
    Eigen::Map<Image>(raw.data() + 2 * 64 * 44, 64, 44) = blob(64, 44, 22.0, 10.0);
    CHECK(normalize(raw, target).extent(0) == 2);
  }
}

TEST_CASE("casia layout") {
  TempDir dir("layout");
  SUBCASE("2 subjects x 2 views x 1 condition") {
    SynthOptions opt;
    opt.num_subjects = 2;
    opt.views = {0, 90};
    opt.frames = 10;
    opt.seed = 1;
    CHECK(export_casia_layout(opt, dir.path()) == 4);
    const auto index = load_casia_layout(dir.path());
    REQUIRE(index.sequences.size() == 4);
    CHECK(index.warnings == 0);
    CHECK(index.sequences[0].subject == 1);
    CHECK(index.sequences[0].condition == Condition{Walk::NM, 1});
    CHECK(index.sequences[0].view == 0);
    CHECK(index.sequences[1].view == 90);
    CHECK(index.sequences[3].subject == 2);
    for (const auto& e : index.sequences) {
      CHECK(e.frame_count == 10);
      CHECK(e.split == Split::Train);
    }
    const auto seqs = load_sequences(index, FrameSize{32, 22});
    REQUIRE(seqs.size() == 4);
    CHECK(seqs[0].frames.shape() == Shape{10, 32, 22});
    // The in-memory and on-disk paths share one ingestion pipeline.
    opt.target = FrameSize{32, 22};
    const auto mem = synth_generate(opt);
    REQUIRE(mem.sequences.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(mem.sequences[i].subject == seqs[i].subject);
      CHECK(mem.sequences[i].view == seqs[i].view);
      CHECK((mem.sequences[i].frames.array() - seqs[i].frames.array()).abs().maxCoeff() < 1e-6);
    }
  }
  SUBCASE("empty directory") {
    const auto index = load_casia_layout(dir.path());
    CHECK(index.sequences.empty());
    CHECK(index.warnings == 0);
    CHECK(index.skipped == 0);
  }
  SUBCASE("missing root") { CHECK_THROWS_AS(load_casia_layout(dir / "absent"), IoError); }
  SUBCASE("malformed names warn, empty sequences are skipped, blank frames dropped") {
    fs::create_directories(dir / "001/nm-01/090");
    fs::create_directories(dir / "001/nm-02/090");  // no frames
    fs::create_directories(dir / "001/walking/090");
    fs::create_directories(dir / "abc/nm-01/090");
    write_png(dir / "001/nm-01/090/a.png", blob(40, 30, 15.0, 6.0));
    write_png(dir / "001/nm-01/090/b.png", Image::Zero(40, 30));
    write_png(dir / "001/nm-01/090/c.png", blob(40, 30, 14.0, 6.0));
    std::ofstream(dir / "001/nm-01/090/notes.txt") << "x";
    const auto index = load_casia_layout(dir.path());
    REQUIRE(index.sequences.size() == 1);
    CHECK(index.sequences[0].frame_count == 3);
    CHECK(index.warnings == 2);
    CHECK(index.skipped == 1);
    const auto seq = load_sequence(index.sequences[0], FrameSize{64, 44});
    CHECK(seq.length() == 2);
  }
  SUBCASE("CASIA-B split") {
    CHECK(casia_split(74) == Split::Train);
    CHECK(casia_split(75) == Split::Test);
  }
}

TEST_CASE("synthetic walkers") {
  SUBCASE("latents are a function of (seed, subject)") {
    CHECK(subject_latents(5, 3) == subject_latents(5, 3));
    CHECK(!(subject_latents(5, 3) == subject_latents(5, 4)));
    CHECK(!(subject_latents(5, 3) == subject_latents(6, 3)));
  }
  SynthOptions opt;
  opt.num_subjects = 2;
  opt.views = {90};
  opt.frames = 24;
  opt.seed = 4;
  opt.target = FrameSize{64, 44};
  SUBCASE("distinct subjects are distinguishable") {
    const auto a = render_sequence(opt, 1, Condition{Walk::NM, 1}, 90);
    const auto b = render_sequence(opt, 2, Condition{Walk::NM, 1}, 90);
    REQUIRE(a.extent(0) == 24);
    double total = 0;
    for (Index t = 0; t < 24; ++t) total += iou(a, b, t);
    CHECK(total / 24 < 0.95);
  }
  SUBCASE("frames survive normalization") {
    opt.conditions = {Walk::NM, Walk::BG, Walk::CL};
    opt.views = {0, 90, 180};
    const auto ds = synth_generate(opt);
    CHECK(ds.sequences.size() == 2 * 3 * 3);
    for (const auto& s : ds.sequences) {
      CHECK(s.length() == 24);
      CHECK(s.frames.shape() == Shape{24, 64, 44});
    }
  }
  SUBCASE("deterministic") {
    const auto a = synth_generate(opt), b = synth_generate(opt);
    for (std::size_t i = 0; i < a.sequences.size(); ++i)
      CHECK((a.sequences[i].frames.array() == b.sequences[i].frames.array()).all());
  }
  SUBCASE("too few frames") {
    opt.frames = 7;
    CHECK_THROWS_AS(opt.validate(), ConfigError);
  }
}

TEST_CASE("pk_sample") {
  std::vector<SilhouetteSequence> pool;
  for (int s = 1; s <= 10; ++s)
    for (int k = 0; k < 9; ++k) pool.push_back(numbered(s, 40 + k));
  std::mt19937_64 rng(1);
  SUBCASE("8 x 8 x 30") {
    const auto batch = pk_sample(pool, SamplerConfig{8, 8, 30}, rng);
    CHECK(batch.size() == 64);
    std::map<int, int> counts;
    for (const auto& s : batch) {
      CHECK(s.length() == 30);
      ++counts[s.subject];
      // Contiguous window.
      for (Index t = 1; t < 30; ++t) CHECK(s.frames[t] == s.frames[t - 1] + 1);
    }
    CHECK(counts.size() == 8);
    for (const auto& [subject, n] : counts) CHECK(n == 8);
  }
  SUBCASE("short sequences wrap around") {
    std::vector<SilhouetteSequence> short_pool{numbered(1, 10), numbered(1, 10), numbered(2, 10), numbered(2, 10)};
    const auto batch = pk_sample(short_pool, SamplerConfig{2, 2, 30}, rng);
    for (const auto& s : batch)
      for (Index t = 0; t < 30; ++t) CHECK(s.frames[t] == static_cast<float>(t % 10));
  }
  SUBCASE("with replacement when a subject has fewer than K sequences") {
    std::vector<SilhouetteSequence> thin{numbered(1, 30), numbered(2, 30)};
    const auto batch = pk_sample(thin, SamplerConfig{2, 3, 30}, rng);
    CHECK(batch.size() == 6);
  }
  SUBCASE("reproducible") {
    std::mt19937_64 a(9), b(9);
    const auto x = pk_sample(pool, SamplerConfig{4, 4, 30}, a), y = pk_sample(pool, SamplerConfig{4, 4, 30}, b);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(x[i].subject == y[i].subject);
      CHECK((x[i].frames.array() == y[i].frames.array()).all());
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(pk_sample(pool, SamplerConfig{11, 2, 30}, rng), SamplerError);
    CHECK_THROWS_AS(pk_sample(pool, SamplerConfig{1, 2, 30}, rng), ConfigError);
  }
}

}  // TEST_SUITE
