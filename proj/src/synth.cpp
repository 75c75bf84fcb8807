#include "gaitasms/synth.hpp"

#include "gaitasms/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <tuple>

namespace gaitasms {

namespace fs = std::filesystem;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::mt19937_64 stream(std::initializer_list<std::uint64_t> words) {
  std::vector<std::uint32_t> seq;
  for (auto w : words) {
    seq.push_back(static_cast<std::uint32_t>(w));
    seq.push_back(static_cast<std::uint32_t>(w >> 32));
  }
  std::seed_seq s(seq.begin(), seq.end());
  return std::mt19937_64(s);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

struct Joint {
  double s, l, z;  // sagittal (forward), lateral, height
};

struct Capsule {
  double ax, az, bx, bz, r;
};

class Projector {
 public:
  explicit Projector(int view_deg) {
    const double t = view_deg * kDeg;
    sin_ = std::sin(t);
    cos_ = std::cos(t);
    shear_ = 0.06 * sin_ * cos_;
  }
  double x(const Joint& j) const { return j.s * sin_ + j.l * cos_ + shear_ * j.z; }
  double sin() const { return std::abs(sin_); }
  double cos() const { return std::abs(cos_); }

 private:
  double sin_, cos_, shear_;
};

void draw(Image& img, const Capsule& c, double scale, double center_col, double ground_row) {
  const double ax = center_col + c.ax * scale, ay = ground_row - c.az * scale;
  const double bx = center_col + c.bx * scale, by = ground_row - c.bz * scale;
  const double r = std::max(c.r * scale, 0.5);
  const Index c0 = std::max<Index>(0, static_cast<Index>(std::floor(std::min(ax, bx) - r)));
  const Index c1 = std::min<Index>(img.cols() - 1, static_cast<Index>(std::ceil(std::max(ax, bx) + r)));
  const Index r0 = std::max<Index>(0, static_cast<Index>(std::floor(std::min(ay, by) - r)));
  const Index r1 = std::min<Index>(img.rows() - 1, static_cast<Index>(std::ceil(std::max(ay, by) + r)));
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  for (Index row = r0; row <= r1; ++row)
    for (Index col = c0; col <= c1; ++col) {
      const double px = static_cast<double>(col) + 0.5 - ax, py = static_cast<double>(row) + 0.5 - ay;
      const double u = len2 > 0 ? std::clamp((px * dx + py * dy) / len2, 0.0, 1.0) : 0.0;
      const double ex = px - u * dx, ey = py - u * dy;
      if (ex * ex + ey * ey <= r * r) img(row, col) = 1.0f;
    }
}

}  // namespace

WalkerLatents subject_latents(std::uint64_t seed, int subject) {
  auto rng = stream({seed, static_cast<std::uint64_t>(subject), 0x6c6174656e74ULL});
  WalkerLatents b;
  b.stature = uniform(rng, 0.82, 1.0);
  b.head_radius = uniform(rng, 0.052, 0.078);
  b.torso_width = uniform(rng, 0.14, 0.24);
  b.torso_depth = uniform(rng, 0.08, 0.15);
  b.leg_length = uniform(rng, 0.44, 0.54);
  b.arm_length = uniform(rng, 0.33, 0.46);
  b.limb_thickness = uniform(rng, 0.032, 0.058);
  b.stride_deg = uniform(rng, 18.0, 36.0);
  b.knee_bend_deg = uniform(rng, 12.0, 48.0);
  b.arm_swing_deg = uniform(rng, 6.0, 36.0);
  b.lean_deg = uniform(rng, -4.0, 9.0);
  b.bob = uniform(rng, 0.004, 0.022);
  b.cycle_frames = uniform(rng, 18.0, 30.0);
  return b;
}

Image render_walker(const WalkerLatents& body, const SequenceJitter& jitter, Condition condition, int view_deg,
                    Index frame, RawCanvas canvas) {
  Image img = Image::Zero(canvas.height, canvas.width);
  const Projector proj(view_deg);
  const double phi = 2.0 * std::numbers::pi *
                     (static_cast<double>(frame) / (body.cycle_frames * jitter.cycle_scale) + jitter.phase);
  const double stride = (body.stride_deg + jitter.angle_noise_deg) * kDeg;
  const double arm_swing = (body.arm_swing_deg + 0.5 * jitter.angle_noise_deg) * kDeg;
  const double knee = body.knee_bend_deg * kDeg;
  const double lean = body.lean_deg * kDeg;

  const bool coat = condition.walk == Walk::CL;
  const double torso_w = body.torso_width * (coat ? 1.35 : 1.0);
  const double torso_d = body.torso_depth * (coat ? 1.3 : 1.0);
  const double limb = body.limb_thickness / 2.0;
  const double thigh = body.leg_length * 0.5, shin = body.leg_length * 0.5;
  const double hip_z = body.leg_length * 0.97 + body.bob * std::cos(2.0 * phi);
  const double torso_len = 1.0 - body.leg_length - 2.0 * body.head_radius - 0.03;

  std::vector<Capsule> parts;
  auto segment = [&](const Joint& a, const Joint& b, double r) {
    parts.push_back({proj.x(a), a.z, proj.x(b), b.z, r});
  };

  const Joint hip{0.0, 0.0, hip_z};
  const Joint neck{torso_len * std::sin(lean), 0.0, hip_z + torso_len * std::cos(lean)};

  // Legs
  for (int side : {-1, 1}) {
    const double ph = phi + (side < 0 ? 0.0 : std::numbers::pi);
    const double a = stride * std::sin(ph);
    const double b = knee * (0.15 + 0.85 * std::max(0.0, std::cos(ph)));
    const Joint h{0.0, side * 0.38 * body.torso_width, hip_z};
    const Joint k{h.s + thigh * std::sin(a), h.l, h.z - thigh * std::cos(a)};
    const Joint an{k.s + shin * std::sin(a - b), h.l, k.z - shin * std::cos(a - b)};
    const Joint toe{an.s + 0.07, h.l, an.z};
    segment(h, k, limb * 1.15);
    segment(k, an, limb);
    segment(an, toe, limb * 0.7);
  }

  // Torso: projected half-width blends frontal width and lateral depth.
  const double half = 0.5 * (torso_d * proj.sin() + torso_w * proj.cos());
  const Joint torso_lo{hip.s, 0.0, hip.z + (coat ? -0.10 : 0.03)};
  const Joint torso_hi{neck.s, 0.0, neck.z - half * 0.6};
  segment(torso_lo, torso_hi, half);

  // Arms swing against the leg on the same side.
  for (int side : {-1, 1}) {
    const double ph = phi + (side < 0 ? std::numbers::pi : 0.0);
    const double g = arm_swing * std::sin(ph);
    const double e = 0.15 + 0.6 * std::abs(g);
    const Joint sh{neck.s, side * (0.5 * torso_w + limb), neck.z - 0.02};
    const double upper = body.arm_length * 0.52, fore = body.arm_length * 0.48;
    const Joint el{sh.s + upper * std::sin(g), sh.l, sh.z - upper * std::cos(g)};
    const Joint wr{el.s + fore * std::sin(g + e), sh.l, el.z - fore * std::cos(g + e)};
    segment(sh, el, limb * 0.95);
    segment(el, wr, limb * 0.85);
  }

  // Head
  const Joint head{neck.s + 0.01, 0.0, neck.z + body.head_radius + 0.01};
  segment(head, head, body.head_radius);

  if (condition.walk == Walk::BG) {
    const Joint top{0.02, 0.5 * torso_w + 0.05, hip_z + 0.10};
    const Joint bottom{0.04, 0.5 * torso_w + 0.06, hip_z - 0.06};
    segment(top, bottom, 0.065);
  }

  const double scale = static_cast<double>(canvas.height) * 0.78 * body.stature;
  const double ground = static_cast<double>(canvas.height) - 6.0;
  const double center = static_cast<double>(canvas.width) / 2.0 + jitter.drift * static_cast<double>(frame);
  for (const auto& c : parts) draw(img, c, scale, center, ground);
  return img;
}

void SynthOptions::validate() const {
  if (num_subjects < 1) throw ConfigError("synth: subject count must be positive");
  if (first_subject < 1) throw ConfigError("synth: subject ids start at 1");
  if (sequences_per_condition < 1 || sequences_per_condition > 99)
    throw ConfigError("synth: sequences per condition must lie in [1, 99]");
  if (views.empty()) throw ConfigError("synth: at least one view is required");
  for (int v : views)
    if (v < 0 || v > 359) throw ConfigError("synth: views must lie in [0, 359] degrees");
  if (conditions.empty()) throw ConfigError("synth: at least one condition is required");
  if (frames < 8) throw ConfigError("synth: at least 8 frames are needed to cover a gait cycle");
  if (target.height < 2 || target.width < 2) throw ConfigError("synth: target frame size too small");
  if (canvas.height < 32 || canvas.width < 24) throw ConfigError("synth: raw canvas too small");
}

namespace {

SequenceJitter sequence_jitter(std::uint64_t seed, int subject, Condition condition, int view) {
  auto rng = stream({seed, static_cast<std::uint64_t>(subject), condition.code(), static_cast<std::uint64_t>(view),
                     0x6a6974746572ULL});
  SequenceJitter j;
  j.phase = uniform(rng, 0.0, 1.0);
  j.cycle_scale = uniform(rng, 0.95, 1.05);
  j.angle_noise_deg = uniform(rng, -2.0, 2.0);
  j.drift = uniform(rng, -0.15, 0.15);
  return j;
}

std::vector<SequenceEntry> plan(const SynthOptions& opt) {
  std::vector<SequenceEntry> entries;
  for (int s = opt.first_subject; s < opt.first_subject + opt.num_subjects; ++s)
    for (Walk w : opt.conditions)
      for (int i = 1; i <= opt.sequences_per_condition; ++i)
        for (int v : opt.views) entries.push_back(SequenceEntry{s, Condition{w, i}, v, {}, {}, opt.frames, casia_split(s)});
  // Same order the directory scan produces.
  std::sort(entries.begin(), entries.end(), [](const SequenceEntry& a, const SequenceEntry& b) {
    return std::tuple(a.subject, a.condition.name(), a.view) < std::tuple(b.subject, b.condition.name(), b.view);
  });
  entries.erase(std::unique(entries.begin(), entries.end(),
                            [](const SequenceEntry& a, const SequenceEntry& b) {
                              return a.subject == b.subject && a.condition == b.condition && a.view == b.view;
                            }),
                entries.end());
  return entries;
}

}  // namespace

Tensor<float> render_sequence(const SynthOptions& opt, int subject, Condition condition, int view) {
  const WalkerLatents body = subject_latents(opt.seed, subject);
  const SequenceJitter jitter = sequence_jitter(opt.seed, subject, condition, view);
  Tensor<float> raw(Shape{opt.frames, opt.canvas.height, opt.canvas.width});
  const Index plane = opt.canvas.height * opt.canvas.width;
  for (Index t = 0; t < opt.frames; ++t) {
    const Image f = render_walker(body, jitter, condition, view, t, opt.canvas);
    std::copy(f.data(), f.data() + plane, raw.data() + t * plane);
  }
  return raw;
}

SyntheticDataset synth_generate(const SynthOptions& opt) {
  opt.validate();
  SyntheticDataset out;
  out.index.sequences = plan(opt);
  out.sequences.resize(out.index.sequences.size());
  parallel_for(static_cast<Index>(out.sequences.size()), [&](Index i) {
    const auto& e = out.index.sequences[static_cast<std::size_t>(i)];
    out.sequences[static_cast<std::size_t>(i)] =
        SilhouetteSequence{e.subject, e.condition, e.view, normalize(render_sequence(opt, e.subject, e.condition, e.view), opt.target)};
  });
  return out;
}

std::size_t export_casia_layout(const SynthOptions& opt, const fs::path& root) {
  opt.validate();
  const auto entries = plan(opt);
  for (const auto& e : entries) {
    char subject[8], view[8];
    std::snprintf(subject, sizeof subject, "%03d", e.subject);
    std::snprintf(view, sizeof view, "%03d", e.view);
    const fs::path dir = root / subject / e.condition.name() / view;
    fs::create_directories(dir);
    const Tensor<float> raw = render_sequence(opt, e.subject, e.condition, e.view);
    for (Index t = 0; t < raw.extent(0); ++t) {
      char name[64];
      std::snprintf(name, sizeof name, "%s-%s-%s-%03d.png", subject, e.condition.name().c_str(), view,
                    static_cast<int>(t + 1));
      write_png(dir / name, frame_at(raw, t));
    }
  }
  return entries.size();
}

}  // namespace gaitasms
