#include "gaitasms/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

namespace gaitasms {

namespace fs = std::filesystem;

std::string walk_name(Walk w) {
  switch (w) {
    case Walk::NM: return "nm";
    case Walk::BG: return "bg";
    case Walk::CL: return "cl";
  }
  return "nm";
}

std::optional<Walk> parse_walk(std::string_view name) {
  std::string lower(name);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "nm") return Walk::NM;
  if (lower == "bg") return Walk::BG;
  if (lower == "cl") return Walk::CL;
  return std::nullopt;
}

std::string Condition::name() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s-%02d", walk_name(walk).c_str(), index);
  return buf;
}

Condition Condition::from_code(std::uint32_t code) {
  return Condition{static_cast<Walk>((code >> 8) & 0xff), static_cast<int>(code & 0xff)};
}

std::optional<Condition> Condition::parse(std::string_view name) {
  const auto dash = name.find('-');
  if (dash == std::string_view::npos) return std::nullopt;
  auto walk = parse_walk(name.substr(0, dash));
  if (!walk) return std::nullopt;
  const auto digits = name.substr(dash + 1);
  if (digits.empty() || digits.size() > 3 || !std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    return std::nullopt;
  const int index = std::stoi(std::string(digits));
  if (index < 1 || index > 255) return std::nullopt;
  return Condition{*walk, index};
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

/// Weights mapping `count` output cells of width `step` starting at `origin`
/// onto source cells [0, extent): w(i, j) = overlap / step.
Eigen::MatrixXd area_weights(Index count, double origin, double step, Index extent) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(count, extent);
  for (Index i = 0; i < count; ++i) {
    const double a = origin + static_cast<double>(i) * step;
    const double b = a + step;
    const Index first = static_cast<Index>(std::floor(a));
    const Index last = static_cast<Index>(std::ceil(b)) - 1;
    for (Index j = std::max<Index>(first, 0); j <= std::min<Index>(last, extent - 1); ++j) {
      const double overlap = std::min(b, static_cast<double>(j + 1)) - std::max(a, static_cast<double>(j));
      if (overlap > 0) w(i, j) = overlap / step;
    }
  }
  return w;
}

}  // namespace

std::optional<Image> normalize_frame(const Image& raw, FrameSize target) {
  if (target.height < 1 || target.width < 1) throw ConfigError("normalize: target size must be positive");
  const Index rows = raw.rows(), cols = raw.cols();
  Index top = -1, bottom = -1;
  for (Index r = 0; r < rows; ++r) {
    if ((raw.row(r) > 0.0f).any()) {
      if (top < 0) top = r;
      bottom = r;
    }
  }
  if (top < 0) return std::nullopt;
  const Index span = bottom - top + 1;

  double mass = 0, moment = 0;
  for (Index r = top; r <= bottom; ++r)
    for (Index c = 0; c < cols; ++c) {
      const double v = std::max(0.0f, raw(r, c));
      mass += v;
      moment += v * static_cast<double>(c);
    }
  const double center = moment / mass + 0.5;
  const double window = static_cast<double>(span) * static_cast<double>(target.width) / static_cast<double>(target.height);
  const double left = std::round(center - window / 2.0);

  const Eigen::MatrixXd rw = area_weights(target.height, 0.0, static_cast<double>(span) / static_cast<double>(target.height), span);
  const Eigen::MatrixXd cw = area_weights(target.width, left, window / static_cast<double>(target.width), cols);
  const Eigen::MatrixXd crop = raw.middleRows(top, span).cast<double>().matrix();
  Eigen::MatrixXd out = rw * crop * cw.transpose();
  return Image(out.array().min(1.0).max(0.0).cast<float>());
}

Image frame_at(const Tensor<float>& frames, Index t) {
  const Index h = frames.extent(1), w = frames.extent(2);
  return Eigen::Map<const Image>(frames.data() + t * h * w, h, w);
}

Tensor<float> stack_frames(const std::vector<Image>& frames) {
  if (frames.empty()) return Tensor<float>{};
  const Index h = frames[0].rows(), w = frames[0].cols();
  Tensor<float> out(Shape{static_cast<Index>(frames.size()), h, w});
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].rows() != h || frames[t].cols() != w) throw ShapeError("stack_frames: frames differ in size");
    Eigen::Map<Image>(out.data() + static_cast<Index>(t) * h * w, h, w) = frames[t];
  }
  return out;
}

Tensor<float> normalize(const Tensor<float>& raw, FrameSize target) {
  if (raw.rank() != 3) throw ShapeError("normalize: expected T x H x W frames, got " + shape_string(raw.shape()));
  std::vector<Image> kept;
  for (Index t = 0; t < raw.extent(0); ++t)
    if (auto f = normalize_frame(frame_at(raw, t), target)) kept.push_back(std::move(*f));
  return stack_frames(kept);
}

// ---------------------------------------------------------------------------
// Directory layout

namespace {

std::optional<int> parse_number(const std::string& s) {
  if (s.empty() || s.size() > 6 || !std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    return std::nullopt;
  return std::stoi(s);
}

std::vector<fs::path> sorted_children(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool is_png(const fs::path& p) {
  std::string ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".png";
}

}  // namespace

DatasetIndex load_casia_layout(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("cannot read dataset root " + root.string());
  DatasetIndex index;
  try {
    for (const auto& subject_dir : sorted_children(root, true)) {
      const auto subject = parse_number(subject_dir.filename().string());
      if (!subject) {
        ++index.warnings;
        continue;
      }
      for (const auto& cond_dir : sorted_children(subject_dir, true)) {
        const auto cond = Condition::parse(cond_dir.filename().string());
        if (!cond) {
          ++index.warnings;
          continue;
        }
        for (const auto& view_dir : sorted_children(cond_dir, true)) {
          const auto view = parse_number(view_dir.filename().string());
          if (!view) {
            ++index.warnings;
            continue;
          }
          SequenceEntry entry{*subject, *cond, *view, view_dir, {}, 0, casia_split(*subject)};
          for (const auto& f : sorted_children(view_dir, false))
            if (is_png(f)) entry.frame_files.push_back(f);
          entry.frame_count = static_cast<Index>(entry.frame_files.size());
          if (entry.frame_count == 0) {
            ++index.skipped;
            continue;
          }
          index.sequences.push_back(std::move(entry));
        }
      }
    }
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("failed to scan dataset: ") + e.what());
  }
  return index;
}

SilhouetteSequence load_sequence(const SequenceEntry& entry, FrameSize target) {
  std::vector<Image> kept;
  for (const auto& f : entry.frame_files) {
    Image img = read_png(f);
    img = (img >= 0.5f).cast<float>();
    if (auto n = normalize_frame(img, target)) kept.push_back(std::move(*n));
  }
  return SilhouetteSequence{entry.subject, entry.condition, entry.view, stack_frames(kept)};
}

std::vector<SilhouetteSequence> load_sequences(const DatasetIndex& index, FrameSize target, std::optional<Split> split) {
  std::vector<SilhouetteSequence> out;
  for (const auto& e : index.sequences) {
    if (split && e.split != *split) continue;
    auto seq = load_sequence(e, target);
    if (seq.length() > 0) out.push_back(std::move(seq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

Tensor<float> frame_window(const Tensor<float>& frames, Index start, Index length) {
  const Index total = frames.extent(0), h = frames.extent(1), w = frames.extent(2);
  if (total < 1) throw ShapeError("frame_window: empty sequence");
  Tensor<float> out(Shape{length, h, w});
  for (Index t = 0; t < length; ++t) {
    const Index src = (start + t) % total;
    std::copy(frames.data() + src * h * w, frames.data() + (src + 1) * h * w, out.data() + t * h * w);
  }
  return out;
}

std::vector<SilhouetteSequence> pk_sample(const std::vector<SilhouetteSequence>& pool, const SamplerConfig& cfg,
                                          std::mt19937_64& rng) {
  cfg.validate();
  std::map<int, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i].length() > 0) by_subject[pool[i].subject].push_back(i);
  if (static_cast<Index>(by_subject.size()) < cfg.subjects)
    throw SamplerError("pk_sample: need " + std::to_string(cfg.subjects) + " subjects, only " +
                       std::to_string(by_subject.size()) + " available");

  std::vector<int> subjects;
  for (const auto& [s, _] : by_subject) subjects.push_back(s);
  // Partial Fisher-Yates: the first P entries become the chosen subjects.
  for (Index i = 0; i < cfg.subjects; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), subjects.size() - 1);
    std::swap(subjects[static_cast<std::size_t>(i)], subjects[pick(rng)]);
  }

  std::vector<SilhouetteSequence> batch;
  batch.reserve(static_cast<std::size_t>(cfg.subjects * cfg.per_subject));
  for (Index i = 0; i < cfg.subjects; ++i) {
    std::vector<std::size_t> seqs = by_subject[subjects[static_cast<std::size_t>(i)]];
    std::vector<std::size_t> chosen;
    if (static_cast<Index>(seqs.size()) >= cfg.per_subject) {
      for (Index k = 0; k < cfg.per_subject; ++k) {
        std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), seqs.size() - 1);
        std::swap(seqs[static_cast<std::size_t>(k)], seqs[pick(rng)]);
        chosen.push_back(seqs[static_cast<std::size_t>(k)]);
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, seqs.size() - 1);
      for (Index k = 0; k < cfg.per_subject; ++k) chosen.push_back(seqs[pick(rng)]);
    }
    for (std::size_t idx : chosen) {
      const auto& src = pool[idx];
      Index start = 0;
      if (src.length() > cfg.frames) {
        std::uniform_int_distribution<Index> pick(0, src.length() - cfg.frames);
        start = pick(rng);
      }
      batch.push_back(SilhouetteSequence{src.subject, src.condition, src.view, frame_window(src.frames, start, cfg.frames)});
    }
  }
  return batch;
}

}  // namespace gaitasms
