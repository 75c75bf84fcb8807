#include "gaitasms/evaluate.hpp"

#include "gaitasms/parallel.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace gaitasms {

EmbeddingMatrix embed_sequence(const SilhouetteSequence& sequence, const ModelConfig& cfg,
                               const ParamStore<float>& params) {
  ParamStore<float> local = params;  // bind needs mutable BN stats; eval mode never writes them
  Tape<float> tape;
  tape.set_finite_check(false);
  const auto bound = bind_parameters(tape, local, false);
  const auto x = tape.constant(stack_sequences({sequence}));
  const auto out = model_forward(x, cfg, bound, false);
  const Index strips = out.embeddings.shape()[1], dim = out.embeddings.shape()[2];
  EmbeddingMatrix e;
  e.values = Eigen::Map<const RowMatrix<float>>(out.embeddings.value().data(), strips, dim);
  e.label = static_cast<std::uint32_t>(sequence.subject);
  e.view = static_cast<std::uint32_t>(sequence.view);
  e.condition = sequence.condition.code();
  return e;
}

std::vector<EmbeddingMatrix> extract_embeddings(const std::vector<SilhouetteSequence>& sequences,
                                                const ModelConfig& cfg, const ParamStore<float>& params,
                                                std::size_t* skipped) {
  std::vector<const SilhouetteSequence*> kept;
  for (const auto& s : sequences)
    if (s.length() > 0) kept.push_back(&s);
  if (skipped) *skipped = sequences.size() - kept.size();
  std::vector<EmbeddingMatrix> out(kept.size());
  parallel_for(static_cast<Index>(kept.size()), [&](Index i) {
    out[static_cast<std::size_t>(i)] = embed_sequence(*kept[static_cast<std::size_t>(i)], cfg, params);
  });
  return out;
}

double strip_distance(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols())
    throw ShapeError("strip_distance: embeddings differ in shape");
  return (a.values.cast<double>() - b.values.cast<double>()).rowwise().norm().sum();
}

Index nearest_gallery(const EmbeddingMatrix& probe, const std::vector<EmbeddingMatrix>& gallery,
                      bool exclude_identical_view) {
  Index best = -1;
  double best_d = 0;
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    if (exclude_identical_view && gallery[g].view == probe.view) continue;
    const double d = strip_distance(probe, gallery[g]);
    if (best < 0 || d < best_d) {
      best = static_cast<Index>(g);
      best_d = d;
    }
  }
  return best;
}

std::optional<double> Rank1Report::condition_mean(Walk w) const {
  for (const auto& [walk, m] : condition_means)
    if (walk == w) return m;
  return std::nullopt;
}

Rank1Report rank1_eval(const std::vector<EmbeddingMatrix>& gallery, const std::vector<EmbeddingMatrix>& probe,
                       bool exclude_identical_view) {
  Rank1Report report;
  report.exclude_identical_view = exclude_identical_view;
  std::map<std::pair<Walk, std::uint32_t>, Rank1Cell> cells;
  for (const auto& p : probe) {
    const Walk walk = Condition::from_code(p.condition).walk;
    auto& cell = cells[{walk, p.view}];
    cell.walk = walk;
    cell.probe_view = p.view;
    const Index g = nearest_gallery(p, gallery, exclude_identical_view);
    if (g < 0) continue;
    ++cell.probes;
    if (gallery[static_cast<std::size_t>(g)].label == p.label) ++cell.correct;
  }
  std::map<Walk, std::pair<double, int>> sums;
  for (auto& [key, cell] : cells) {
    if (cell.probes > 0) {
      cell.accuracy = static_cast<double>(cell.correct) / static_cast<double>(cell.probes);
      sums[cell.walk].first += *cell.accuracy;
      ++sums[cell.walk].second;
    } else {
      sums.try_emplace(cell.walk, 0.0, 0);
    }
    report.cells.push_back(cell);
  }
  double total = 0;
  int defined = 0;
  for (const auto& [walk, s] : sums) {
    std::optional<double> m;
    if (s.second > 0) {
      m = s.first / s.second;
      total += *m;
      ++defined;
    }
    report.condition_means.emplace_back(walk, m);
  }
  if (defined > 0) report.mean = total / defined;
  return report;
}

std::optional<Protocol> parse_protocol(const std::string& name) {
  if (name == "casia") return Protocol::Casia;
  if (name == "flat") return Protocol::Flat;
  return std::nullopt;
}

GalleryProbe split_protocol(const std::vector<EmbeddingMatrix>& embeddings, Protocol protocol) {
  GalleryProbe out;
  if (protocol == Protocol::Flat) {
    out.gallery = embeddings;
    out.probe = embeddings;
    return out;
  }
  std::set<std::uint32_t> subjects, with_gallery;
  for (const auto& e : embeddings) {
    const Condition c = Condition::from_code(e.condition);
    subjects.insert(e.label);
    if (c.walk == Walk::NM && c.index >= 1 && c.index <= 4) {
      out.gallery.push_back(e);
      with_gallery.insert(e.label);
    } else if (c.walk != Walk::NM || c.index >= 5) {
      out.probe.push_back(e);
    }
  }
  std::vector<std::uint32_t> missing;
  for (auto s : subjects)
    if (!with_gallery.count(s)) missing.push_back(s);
  if (!missing.empty()) {
    std::ostringstream os;
    os << "casia protocol: no NM #1-4 gallery sequences for subject(s)";
    for (auto s : missing) os << " " << s;
    throw ProtocolError(os.str());
  }
  if (out.probe.empty()) throw ProtocolError("casia protocol: no probe sequences (NM #5-6, BG, CL)");
  return out;
}

std::string rank1_csv(const Rank1Report& report) {
  const std::string policy = report.exclude_identical_view ? "exclude-identical-view" : "all-views";
  auto fmt = [](const std::optional<double>& a) {
    if (!a) return std::string("NA");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *a);
    return std::string(buf);
  };
  std::ostringstream os;
  os << "condition,probe_view,gallery_view_policy,accuracy\n";
  for (const auto& c : report.cells)
    os << walk_name(c.walk) << ',' << c.probe_view << ',' << policy << ',' << fmt(c.accuracy) << '\n';
  for (const auto& [walk, m] : report.condition_means) os << walk_name(walk) << ",mean," << policy << ',' << fmt(m) << '\n';
  return os.str();
}

}  // namespace gaitasms
