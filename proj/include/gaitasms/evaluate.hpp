#pragma once

// Full-sequence embedding extraction, gallery/probe protocols and rank-1
// accuracy tables.

#include "gaitasms/model.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaitasms {

/// Eval-mode forward over every full sequence; empty sequences are skipped and
/// counted in `skipped`.
std::vector<EmbeddingMatrix> extract_embeddings(const std::vector<SilhouetteSequence>& sequences,
                                                const ModelConfig& cfg, const ParamStore<float>& params,
                                                std::size_t* skipped = nullptr);

EmbeddingMatrix embed_sequence(const SilhouetteSequence& sequence, const ModelConfig& cfg,
                               const ParamStore<float>& params);

/// Sum over strips of per-strip Euclidean distances.
double strip_distance(const EmbeddingMatrix& a, const EmbeddingMatrix& b);

/// Index of the nearest eligible gallery entry (first one on ties), or -1.
Index nearest_gallery(const EmbeddingMatrix& probe, const std::vector<EmbeddingMatrix>& gallery,
                      bool exclude_identical_view);

struct Rank1Cell {
  Walk walk = Walk::NM;
  std::uint32_t probe_view = 0;
  Index probes = 0;
  Index correct = 0;
  std::optional<double> accuracy;  // empty when no gallery entry is eligible
};

struct Rank1Report {
  bool exclude_identical_view = false;
  std::vector<Rank1Cell> cells;  // ordered by (walk, probe view)
  std::vector<std::pair<Walk, std::optional<double>>> condition_means;
  std::optional<double> mean;  // mean of the condition means

  std::optional<double> condition_mean(Walk w) const;
};

Rank1Report rank1_eval(const std::vector<EmbeddingMatrix>& gallery, const std::vector<EmbeddingMatrix>& probe,
                       bool exclude_identical_view);

enum class Protocol { Casia, Flat };

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GalleryProbe {
  std::vector<EmbeddingMatrix> gallery;
  std::vector<EmbeddingMatrix> probe;
};

/// Casia: gallery NM #1-4, probes NM #5-6, BG and CL. Flat: every sequence is
/// both gallery and probe.
GalleryProbe split_protocol(const std::vector<EmbeddingMatrix>& embeddings, Protocol protocol);

std::optional<Protocol> parse_protocol(const std::string& name);

/// CSV with columns condition, probe_view, gallery_view_policy, accuracy; one
/// row per cell plus a "mean" row per condition. Undefined cells are "NA".
std::string rank1_csv(const Rank1Report& report);

// --- embedding export ---------------------------------------------------------

/// Little-endian: "GASM", u32 version, u32 strips, u32 embed_dim, u32 count,
/// then per sequence u32 label, u32 view, u32 condition, f32 values row-major.
void write_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingMatrix>& embeddings);
std::vector<EmbeddingMatrix> read_embeddings(const std::filesystem::path& path);

}  // namespace gaitasms
