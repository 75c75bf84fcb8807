#pragma once

// Silhouette sequences, CASIA-B style directory ingestion, frame
// normalization and the P x K batch sampler.

#include "gaitasms/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gaitasms {

/// Single-channel image in row-major order, values in [0, 1].
using Image = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Walk : std::uint8_t { NM = 0, BG = 1, CL = 2 };

struct Condition {
  Walk walk = Walk::NM;
  int index = 1;

  /// "nm-01" style directory name.
  std::string name() const;
  /// Packed tag used by the binary formats: walk in bits 8..15, index in bits 0..7.
  std::uint32_t code() const { return (static_cast<std::uint32_t>(walk) << 8) | static_cast<std::uint32_t>(index & 0xff); }
  static Condition from_code(std::uint32_t code);
  static std::optional<Condition> parse(std::string_view name);

  friend bool operator==(const Condition&, const Condition&) = default;
  friend auto operator<=>(const Condition&, const Condition&) = default;
};

std::string walk_name(Walk w);
std::optional<Walk> parse_walk(std::string_view name);

struct FrameSize {
  Index height = 64;
  Index width = 44;
  friend bool operator==(const FrameSize&, const FrameSize&) = default;
};

/// One subject/condition/view recording; frames is T x H x W.
struct SilhouetteSequence {
  int subject = 0;
  Condition condition;
  int view = 0;
  Tensor<float> frames;

  Index length() const { return frames.empty() ? 0 : frames.extent(0); }
  Index height() const { return frames.extent(1); }
  Index width() const { return frames.extent(2); }
};

enum class Split { Train, Test };

/// Subjects 1-74 train, 75 and above test.
inline Split casia_split(int subject) { return subject <= 74 ? Split::Train : Split::Test; }

struct SequenceEntry {
  int subject = 0;
  Condition condition;
  int view = 0;
  std::filesystem::path path;
  std::vector<std::filesystem::path> frame_files;
  Index frame_count = 0;
  Split split = Split::Train;
};

struct DatasetIndex {
  std::vector<SequenceEntry> sequences;
  std::size_t skipped = 0;   // empty sequences
  std::size_t warnings = 0;  // malformed names
};

// --- frames -----------------------------------------------------------------

/// Crop to the foreground's vertical span, center horizontally on its
/// centroid, widen or narrow to the target aspect and area-resample.
/// Returns nullopt when the frame has no foreground.
std::optional<Image> normalize_frame(const Image& raw, FrameSize target);

/// Normalizes every frame of a T x H0 x W0 stack, dropping empty frames.
Tensor<float> normalize(const Tensor<float>& raw, FrameSize target);

Tensor<float> stack_frames(const std::vector<Image>& frames);
Image frame_at(const Tensor<float>& frames, Index t);

// --- PNG --------------------------------------------------------------------

/// 8-bit grayscale PNG scaled to [0, 1].
Image read_png(const std::filesystem::path& path);
/// Writes values clamped to [0, 1] as 8-bit grayscale.
void write_png(const std::filesystem::path& path, const Image& image);

// --- datasets ---------------------------------------------------------------

/// Indexes root/SSS/cond-II/VVV/*.png. Malformed names are counted as
/// warnings, empty sequences as skipped.
DatasetIndex load_casia_layout(const std::filesystem::path& root);

/// Reads, binarizes (>= 0.5) and normalizes one indexed sequence. Frames
/// without foreground are dropped; an all-empty sequence yields length 0.
SilhouetteSequence load_sequence(const SequenceEntry& entry, FrameSize target);

std::vector<SilhouetteSequence> load_sequences(const DatasetIndex& index, FrameSize target,
                                               std::optional<Split> split = std::nullopt);

// --- sampling ---------------------------------------------------------------

struct SamplerConfig {
  Index subjects = 8;   // P
  Index per_subject = 8;  // K
  Index frames = 30;    // T

  void validate() const {
    if (subjects < 2 || per_subject < 2) throw ConfigError("sampler: P and K must both be at least 2");
    if (frames < 1) throw ConfigError("sampler: T must be positive");
  }
};

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// P * K sequences cut to T frames, grouped by subject.
std::vector<SilhouetteSequence> pk_sample(const std::vector<SilhouetteSequence>& pool, const SamplerConfig& cfg,
                                          std::mt19937_64& rng);

/// T-frame window starting at `start`, wrapping cyclically past the end.
Tensor<float> frame_window(const Tensor<float>& frames, Index start, Index length);

}  // namespace gaitasms
