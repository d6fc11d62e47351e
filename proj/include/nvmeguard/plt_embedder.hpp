#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nvmeguard/slicer.hpp"

namespace nvmeguard {

// Layout of one patch embedding. Blocks appear in this order.
namespace embedding_layout {
inline constexpr std::size_t kLogBins = 12;
inline constexpr std::size_t kValueBins = 14;

inline constexpr std::size_t kLogSize = 3 * kLogBins;        // read, write, rest
inline constexpr std::size_t kLogOverlap = 2 * kLogBins;     // WAR, RAR
inline constexpr std::size_t kOffset = 5 * kValueBins;       // read, write, WAR, RAR, rest
inline constexpr std::size_t kLapse = 2 * kValueBins;        // WAR, RAR
inline constexpr std::size_t kDeltaT = kValueBins;           // all commands
inline constexpr std::size_t kScalars = 9;

inline constexpr std::size_t kLogSizeBegin = 0;
inline constexpr std::size_t kLogOverlapBegin = kLogSizeBegin + kLogSize;
inline constexpr std::size_t kOffsetBegin = kLogOverlapBegin + kLogOverlap;
inline constexpr std::size_t kLapseBegin = kOffsetBegin + kOffset;
inline constexpr std::size_t kDeltaTBegin = kLapseBegin + kLapse;
inline constexpr std::size_t kScalarsBegin = kDeltaTBegin + kDeltaT;
inline constexpr std::size_t kDim = kScalarsBegin + kScalars;

static_assert(kLogSize + kLogOverlap + kOffset + kLapse + kDeltaT + kScalars == 181);
static_assert(kDim == 181);
}  // namespace embedding_layout

inline constexpr std::size_t kEmbeddingDim = embedding_layout::kDim;
inline constexpr std::size_t kPatchesPerSlice = 100;
inline constexpr double kBackAverageAlpha = 0.8;

// Fixed histogram edges.
struct HistogramEdges {
  double offset_lo = -3.0;  // offset-bar: uniform over [lo, hi], tails in the outer bins
  double offset_hi = 3.0;
  double time_log2_lo = -6.0;  // delta-t-bar and lapse-bar: log2-spaced over [2^lo, 2^hi]
  double time_log2_hi = 7.0;
};

struct PatchConfig {
  SliceMode mode = SliceMode::ByCommand;
  std::size_t window_commands = 250;  // n0
  std::size_t stride_commands = 165;
  std::uint64_t window_bytes = 50ull << 20;  // v0
  std::size_t patches = kPatchesPerSlice;
  HistogramEdges edges;
};

struct PltAblation {
  bool size = false;       // log-size histograms
  bool delta_t = false;    // delta-t histogram
  bool fractions = false;  // the 9 scalar features
  bool lapse = false;      // lapse histograms
  bool offset = false;     // offset histograms
  bool overlap = false;    // log-OV histograms

  static PltAblation parse(const std::string& csv);
};

struct BackAverageState {
  double dt_size2 = 0.0;  // back-averaged delta-t weighted by size^2
  double dt_ov2 = 0.0;    // back-averaged delta-t weighted by OV^2
  std::size_t slices_seen = 0;
  double alpha = kBackAverageAlpha;
};

// Weighted average sum(q*w)/sum(w); falls back to the plain mean when all
// weights are zero. Empty input gives 0.
double weighted_mean(std::span<const double> values, std::span<const double> weights);

BackAverageState update_back_averages(const BackAverageState& state, const Slice& slice);

struct NormalizedAttributes {
  std::vector<double> offset;  // offset-bar
  std::vector<double> delta_t; // delta-t-bar
  std::vector<double> lapse;   // lapse-bar for WAR/RAR commands, 0 otherwise
};

NormalizedAttributes normalize_attributes(const Slice& slice, const BackAverageState& state);

struct Patch {
  std::size_t begin = 0;  // command indices into the slice, half-open
  std::size_t end = 0;
  bool degenerate = false;

  [[nodiscard]] std::size_t size() const { return end - begin; }
  bool operator==(const Patch&) const = default;
};

std::vector<Patch> make_patches(const Slice& slice, const PatchConfig& config);

// Raw histogram counts/weights for one patch, before scaling into the embedding.
struct PatchHistograms {
  std::array<std::array<double, embedding_layout::kLogBins>, 3> log_size{};     // counts
  std::array<std::array<double, embedding_layout::kLogBins>, 2> log_overlap{};  // counts
  std::array<std::array<double, embedding_layout::kValueBins>, 5> offset{};     // size-weighted
  std::array<std::array<double, embedding_layout::kValueBins>, 2> lapse{};      // OV-weighted
  std::array<double, embedding_layout::kValueBins> delta_t{};                   // size-weighted
};

PatchHistograms patch_histograms(const Slice& slice, const Patch& patch,
                                 const NormalizedAttributes& attrs, const HistogramEdges& edges);

struct PatchEmbedding {
  std::array<double, kEmbeddingDim> features{};
  double label_read_frac = 0.0;
  double label_write_frac = 0.0;
};

std::size_t log_bin(std::uint64_t bytes);
std::size_t offset_bin(double value, const HistogramEdges& edges);
std::size_t time_bin(double value, const HistogramEdges& edges);

PatchEmbedding embed_patch(const Slice& slice, const Patch& patch,
                           const NormalizedAttributes& attrs, const PatchConfig& config,
                           const PltAblation& ablation = {});

struct LabelFractions {
  double read = 0.0;
  double write = 0.0;
};

// Ransomware read/write bytes over total patch bytes. Throws on unlabeled commands.
LabelFractions label_patch_fractions(const Slice& slice, const Patch& patch);

// Updates `state` with the slice, then embeds and labels every patch.
std::vector<PatchEmbedding> embed_slice(const Slice& slice, BackAverageState& state,
                                        const PatchConfig& config,
                                        const PltAblation& ablation = {});

void write_embedding_dump(std::span<const PatchEmbedding> patches, std::ostream& out);
void write_embedding_dump(std::span<const PatchEmbedding> patches,
                          const std::filesystem::path& path);

}  // namespace nvmeguard
