#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nvmeguard/slicer.hpp"

namespace nvmeguard {

inline constexpr std::size_t kRfHistogramBins = 10;
inline constexpr std::size_t kRfFeatureCount = 3 + 2 * kRfHistogramBins;
static_assert(kRfFeatureCount == 23);

inline constexpr std::size_t kDeftPunkTypes = 4;  // read, write, overwrite, multi-read
inline constexpr std::size_t kDeftPunkPerType = 10;
inline constexpr std::size_t kDeftPunkFeatureCount = kDeftPunkTypes * kDeftPunkPerType;

// f_R, f_WAR, CV_WAR, then the read-size and OV_WAR histograms.
using RfFeatureVector = std::array<double, kRfFeatureCount>;

// Histogram bin over [512 B, 2 MiB] in log2 space; values outside clamp to the
// outer bins.
std::size_t rf_histogram_bin(std::uint64_t bytes);

RfFeatureVector rf_extract_features(const Slice& slice);

// Per command type (read, write, overwrite, multi-read): count fraction, byte
// fraction, log IOPS, log MB/s, mean log2 size, size CV, offset mean and std
// (over capacity), log2 max size, sequential fraction.
std::vector<double> deftpunk_extract_features(const Slice& slice, std::uint64_t capacity);

// Indices of the cheap first-stage features (count and byte fractions).
std::vector<std::size_t> deftpunk_stage1_features();

// Flattened binary tree; `feature < 0` marks a leaf. Samples with
// x[feature] <= threshold go left.
struct TreeNode {
  std::int32_t feature = -1;
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;

  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;

  [[nodiscard]] double predict(std::span<const double> x) const;
  [[nodiscard]] std::size_t depth() const;
  bool operator==(const Tree&) const = default;
};

using FeatureMatrix = std::vector<std::vector<double>>;

struct GiniSplit {
  bool found = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  double impurity = 0.0;  // size-weighted Gini of the two children
};

// Best Gini split over the given features among samples `rows` (duplicates
// allowed). Thresholds are midpoints between distinct consecutive values.
GiniSplit best_gini_split(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                          std::span<const std::size_t> rows, std::span<const std::size_t> features);

double gini_impurity(double positives, double total);

struct TreeEnsembleConfig {
  std::size_t rf_trees = 20;
  std::size_t rf_max_depth = 20;
  std::size_t rf_max_features = 0;  // 0 = floor(sqrt(d))
  bool rf_bootstrap = true;
  std::size_t filter_max_depth = 6;
  double filter_threshold = 0.0;  // stage-1 leaf value must exceed this to pass
  std::size_t boost_rounds = 100;
  std::size_t boost_max_depth = 6;
  double boost_learning_rate = 0.1;
  double boost_lambda = 1.0;
  double boost_min_child_weight = 1.0;
  std::uint64_t seed = 0;
};

Tree build_gini_tree(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                     std::span<const std::size_t> rows, std::size_t max_depth,
                     std::size_t max_features, std::uint64_t seed);

class RandomForest {
 public:
  static RandomForest train(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                            const TreeEnsembleConfig& config);
  // Mean of the per-tree leaf positive frequencies. Throws on a length mismatch.
  [[nodiscard]] double predict(std::span<const double> features) const;

  [[nodiscard]] const std::vector<Tree>& trees() const { return trees_; }
  [[nodiscard]] std::size_t feature_count() const { return features_; }

  std::vector<Tree> trees_;
  std::size_t features_ = 0;
};

class DeftPunk {
 public:
  static DeftPunk train(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                        const TreeEnsembleConfig& config);
  // 0 when rejected by the first stage, else the boosted logistic score.
  [[nodiscard]] double predict(std::span<const double> features) const;
  [[nodiscard]] bool passes_filter(std::span<const double> features) const;

  Tree filter;
  std::vector<std::size_t> filter_features;
  double filter_threshold = 0.0;
  double base_score = 0.0;  // log-odds
  double learning_rate = 0.1;
  std::vector<Tree> boosted;
  std::size_t features_ = 0;
};

void save_random_forest(const RandomForest& model, const std::filesystem::path& path);
RandomForest load_random_forest(const std::filesystem::path& path);
void save_deftpunk(const DeftPunk& model, const std::filesystem::path& path);
DeftPunk load_deftpunk(const std::filesystem::path& path);

}  // namespace nvmeguard
