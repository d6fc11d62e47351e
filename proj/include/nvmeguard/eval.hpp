#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nvmeguard/slicer.hpp"

namespace nvmeguard {

inline constexpr double kBytesPerMegabyte = 1e6;
inline constexpr double kBytesPerGigabyte = 1e9;
inline constexpr double kDefaultGigabytesPerAlarm = 50.0;
inline constexpr double kDefaultMbdQuantile = 0.75;

struct SlicePrediction {
  std::string stream_id;
  std::size_t slice_index = 0;
  double probability = 0.0;
  bool ransomware = false;  // slice contains at least one ransomware command
  bool partial = false;     // trailing slice below its budget
  std::uint64_t benign_bytes = 0;
  std::uint64_t ransomware_bytes = 0;
  std::uint64_t ransomware_write_bytes = 0;
};

// Fills the truth and byte fields from the slice itself.
SlicePrediction describe_slice(const Slice& slice, double probability);

// A slice is flagged when probability > threshold.
inline bool flagged(const SlicePrediction& p, double threshold) { return p.probability > threshold; }

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct ConfusionMetrics {
  Confusion counts;
  std::optional<double> mdr;  // fractions in [0,1]; absent when undefined
  std::optional<double> far;
  std::optional<double> f1;
};

ConfusionMetrics confusion_metrics(std::span<const SlicePrediction> predictions, double threshold);

struct MbdResult {
  double megabytes = 0.0;
  bool missed = false;
};

// `stream` holds one ransomware stream's predictions in slice order.
MbdResult compute_mbd(std::span<const SlicePrediction> stream, double threshold);

// Linear-interpolation quantile (the (n-1)q order-statistic rule).
double mbd_quantile(std::vector<double> samples, double q = kDefaultMbdQuantile);

struct VolumeMetrics {
  std::optional<double> p_miss;  // fractions
  std::optional<double> p_err;
};

VolumeMetrics volume_metrics(std::span<const SlicePrediction> predictions, double threshold);

struct Calibration {
  double threshold = 1.0;
  std::size_t allowed_false_alarms = 0;
  std::size_t false_alarms = 0;
  bool reachable = true;
};

// Smallest threshold among {0} and the benign probabilities whose false alarms
// stay within floor(benign_GB / gb_per_alarm). Partial slices are skipped
// unless `include_partial`.
Calibration calibrate_threshold(std::span<const SlicePrediction> validation,
                                double gb_per_alarm = kDefaultGigabytesPerAlarm,
                                bool include_partial = false);

struct FoldResult {
  double threshold = 0.0;
  ConfusionMetrics confusion;
  VolumeMetrics volume;
  std::vector<double> mbd_samples;  // MB, one per ransomware test stream
  std::size_t missed_streams = 0;
  std::optional<double> mbd_q;
  std::vector<std::string> validation_streams;
  std::vector<std::string> test_streams;
};

struct MetricSummary {
  std::optional<double> mean;  // absent when no fold defines the metric
  double sigma_folds = 0.0;    // sample std over folds
  double sigma_binomial = 0.0; // mean Wilson half-width (zero where not a proportion)
  double sigma = 0.0;          // quadrature sum of the two
};

struct MetricsReport {
  MetricSummary mdr, far, f1, p_miss, p_err, mbd_q;
  double quantile = kDefaultMbdQuantile;
  std::vector<double> mbd_samples;  // pooled over folds
  std::size_t missed_streams = 0;
  std::vector<FoldResult> folds;
};

struct CrossValidationConfig {
  std::size_t repeats = 50;
  std::uint64_t seed = 0;
  double quantile = kDefaultMbdQuantile;
  double gb_per_alarm = kDefaultGigabytesPerAlarm;
  std::size_t threads = 1;
  bool calibrate_on_partial = false;
};

// Wilson score half-width at z = 1 for k successes out of n.
double wilson_half_width(std::size_t k, std::size_t n);

// Stream-level 1:2 validation/test split stratified by whether a stream holds
// ransomware; each fold calibrates on validation and scores test.
MetricsReport cross_validate(std::span<const SlicePrediction> predictions,
                             const CrossValidationConfig& config);

// Scores one fixed split; cross_validate calls this per fold.
FoldResult evaluate_split(std::span<const SlicePrediction> predictions,
                          const std::vector<std::string>& validation_streams,
                          const std::vector<std::string>& test_streams, double quantile,
                          double gb_per_alarm, bool calibrate_on_partial = false);

struct FramePrediction {
  std::vector<double> probabilities;  // one per command
  std::vector<std::uint8_t> labels;
};

struct PositionalAccuracy {
  std::vector<double> accuracy;  // NaN where no frame reaches the position
  std::vector<std::size_t> counts;
};

PositionalAccuracy positional_accuracy(std::span<const FramePrediction> frames,
                                       double threshold = 0.5);

struct StreamInfo {
  std::string stream_id;
  bool ransomware = false;
  std::optional<std::string> family;
};

struct GroupFold {
  std::vector<std::string> ood_families;
  std::vector<std::string> train;
  std::vector<std::string> id_test;
  std::vector<std::string> ood_test;
};

// Families are sorted and dealt round-robin into `folds` groups; fold k holds
// out group k as the out-of-distribution test set. Every third stream of each
// in-distribution family (and every third benign stream) goes to test.
std::vector<GroupFold> group_split(std::span<const StreamInfo> streams, std::size_t folds = 3);

void write_predictions_csv(std::span<const SlicePrediction> predictions, std::ostream& out);
std::vector<SlicePrediction> read_predictions_csv(const std::filesystem::path& path);

// name,value,sigma rows; metrics in percent, MBD in MB.
void write_metrics_csv(const MetricsReport& report, std::ostream& out);
// mbd_mb,cdf rows of the pooled empirical CDF.
void write_mbd_cdf_csv(std::span<const double> samples, std::ostream& out);
std::string metrics_json(const MetricsReport& report);

}  // namespace nvmeguard
