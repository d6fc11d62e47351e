#include "nvmeguard/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "nvmeguard/log.hpp"
#include "nvmeguard/seed.hpp"

namespace nvmeguard {
namespace {

std::map<std::string, std::vector<SlicePrediction>> by_stream(
    std::span<const SlicePrediction> predictions) {
  std::map<std::string, std::vector<SlicePrediction>> out;
  for (const auto& p : predictions) out[p.stream_id].push_back(p);
  for (auto& [id, v] : out) {
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      return a.slice_index < b.slice_index;
    });
  }
  return out;
}

std::vector<SlicePrediction> select(const std::map<std::string, std::vector<SlicePrediction>>& g,
                                    const std::vector<std::string>& ids) {
  std::vector<SlicePrediction> out;
  for (const auto& id : ids) {
    auto it = g.find(id);
    if (it == g.end()) throw std::invalid_argument("unknown stream " + id);
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

bool holds_ransomware(const std::vector<SlicePrediction>& stream) {
  return std::any_of(stream.begin(), stream.end(), [](const auto& p) { return p.ransomware; });
}

void shuffle_ids(std::vector<std::string>& ids, std::mt19937_64& rng) {
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng() % i)]);
  }
}

std::optional<double> ratio(double num, double den) {
  if (den <= 0.0) return std::nullopt;
  return num / den;
}

MetricSummary summarize(const std::vector<std::optional<double>>& values,
                        const std::vector<double>& binomial) {
  MetricSummary s;
  std::vector<double> v;
  for (const auto& x : values) {
    if (x) v.push_back(*x);
  }
  if (v.empty()) return s;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  s.mean = mean;
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    s.sigma_folds = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  if (!binomial.empty()) {
    double b = 0.0;
    for (double x : binomial) b += x;
    s.sigma_binomial = b / static_cast<double>(binomial.size());
  }
  s.sigma = std::hypot(s.sigma_folds, s.sigma_binomial);
  return s;
}

}  // namespace

SlicePrediction describe_slice(const Slice& slice, double probability) {
  SlicePrediction p;
  p.stream_id = slice.stream_id;
  p.slice_index = slice.slice_index;
  p.probability = probability;
  p.partial = slice.partial;
  for (const auto& c : slice.commands) {
    if (c.base.label == Label::Ransomware) {
      p.ransomware = true;
      p.ransomware_bytes += c.base.size;
      if (c.base.is_write()) p.ransomware_write_bytes += c.base.size;
    } else {
      p.benign_bytes += c.base.size;
    }
  }
  return p;
}

ConfusionMetrics confusion_metrics(std::span<const SlicePrediction> predictions,
                                   double threshold) {
  ConfusionMetrics m;
  auto& c = m.counts;
  for (const auto& p : predictions) {
    const bool f = flagged(p, threshold);
    if (p.ransomware) {
      (f ? c.tp : c.fn)++;
    } else {
      (f ? c.fp : c.tn)++;
    }
  }
  m.mdr = ratio(double(c.fn), double(c.tp + c.fn));
  m.far = ratio(double(c.fp), double(c.fp + c.tn));
  const auto precision = ratio(double(c.tp), double(c.tp + c.fp));
  const auto recall = ratio(double(c.tp), double(c.tp + c.fn));
  if (precision && recall) {
    m.f1 = (*precision + *recall) > 0.0 ? 2.0 * *precision * *recall / (*precision + *recall) : 0.0;
  }
  return m;
}

MbdResult compute_mbd(std::span<const SlicePrediction> stream, double threshold) {
  if (std::none_of(stream.begin(), stream.end(), [](const auto& p) { return p.ransomware; })) {
    throw std::invalid_argument("MBD needs a ransomware stream");
  }
  MbdResult r;
  double bytes = 0.0;
  for (const auto& p : stream) {
    bytes += static_cast<double>(p.ransomware_write_bytes);
    if (flagged(p, threshold)) {
      r.megabytes = bytes / kBytesPerMegabyte;
      return r;
    }
  }
  r.megabytes = bytes / kBytesPerMegabyte;
  r.missed = true;
  return r;
}

double mbd_quantile(std::vector<double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("no MBD samples");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile must lie in [0,1]");
  std::sort(samples.begin(), samples.end());
  const double pos = q * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, samples.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return samples[lo] + frac * (samples[hi] - samples[lo]);
}

VolumeMetrics volume_metrics(std::span<const SlicePrediction> predictions, double threshold) {
  double r_total = 0.0;
  double r_missed = 0.0;
  double b_total = 0.0;
  double b_err = 0.0;
  for (const auto& p : predictions) {
    const bool f = flagged(p, threshold);
    r_total += static_cast<double>(p.ransomware_bytes);
    b_total += static_cast<double>(p.benign_bytes);
    if (p.ransomware && !f) r_missed += static_cast<double>(p.ransomware_bytes);
    if (!p.ransomware && f) b_err += static_cast<double>(p.benign_bytes);
  }
  return {ratio(r_missed, r_total), ratio(b_err, b_total)};
}

Calibration calibrate_threshold(std::span<const SlicePrediction> validation,
                                double gb_per_alarm, bool include_partial) {
  if (!(gb_per_alarm > 0.0)) throw std::invalid_argument("alarm rate must be positive");
  double benign_bytes = 0.0;
  std::vector<double> benign;
  for (const auto& p : validation) {
    if (p.partial && !include_partial) continue;
    benign_bytes += static_cast<double>(p.benign_bytes);
    if (!p.ransomware) benign.push_back(p.probability);
  }
  if (benign.empty()) throw std::invalid_argument("validation set has no benign slices");
  Calibration c;
  c.allowed_false_alarms =
      static_cast<std::size_t>(std::floor(benign_bytes / kBytesPerGigabyte / gb_per_alarm));
  std::sort(benign.begin(), benign.end(), std::greater<>());
  // false alarms at t are the benign probabilities strictly above t
  if (benign.size() <= c.allowed_false_alarms) {
    c.threshold = 0.0;
  } else {
    c.threshold = benign[c.allowed_false_alarms];
  }
  c.false_alarms = static_cast<std::size_t>(
      std::count_if(benign.begin(), benign.end(), [&](double p) { return p > c.threshold; }));
  if (c.threshold >= 1.0) {
    c.reachable = false;
    log_warning("false-alarm budget only reachable at threshold 1.0");
  }
  return c;
}

double wilson_half_width(std::size_t k, std::size_t n) {
  if (n == 0) return 0.0;
  const double z = 1.0;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(k) / nn;
  return z / (1.0 + z * z / nn) * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn));
}

FoldResult evaluate_split(std::span<const SlicePrediction> predictions,
                          const std::vector<std::string>& validation_streams,
                          const std::vector<std::string>& test_streams, double quantile,
                          double gb_per_alarm, bool calibrate_on_partial) {
  const auto groups = by_stream(predictions);
  FoldResult f;
  f.validation_streams = validation_streams;
  f.test_streams = test_streams;
  const auto val = select(groups, validation_streams);
  const auto test = select(groups, test_streams);
  f.threshold = calibrate_threshold(val, gb_per_alarm, calibrate_on_partial).threshold;
  f.confusion = confusion_metrics(test, f.threshold);
  f.volume = volume_metrics(test, f.threshold);
  for (const auto& id : test_streams) {
    const auto& s = groups.at(id);
    if (!holds_ransomware(s)) continue;
    const auto m = compute_mbd(s, f.threshold);
    f.mbd_samples.push_back(m.megabytes);
    if (m.missed) ++f.missed_streams;
  }
  if (!f.mbd_samples.empty()) f.mbd_q = mbd_quantile(f.mbd_samples, quantile);
  return f;
}

MetricsReport cross_validate(std::span<const SlicePrediction> predictions,
                             const CrossValidationConfig& config) {
  if (config.repeats == 0) throw std::invalid_argument("repeats must be positive");
  const auto groups = by_stream(predictions);
  std::vector<std::string> benign_ids;
  std::vector<std::string> ransom_ids;
  for (const auto& [id, v] : groups) (holds_ransomware(v) ? ransom_ids : benign_ids).push_back(id);
  if (benign_ids.size() < 2 || ransom_ids.size() < 2) {
    throw std::invalid_argument("need at least two benign and two ransomware streams to split");
  }

  MetricsReport report;
  report.quantile = config.quantile;
  report.folds.resize(config.repeats);
  auto run_fold = [&](std::size_t r) {
    std::mt19937_64 rng(derive_seed(config.seed, r));
    std::vector<std::string> val;
    std::vector<std::string> test;
    for (auto ids : {benign_ids, ransom_ids}) {
      shuffle_ids(ids, rng);
      const auto nv = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::lround(static_cast<double>(ids.size()) / 3.0)));
      val.insert(val.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(nv));
      test.insert(test.end(), ids.begin() + static_cast<std::ptrdiff_t>(nv), ids.end());
    }
    report.folds[r] = evaluate_split(predictions, val, test, config.quantile, config.gb_per_alarm,
                                    config.calibrate_on_partial);
  };
  const std::size_t threads = std::clamp<std::size_t>(config.threads, 1, config.repeats);
  if (threads == 1) {
    for (std::size_t r = 0; r < config.repeats; ++r) run_fold(r);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t r = t; r < config.repeats; r += threads) run_fold(r);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<std::optional<double>> mdr, far, f1, pm, pe, mq;
  std::vector<double> mdr_b, far_b;
  for (const auto& f : report.folds) {
    const auto& c = f.confusion.counts;
    mdr.push_back(f.confusion.mdr);
    far.push_back(f.confusion.far);
    f1.push_back(f.confusion.f1);
    pm.push_back(f.volume.p_miss);
    pe.push_back(f.volume.p_err);
    mq.push_back(f.mbd_q);
    if (f.confusion.mdr) mdr_b.push_back(wilson_half_width(c.fn, c.tp + c.fn));
    if (f.confusion.far) far_b.push_back(wilson_half_width(c.fp, c.fp + c.tn));
    report.mbd_samples.insert(report.mbd_samples.end(), f.mbd_samples.begin(),
                              f.mbd_samples.end());
    report.missed_streams += f.missed_streams;
  }
  report.mdr = summarize(mdr, mdr_b);
  report.far = summarize(far, far_b);
  report.f1 = summarize(f1, {});
  report.p_miss = summarize(pm, {});
  report.p_err = summarize(pe, {});
  report.mbd_q = summarize(mq, {});
  return report;
}

PositionalAccuracy positional_accuracy(std::span<const FramePrediction> frames, double threshold) {
  std::size_t len = 0;
  for (const auto& f : frames) {
    if (f.probabilities.size() != f.labels.size()) {
      throw std::invalid_argument("frame probabilities and labels differ in length");
    }
    len = std::max(len, f.labels.size());
  }
  PositionalAccuracy out;
  std::vector<double> correct(len, 0.0);
  out.counts.assign(len, 0);
  for (const auto& f : frames) {
    for (std::size_t i = 0; i < f.labels.size(); ++i) {
      const bool pred = f.probabilities[i] > threshold;
      if (pred == (f.labels[i] != 0)) correct[i] += 1.0;
      ++out.counts[i];
    }
  }
  out.accuracy.resize(len);
  for (std::size_t i = 0; i < len; ++i) {
    out.accuracy[i] = out.counts[i] ? correct[i] / static_cast<double>(out.counts[i])
                                    : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

std::vector<GroupFold> group_split(std::span<const StreamInfo> streams, std::size_t folds) {
  if (folds < 2) throw std::invalid_argument("group split needs at least two folds");
  std::map<std::string, std::vector<std::string>> families;
  std::vector<std::string> benign;
  for (const auto& s : streams) {
    if (!s.ransomware) {
      benign.push_back(s.stream_id);
      continue;
    }
    if (!s.family || s.family->empty()) {
      throw std::invalid_argument("ransomware stream " + s.stream_id + " has no family tag");
    }
    families[*s.family].push_back(s.stream_id);
  }
  if (families.size() < folds) throw std::invalid_argument("fewer families than folds");
  std::sort(benign.begin(), benign.end());

  std::vector<GroupFold> out(folds);
  std::size_t idx = 0;
  std::vector<std::size_t> group_of;
  for (auto& [name, ids] : families) {
    std::sort(ids.begin(), ids.end());
    group_of.push_back(idx++ % folds);
  }
  for (std::size_t k = 0; k < folds; ++k) {
    auto& f = out[k];
    std::size_t fi = 0;
    for (const auto& [name, ids] : families) {
      if (group_of[fi++] == k) {
        f.ood_families.push_back(name);
        f.ood_test.insert(f.ood_test.end(), ids.begin(), ids.end());
        continue;
      }
      for (std::size_t i = 0; i < ids.size(); ++i) {
        (i % 3 == 2 ? f.id_test : f.train).push_back(ids[i]);
      }
    }
    for (std::size_t i = 0; i < benign.size(); ++i) {
      if (i % 3 == 2) {
        f.id_test.push_back(benign[i]);
        f.ood_test.push_back(benign[i]);
      } else {
        f.train.push_back(benign[i]);
      }
    }
  }
  return out;
}

void write_predictions_csv(std::span<const SlicePrediction> predictions, std::ostream& out) {
  out << "stream_id,slice_index,probability,ransomware,partial,benign_bytes,ransomware_bytes,"
         "ransomware_write_bytes\n";
  out.precision(17);
  for (const auto& p : predictions) {
    out << p.stream_id << ',' << p.slice_index << ',' << p.probability << ','
        << (p.ransomware ? 1 : 0) << ',' << (p.partial ? 1 : 0) << ',' << p.benign_bytes << ',' << p.ransomware_bytes << ','
        << p.ransomware_write_bytes << '\n';
  }
}

std::vector<SlicePrediction> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<SlicePrediction> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 8) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected 8 fields");
    }
    try {
      SlicePrediction p;
      p.stream_id = f[0];
      p.slice_index = std::stoull(f[1]);
      p.probability = std::stod(f[2]);
      p.ransomware = f[3] == "1";
      p.partial = f[4] == "1";
      p.benign_bytes = std::stoull(f[5]);
      p.ransomware_bytes = std::stoull(f[6]);
      p.ransomware_write_bytes = std::stoull(f[7]);
      out.push_back(std::move(p));
    } catch (const std::logic_error&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

namespace {

struct Row {
  std::string name;
  const MetricSummary* metric;
  double scale;
};

std::vector<Row> report_rows(const MetricsReport& r) {
  return {{"MDR_percent", &r.mdr, 100.0},       {"FAR_percent", &r.far, 100.0},
          {"F1_percent", &r.f1, 100.0},         {"P_miss_percent", &r.p_miss, 100.0},
          {"P_err_percent", &r.p_err, 100.0},   {"MBD_q_MB", &r.mbd_q, 1.0}};
}

}  // namespace

void write_metrics_csv(const MetricsReport& report, std::ostream& out) {
  out << "name,value,sigma\n";
  out.precision(10);
  for (const auto& row : report_rows(report)) {
    out << row.name << ',';
    if (row.metric->mean) out << *row.metric->mean * row.scale;
    out << ',' << row.metric->sigma * row.scale << '\n';
  }
  out << "quantile," << report.quantile << ",0\n";
  out << "folds," << report.folds.size() << ",0\n";
  out << "missed_streams," << report.missed_streams << ",0\n";
}

void write_mbd_cdf_csv(std::span<const double> samples, std::ostream& out) {
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  out << "mbd_mb,cdf\n";
  out.precision(10);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i + 1 < s.size() && s[i + 1] == s[i]) continue;
    out << s[i] << ',' << static_cast<double>(i + 1) / static_cast<double>(s.size()) << '\n';
  }
}

std::string metrics_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  for (const auto& row : report_rows(report)) {
    nlohmann::ordered_json m;
    m["value"] = row.metric->mean ? nlohmann::ordered_json(*row.metric->mean * row.scale)
                                  : nlohmann::ordered_json(nullptr);
    m["sigma"] = row.metric->sigma * row.scale;
    j[row.name] = m;
  }
  j["quantile"] = report.quantile;
  j["folds"] = report.folds.size();
  j["missed_streams"] = report.missed_streams;
  std::vector<double> s = report.mbd_samples;
  std::sort(s.begin(), s.end());
  nlohmann::ordered_json cdf = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i + 1 < s.size() && s[i + 1] == s[i]) continue;
    cdf.push_back({{"mbd_mb", s[i]},
                   {"cdf", static_cast<double>(i + 1) / static_cast<double>(s.size())}});
  }
  j["mbd_cdf"] = cdf;
  return j.dump(2);
}

}  // namespace nvmeguard
