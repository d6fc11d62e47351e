#include "nvmeguard/baselines.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "nvmeguard/binary_io.hpp"
#include "nvmeguard/seed.hpp"

namespace nvmeguard {
namespace {

constexpr double kHistLowLog2 = 9.0;    // 512 B
constexpr double kHistHighLog2 = 21.0;  // 2 MiB

void check_training_set(const FeatureMatrix& x, std::span<const std::uint8_t> y) {
  if (x.empty() || x.size() != y.size()) throw std::invalid_argument("feature/label size mismatch");
  const std::size_t d = x.front().size();
  for (const auto& row : x) {
    if (row.size() != d) throw std::invalid_argument("ragged feature matrix");
  }
  bool pos = false;
  bool neg = false;
  for (auto v : y) {
    if (v > 1) throw std::invalid_argument("labels must be 0 or 1");
    (v ? pos : neg) = true;
  }
  if (!pos || !neg) throw std::invalid_argument("training data contains a single class");
}

std::vector<std::size_t> sort_by_feature(const FeatureMatrix& x, std::span<const std::size_t> rows,
                                         std::size_t f) {
  std::vector<std::size_t> order(rows.begin(), rows.end());
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a][f] < x[b][f]; });
  return order;
}

std::vector<std::size_t> pick_features(std::size_t d, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> all(d);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (k == 0 || k >= d) return all;
  // partial Fisher-Yates with explicit draws so results don't depend on the
  // standard library's shuffle
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (d - i));
    std::swap(all[i], all[j]);
  }
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

struct GiniBuilder {
  const FeatureMatrix& x;
  std::span<const std::uint8_t> y;
  std::size_t max_depth;
  std::size_t max_features;
  std::mt19937_64 rng;
  Tree tree;

  std::int32_t build(std::vector<std::size_t> rows, std::size_t depth) {
    const auto id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    double pos = 0.0;
    for (auto r : rows) pos += y[r];
    const double n = static_cast<double>(rows.size());
    tree.nodes[id].value = pos / n;
    if (depth >= max_depth || pos == 0.0 || pos == n) return id;
    const auto features = pick_features(x.front().size(), max_features, rng);
    const auto split = best_gini_split(x, y, rows, features);
    if (!split.found) return id;
    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (auto r : rows) (x[r][split.feature] <= split.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    tree.nodes[id].feature = static_cast<std::int32_t>(split.feature);
    tree.nodes[id].threshold = split.threshold;
    const auto l = build(std::move(left), depth + 1);
    const auto r = build(std::move(right), depth + 1);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  }
};

// Second-order regression tree for logistic boosting.
struct BoostBuilder {
  const FeatureMatrix& x;
  std::span<const double> g;
  std::span<const double> h;
  const TreeEnsembleConfig& cfg;
  Tree tree;

  double leaf(double gs, double hs) const { return -gs / (hs + cfg.boost_lambda); }
  double score(double gs, double hs) const { return gs * gs / (hs + cfg.boost_lambda); }

  std::int32_t build(std::vector<std::size_t> rows, std::size_t depth) {
    const auto id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    double gs = 0.0;
    double hs = 0.0;
    for (auto r : rows) {
      gs += g[r];
      hs += h[r];
    }
    tree.nodes[id].value = leaf(gs, hs);
    if (depth >= cfg.boost_max_depth || rows.size() < 2) return id;
    const double parent = score(gs, hs);
    double best_gain = 1e-12;
    std::size_t best_f = 0;
    double best_t = 0.0;
    bool found = false;
    const std::size_t d = x.front().size();
    for (std::size_t f = 0; f < d; ++f) {
      const auto order = sort_by_feature(x, rows, f);
      double gl = 0.0;
      double hl = 0.0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        gl += g[order[i]];
        hl += h[order[i]];
        const double a = x[order[i]][f];
        const double b = x[order[i + 1]][f];
        if (!(a < b)) continue;
        const double hr = hs - hl;
        if (hl < cfg.boost_min_child_weight || hr < cfg.boost_min_child_weight) continue;
        const double gain = score(gl, hl) + score(gs - gl, hr) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_f = f;
          best_t = a + (b - a) / 2.0;
          found = true;
        }
      }
    }
    if (!found) return id;
    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (auto r : rows) (x[r][best_f] <= best_t ? left : right).push_back(r);
    tree.nodes[id].feature = static_cast<std::int32_t>(best_f);
    tree.nodes[id].threshold = best_t;
    const auto l = build(std::move(left), depth + 1);
    const auto r = build(std::move(right), depth + 1);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  }
};

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void write_tree(BinaryWriter& w, const Tree& t) {
  w.u(static_cast<std::uint64_t>(t.nodes.size()));
  for (const auto& n : t.nodes) {
    w.u(static_cast<std::uint32_t>(n.feature));
    w.f64(n.threshold);
    w.u(static_cast<std::uint32_t>(n.left));
    w.u(static_cast<std::uint32_t>(n.right));
    w.f64(n.value);
  }
}

Tree read_tree(BinaryReader& r, std::size_t features) {
  Tree t;
  const auto n = r.u<std::uint64_t>();
  if (n == 0 || n > (1ull << 32)) throw std::runtime_error("corrupt tree size");
  t.nodes.resize(n);
  for (auto& node : t.nodes) {
    node.feature = static_cast<std::int32_t>(r.u<std::uint32_t>());
    node.threshold = r.f64();
    node.left = static_cast<std::int32_t>(r.u<std::uint32_t>());
    node.right = static_cast<std::int32_t>(r.u<std::uint32_t>());
    node.value = r.f64();
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = t.nodes[i];
    if (node.feature < 0) continue;
    if (static_cast<std::size_t>(node.feature) >= features ||
        node.left <= static_cast<std::int32_t>(i) || node.right <= static_cast<std::int32_t>(i) ||
        static_cast<std::size_t>(node.left) >= n || static_cast<std::size_t>(node.right) >= n) {
      throw std::runtime_error("corrupt tree node");
    }
  }
  return t;
}

constexpr std::uint32_t kModelVersion = 1;

void write_header(BinaryWriter& w, std::string_view kind) {
  w.bytes("NVTR");
  w.u(kModelVersion);
  w.str(kind);
}

void read_header(BinaryReader& r, std::string_view kind) {
  if (r.bytes(4) != "NVTR") throw std::runtime_error("not a tree model file");
  const auto v = r.u<std::uint32_t>();
  if (v != kModelVersion) throw std::runtime_error("unsupported model version " + std::to_string(v));
  const auto k = r.str();
  if (k != kind) throw std::runtime_error("model file holds '" + k + "', expected '" +
                                          std::string(kind) + "'");
}

}  // namespace

std::size_t rf_histogram_bin(std::uint64_t bytes) {
  if (bytes == 0) return 0;
  const double l = std::log2(static_cast<double>(bytes));
  const double pos = (l - kHistLowLog2) / (kHistHighLog2 - kHistLowLog2) *
                     static_cast<double>(kRfHistogramBins);
  if (pos < 0.0) return 0;
  return std::min(static_cast<std::size_t>(pos), kRfHistogramBins - 1);
}

RfFeatureVector rf_extract_features(const Slice& slice) {
  if (slice.commands.empty()) throw std::invalid_argument("empty slice");
  RfFeatureVector out{};
  double total_blocks = 0.0;
  double read_blocks = 0.0;
  double war_blocks = 0.0;
  std::array<double, kRfHistogramBins> h_r{};
  std::array<double, kRfHistogramBins> h_war{};
  double sum = 0.0;
  double sum2 = 0.0;
  for (const auto& c : slice.commands) {
    const double blocks = static_cast<double>(c.base.size) / 512.0;
    total_blocks += blocks;
    const auto war = c.overlap(AccessPair::WriteAfterRead);
    const double war_b = static_cast<double>(war) / 512.0;
    war_blocks += war_b;
    sum += war_b;
    sum2 += war_b * war_b;
    if (c.base.is_read()) {
      read_blocks += blocks;
      h_r[rf_histogram_bin(c.base.size)] += 1.0;
    }
    if (war > 0) h_war[rf_histogram_bin(war)] += 1.0;
  }
  out[0] = read_blocks / total_blocks;
  out[1] = war_blocks / total_blocks;
  const double n = static_cast<double>(slice.commands.size());
  const double mean = sum / n;
  if (mean > 0.0) {
    const double var = std::max(0.0, sum2 / n - mean * mean);
    out[2] = std::sqrt(var) / mean;
  }
  auto put = [&](const std::array<double, kRfHistogramBins>& h, std::size_t at) {
    const double s = std::accumulate(h.begin(), h.end(), 0.0);
    if (s == 0.0) return;
    for (std::size_t i = 0; i < kRfHistogramBins; ++i) out[at + i] = h[i] / s;
  };
  put(h_r, 3);
  put(h_war, 3 + kRfHistogramBins);
  return out;
}

std::vector<double> deftpunk_extract_features(const Slice& slice, std::uint64_t capacity) {
  if (slice.commands.empty()) throw std::invalid_argument("empty slice");
  if (capacity == 0) throw std::invalid_argument("capacity must be positive");
  struct Acc {
    double count = 0, bytes = 0, log_sum = 0, size_sum = 0, size_sum2 = 0;
    double off_sum = 0, off_sum2 = 0, max_size = 0, sequential = 0;
    std::uint64_t last_end = UINT64_MAX;
  };
  std::array<Acc, kDeftPunkTypes> acc{};
  double total_bytes = 0.0;
  const double n = static_cast<double>(slice.commands.size());
  const double cap = static_cast<double>(capacity);
  auto add = [&](Acc& a, const Command& c) {
    const double s = static_cast<double>(c.size);
    a.count += 1.0;
    a.bytes += s;
    a.log_sum += std::log2(s);
    a.size_sum += s;
    a.size_sum2 += s * s;
    const double o = static_cast<double>(c.offset) / cap;
    a.off_sum += o;
    a.off_sum2 += o * o;
    a.max_size = std::max(a.max_size, s);
    if (c.offset == a.last_end) a.sequential += 1.0;
    a.last_end = c.end();
  };
  for (const auto& c : slice.commands) {
    total_bytes += static_cast<double>(c.base.size);
    if (c.base.is_read()) {
      add(acc[0], c.base);
      if (c.is_rar()) add(acc[3], c.base);
    } else {
      add(acc[1], c.base);
      if (c.is_war() || c.overlap(AccessPair::WriteAfterWrite) > 0) add(acc[2], c.base);
    }
  }
  const double duration =
      std::max(slice.commands.back().base.timestamp - slice.commands.front().base.timestamp, 1e-6);
  std::vector<double> out;
  out.reserve(kDeftPunkFeatureCount);
  for (const auto& a : acc) {
    const double cnt = std::max(a.count, 1.0);
    const double mean_size = a.size_sum / cnt;
    const double var_size = std::max(0.0, a.size_sum2 / cnt - mean_size * mean_size);
    const double off_mean = a.off_sum / cnt;
    const double off_var = std::max(0.0, a.off_sum2 / cnt - off_mean * off_mean);
    out.push_back(a.count / n);
    out.push_back(a.bytes / total_bytes);
    out.push_back(std::log1p(a.count / duration));
    out.push_back(std::log1p(a.bytes / duration / 1e6));
    out.push_back(a.log_sum / cnt);
    out.push_back(mean_size > 0.0 ? std::sqrt(var_size) / mean_size : 0.0);
    out.push_back(off_mean);
    out.push_back(std::sqrt(off_var));
    out.push_back(a.max_size > 0.0 ? std::log2(a.max_size) : 0.0);
    out.push_back(a.sequential / cnt);
  }
  return out;
}

std::vector<std::size_t> deftpunk_stage1_features() {
  std::vector<std::size_t> idx;
  for (std::size_t t = 0; t < kDeftPunkTypes; ++t) {
    idx.push_back(t * kDeftPunkPerType);
    idx.push_back(t * kDeftPunkPerType + 1);
  }
  return idx;
}

double Tree::predict(std::span<const double> x) const {
  if (nodes.empty()) throw std::logic_error("empty tree");
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                        : n.right);
  }
  return nodes[i].value;
}

std::size_t Tree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {  // children always follow parents
    best = std::max(best, d[i]);
    if (nodes[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return best;
}

double gini_impurity(double positives, double total) {
  if (total <= 0.0) return 0.0;
  const double p = positives / total;
  return 2.0 * p * (1.0 - p);
}

GiniSplit best_gini_split(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                          std::span<const std::size_t> rows, std::span<const std::size_t> features) {
  GiniSplit best;
  const double n = static_cast<double>(rows.size());
  double pos = 0.0;
  for (auto r : rows) pos += y[r];
  for (auto f : features) {
    const auto order = sort_by_feature(x, rows, f);
    double lp = 0.0;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      lp += y[order[i]];
      const double a = x[order[i]][f];
      const double b = x[order[i + 1]][f];
      if (!(a < b)) continue;
      const double ln = static_cast<double>(i + 1);
      const double rn = n - ln;
      const double imp = (ln * gini_impurity(lp, ln) + rn * gini_impurity(pos - lp, rn)) / n;
      if (!best.found || imp < best.impurity) {
        best.found = true;
        best.feature = f;
        best.threshold = a + (b - a) / 2.0;
        best.impurity = imp;
      }
    }
  }
  return best;
}

Tree build_gini_tree(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                     std::span<const std::size_t> rows, std::size_t max_depth,
                     std::size_t max_features, std::uint64_t seed) {
  if (rows.empty()) throw std::invalid_argument("no rows to fit");
  GiniBuilder b{x, y, max_depth, max_features, std::mt19937_64(seed), {}};
  b.build(std::vector<std::size_t>(rows.begin(), rows.end()), 0);
  return std::move(b.tree);
}

RandomForest RandomForest::train(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                                 const TreeEnsembleConfig& config) {
  check_training_set(x, y);
  if (config.rf_trees == 0) throw std::invalid_argument("forest needs at least one tree");
  RandomForest rf;
  rf.features_ = x.front().size();
  const std::size_t k =
      config.rf_max_features != 0
          ? config.rf_max_features
          : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(double(rf.features_))));
  for (std::size_t t = 0; t < config.rf_trees; ++t) {
    std::mt19937_64 rng(derive_seed(config.seed, t));
    std::vector<std::size_t> rows(x.size());
    if (config.rf_bootstrap) {
      for (auto& r : rows) r = static_cast<std::size_t>(rng() % x.size());
    } else {
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    rf.trees_.push_back(build_gini_tree(x, y, rows, config.rf_max_depth, k, rng()));
  }
  return rf;
}

double RandomForest::predict(std::span<const double> features) const {
  if (features.size() != features_) throw std::invalid_argument("feature length mismatch");
  double s = 0.0;
  for (const auto& t : trees_) s += t.predict(features);
  return s / static_cast<double>(trees_.size());
}

DeftPunk DeftPunk::train(const FeatureMatrix& x, std::span<const std::uint8_t> y,
                         const TreeEnsembleConfig& config) {
  check_training_set(x, y);
  DeftPunk m;
  m.features_ = x.front().size();
  m.filter_features = deftpunk_stage1_features();
  if (std::any_of(m.filter_features.begin(), m.filter_features.end(),
                  [&](std::size_t f) { return f >= m.features_; })) {
    // fewer features than the standard layout: the filter sees all of them
    m.filter_features.resize(m.features_);
    std::iota(m.filter_features.begin(), m.filter_features.end(), std::size_t{0});
  }
  m.filter_threshold = config.filter_threshold;
  m.learning_rate = config.boost_learning_rate;

  FeatureMatrix stage1;
  stage1.reserve(x.size());
  for (const auto& row : x) {
    std::vector<double> r;
    for (auto f : m.filter_features) r.push_back(row[f]);
    stage1.push_back(std::move(r));
  }
  std::vector<std::size_t> all(x.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  m.filter = build_gini_tree(stage1, y, all, config.filter_max_depth, 0, config.seed);

  // The boosted stage is fit on every training sample: a depth-6 filter often
  // separates the training slices outright, which would leave it one class.
  const FeatureMatrix& px = x;
  std::vector<double> py(y.begin(), y.end());
  const double mean = std::accumulate(py.begin(), py.end(), 0.0) / double(py.size());
  m.base_score = std::log(mean / (1.0 - mean));

  std::vector<double> margin(px.size(), m.base_score);
  std::vector<double> g(px.size());
  std::vector<double> h(px.size());
  std::vector<std::size_t> rows(px.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  for (std::size_t round = 0; round < config.boost_rounds; ++round) {
    for (std::size_t i = 0; i < px.size(); ++i) {
      const double p = sigmoid(margin[i]);
      g[i] = p - py[i];
      h[i] = std::max(p * (1.0 - p), 1e-16);
    }
    BoostBuilder b{px, g, h, config, {}};
    b.build(rows, 0);
    for (std::size_t i = 0; i < px.size(); ++i) {
      margin[i] += m.learning_rate * b.tree.predict(px[i]);
    }
    m.boosted.push_back(std::move(b.tree));
  }
  return m;
}

bool DeftPunk::passes_filter(std::span<const double> features) const {
  if (features.size() != features_) throw std::invalid_argument("feature length mismatch");
  std::vector<double> r;
  r.reserve(filter_features.size());
  for (auto f : filter_features) r.push_back(features[f]);
  return filter.predict(r) > filter_threshold;
}

double DeftPunk::predict(std::span<const double> features) const {
  if (!passes_filter(features)) return 0.0;
  double z = base_score;
  for (const auto& t : boosted) z += learning_rate * t.predict(features);
  return sigmoid(z);
}

void save_random_forest(const RandomForest& model, const std::filesystem::path& path) {
  BinaryWriter w;
  write_header(w, "rf");
  w.u(static_cast<std::uint32_t>(model.features_));
  w.u(static_cast<std::uint32_t>(model.trees_.size()));
  for (const auto& t : model.trees_) write_tree(w, t);
  w.save(path);
}

RandomForest load_random_forest(const std::filesystem::path& path) {
  auto r = BinaryReader::load(path);
  read_header(r, "rf");
  RandomForest m;
  m.features_ = r.u<std::uint32_t>();
  const auto n = r.u<std::uint32_t>();
  if (n == 0) throw std::runtime_error("forest file has no trees");
  for (std::uint32_t i = 0; i < n; ++i) m.trees_.push_back(read_tree(r, m.features_));
  if (!r.at_end()) throw std::runtime_error("trailing bytes in model file");
  return m;
}

void save_deftpunk(const DeftPunk& model, const std::filesystem::path& path) {
  BinaryWriter w;
  write_header(w, "deftpunk");
  w.u(static_cast<std::uint32_t>(model.features_));
  w.u(static_cast<std::uint32_t>(model.filter_features.size()));
  for (auto f : model.filter_features) w.u(static_cast<std::uint32_t>(f));
  w.f64(model.filter_threshold);
  write_tree(w, model.filter);
  w.f64(model.base_score);
  w.f64(model.learning_rate);
  w.u(static_cast<std::uint32_t>(model.boosted.size()));
  for (const auto& t : model.boosted) write_tree(w, t);
  w.save(path);
}

DeftPunk load_deftpunk(const std::filesystem::path& path) {
  auto r = BinaryReader::load(path);
  read_header(r, "deftpunk");
  DeftPunk m;
  m.features_ = r.u<std::uint32_t>();
  const auto nf = r.u<std::uint32_t>();
  for (std::uint32_t i = 0; i < nf; ++i) {
    const auto f = r.u<std::uint32_t>();
    if (f >= m.features_) throw std::runtime_error("corrupt filter feature index");
    m.filter_features.push_back(f);
  }
  m.filter_threshold = r.f64();
  m.filter = read_tree(r, nf);
  m.base_score = r.f64();
  m.learning_rate = r.f64();
  const auto nb = r.u<std::uint32_t>();
  for (std::uint32_t i = 0; i < nb; ++i) m.boosted.push_back(read_tree(r, m.features_));
  if (!r.at_end()) throw std::runtime_error("trailing bytes in model file");
  return m;
}

}  // namespace nvmeguard
