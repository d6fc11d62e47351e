#include "nvmeguard/plt_embedder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "nvmeguard/log.hpp"

namespace nvmeguard {
namespace {

namespace L = embedding_layout;

double overlap_weight(const DerivedCommand& c) {
  return static_cast<double>(c.overlap(AccessPair::WriteAfterRead) +
                             c.overlap(AccessPair::ReadAfterRead));
}

double safe_denominator(double d, const char* what) {
  if (d == 0.0 || !std::isfinite(d)) {
    log_warning(std::string("zero normalizer for ") + what + ", using 1");
    return 1.0;
  }
  return d;
}

}  // namespace

PltAblation PltAblation::parse(const std::string& csv) {
  PltAblation a;
  std::istringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    if (item == "size") a.size = true;
    else if (item == "dt") a.delta_t = true;
    else if (item == "fractions") a.fractions = true;
    else if (item == "lapse") a.lapse = true;
    else if (item == "offset") a.offset = true;
    else if (item == "ov") a.overlap = true;
    else throw std::invalid_argument("unknown PLT ablation group '" + item + "'");
  }
  return a;
}

double weighted_mean(std::span<const double> values, std::span<const double> weights) {
  if (values.empty()) return 0.0;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    num += values[i] * weights[i];
    den += weights[i];
  }
  if (den > 0.0) return num / den;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

BackAverageState update_back_averages(const BackAverageState& state, const Slice& slice) {
  if (slice.commands.empty()) throw std::invalid_argument("cannot back-average an empty slice");
  std::vector<double> dt;
  std::vector<double> size2;
  std::vector<double> ov2;
  dt.reserve(slice.commands.size());
  size2.reserve(slice.commands.size());
  ov2.reserve(slice.commands.size());
  for (const auto& c : slice.commands) {
    dt.push_back(c.delta_t);
    const auto s = static_cast<double>(c.base.size);
    size2.push_back(s * s);
    const auto o = overlap_weight(c);
    ov2.push_back(o * o);
  }
  const double by_size = weighted_mean(dt, size2);
  const double by_overlap = weighted_mean(dt, ov2);

  BackAverageState next = state;
  if (state.slices_seen == 0) {
    next.dt_size2 = by_size;
    next.dt_ov2 = by_overlap;
  } else {
    next.dt_size2 = state.alpha * state.dt_size2 + (1.0 - state.alpha) * by_size;
    next.dt_ov2 = state.alpha * state.dt_ov2 + (1.0 - state.alpha) * by_overlap;
  }
  next.slices_seen = state.slices_seen + 1;
  return next;
}

NormalizedAttributes normalize_attributes(const Slice& slice, const BackAverageState& state) {
  if (state.slices_seen == 0) throw std::logic_error("back-average state is not initialized");
  const auto n = slice.commands.size();
  std::vector<double> offsets(n);
  std::vector<double> offsets2(n);
  std::vector<double> size2(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = slice.commands[i];
    const auto off = static_cast<double>(c.base.offset);
    const auto s = static_cast<double>(c.base.size);
    offsets[i] = off;
    offsets2[i] = off * off;
    size2[i] = s * s;
  }
  const double mean = weighted_mean(offsets, size2);
  const double scale = safe_denominator(std::sqrt(weighted_mean(offsets2, size2)), "offset");
  const double dt_scale = safe_denominator(state.dt_size2, "delta_t");
  const double lapse_scale = safe_denominator(10.0 * state.dt_ov2, "lapse");

  NormalizedAttributes out;
  out.offset.resize(n);
  out.delta_t.resize(n);
  out.lapse.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = slice.commands[i];
    out.offset[i] = (offsets[i] - mean) / scale;
    out.delta_t[i] = c.delta_t / dt_scale;
    if (auto l = c.time_lapse(AccessPair::WriteAfterRead)) {
      out.lapse[i] = *l / lapse_scale;
    } else if (auto r = c.time_lapse(AccessPair::ReadAfterRead)) {
      out.lapse[i] = *r / lapse_scale;
    }
  }
  return out;
}

std::vector<Patch> make_patches(const Slice& slice, const PatchConfig& config) {
  const std::size_t n = slice.commands.size();
  const std::size_t count = config.patches;
  if (n == 0 || count == 0) return {};

  std::vector<Patch> patches;
  patches.reserve(count);

  if (config.mode == SliceMode::ByVolume) {
    std::vector<std::uint64_t> starts(n);  // cumulative bytes before each command
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      starts[i] = total;
      total += slice.commands[i].base.size;
    }
    const auto window = config.window_bytes;
    if (total <= window || count == 1) {
      patches.assign(count, Patch{0, n, total <= window});
      return patches;
    }
    const double stride = static_cast<double>(total - window) / static_cast<double>(count - 1);
    for (std::size_t k = 0; k < count; ++k) {
      const auto lo = static_cast<std::uint64_t>(std::floor(stride * static_cast<double>(k)));
      const auto hi = lo + window;
      // Command containing byte `lo`, through the last command starting before `hi`.
      const auto first = static_cast<std::size_t>(
          std::upper_bound(starts.begin(), starts.end(), lo) - starts.begin() - 1);
      auto last = static_cast<std::size_t>(
          std::lower_bound(starts.begin(), starts.end(), hi) - starts.begin());
      last = std::max(last, first + 1);
      patches.push_back({first, last, false});
    }
    return patches;
  }

  // ByCommand (ByTime slices are patched by command count as well).
  const auto window = config.window_commands;
  if (window == 0) throw std::invalid_argument("patch window must be positive");
  if (n <= window) {
    patches.assign(count, Patch{0, n, true});
    return patches;
  }
  for (std::size_t k = 0; k < count; ++k) {
    const auto begin = std::min(k * config.stride_commands, n - window);
    patches.push_back({begin, begin + window, false});
  }
  return patches;
}

std::size_t log_bin(std::uint64_t bytes) {
  if (bytes < 1024) return 0;
  const auto b = static_cast<std::size_t>(std::bit_width(bytes)) - 1 - 9;
  return std::min(b, L::kLogBins - 1);
}

std::size_t offset_bin(double value, const HistogramEdges& edges) {
  const double u = (value - edges.offset_lo) / (edges.offset_hi - edges.offset_lo);
  const double b = std::floor(u * static_cast<double>(L::kValueBins));
  if (!(b > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(b), L::kValueBins - 1);
}

std::size_t time_bin(double value, const HistogramEdges& edges) {
  if (!(value > 0.0)) return 0;
  const double u =
      (std::log2(value) - edges.time_log2_lo) / (edges.time_log2_hi - edges.time_log2_lo);
  const double b = std::floor(u * static_cast<double>(L::kValueBins));
  if (!(b > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(b), L::kValueBins - 1);
}

PatchHistograms patch_histograms(const Slice& slice, const Patch& patch,
                                 const NormalizedAttributes& attrs, const HistogramEdges& edges) {
  PatchHistograms h;
  for (std::size_t i = patch.begin; i < patch.end; ++i) {
    const auto& c = slice.commands[i];
    const double size = static_cast<double>(c.base.size);
    const auto war = c.overlap(AccessPair::WriteAfterRead);
    const auto rar = c.overlap(AccessPair::ReadAfterRead);
    const bool rest = war == 0 && rar == 0;
    const auto size_bin = log_bin(c.base.size);
    const auto off_bin = offset_bin(attrs.offset[i], edges);

    h.log_size[c.base.is_read() ? 0 : 1][size_bin] += 1.0;
    if (rest) h.log_size[2][size_bin] += 1.0;

    h.offset[c.base.is_read() ? 0 : 1][off_bin] += size;
    if (war > 0) {
      h.log_overlap[0][log_bin(war)] += 1.0;
      h.offset[2][off_bin] += size;
      h.lapse[0][time_bin(attrs.lapse[i], edges)] += static_cast<double>(war);
    }
    if (rar > 0) {
      h.log_overlap[1][log_bin(rar)] += 1.0;
      h.offset[3][off_bin] += size;
      h.lapse[1][time_bin(attrs.lapse[i], edges)] += static_cast<double>(rar);
    }
    if (rest) h.offset[4][off_bin] += size;

    h.delta_t[time_bin(attrs.delta_t[i], edges)] += size;
  }
  return h;
}

PatchEmbedding embed_patch(const Slice& slice, const Patch& patch,
                           const NormalizedAttributes& attrs, const PatchConfig& config,
                           const PltAblation& ablation) {
  PatchEmbedding e;
  auto& f = e.features;
  const auto h = patch_histograms(slice, patch, attrs, config.edges);

  double n = 0.0;
  double n_read = 0.0;
  double n_write = 0.0;
  double n_war = 0.0;
  double n_rar = 0.0;
  double vol = 0.0;
  double vol_read = 0.0;
  double vol_write = 0.0;
  double ov_war = 0.0;
  double ov_rar = 0.0;
  for (std::size_t i = patch.begin; i < patch.end; ++i) {
    const auto& c = slice.commands[i];
    const double size = static_cast<double>(c.base.size);
    n += 1.0;
    vol += size;
    if (c.base.is_read()) {
      n_read += 1.0;
      vol_read += size;
    } else {
      n_write += 1.0;
      vol_write += size;
    }
    if (c.is_war()) n_war += 1.0;
    if (c.is_rar()) n_rar += 1.0;
    ov_war += static_cast<double>(c.overlap(AccessPair::WriteAfterRead));
    ov_rar += static_cast<double>(c.overlap(AccessPair::ReadAfterRead));
  }
  const double count_scale = n > 0.0 ? 1.0 / n : 0.0;
  const double volume_scale = vol > 0.0 ? 1.0 / vol : 0.0;

  std::size_t pos = L::kLogSizeBegin;
  for (const auto& hist : h.log_size) {
    for (double v : hist) f[pos++] = ablation.size ? 0.0 : v * count_scale;
  }
  for (const auto& hist : h.log_overlap) {
    for (double v : hist) f[pos++] = ablation.overlap ? 0.0 : v * count_scale;
  }
  for (const auto& hist : h.offset) {
    for (double v : hist) f[pos++] = ablation.offset ? 0.0 : v * volume_scale;
  }
  for (const auto& hist : h.lapse) {
    for (double v : hist) f[pos++] = ablation.lapse ? 0.0 : v * volume_scale;
  }
  for (double v : h.delta_t) f[pos++] = ablation.delta_t ? 0.0 : v * volume_scale;

  std::array<double, L::kScalars> scalars{};
  auto ratio = [](double a, double b) { return b > 0.0 ? a / b : 0.0; };
  if (config.mode == SliceMode::ByVolume) {
    const double v0 = static_cast<double>(config.window_bytes);
    scalars = {ratio(vol, v0),          ratio(vol_read, v0), ratio(vol_write, v0),
               ratio(ov_war, v0),       ratio(ov_rar, v0),   ratio(n_read, n),
               ratio(n_write, n),       ratio(n_war, n),     ratio(n_rar, n)};
  } else {
    const double n0 = static_cast<double>(config.window_commands);
    scalars = {ratio(n, n0),            ratio(n_read, n0),   ratio(n_write, n0),
               ratio(n_war, n0),        ratio(n_rar, n0),    ratio(vol_read, vol),
               ratio(vol_write, vol),   ratio(ov_war, vol),  ratio(ov_rar, vol)};
  }
  for (double s : scalars) f[pos++] = ablation.fractions ? 0.0 : std::clamp(s, 0.0, 1.0);

  const auto labels = label_patch_fractions(slice, patch);
  e.label_read_frac = labels.read;
  e.label_write_frac = labels.write;
  return e;
}

LabelFractions label_patch_fractions(const Slice& slice, const Patch& patch) {
  double total = 0.0;
  double read = 0.0;
  double write = 0.0;
  for (std::size_t i = patch.begin; i < patch.end; ++i) {
    const auto& c = slice.commands[i].base;
    if (c.label == Label::Unlabeled) {
      throw std::invalid_argument("patch contains an unlabeled command");
    }
    const double size = static_cast<double>(c.size);
    total += size;
    if (c.label == Label::Ransomware) (c.is_read() ? read : write) += size;
  }
  if (total == 0.0) return {};
  return {read / total, write / total};
}

std::vector<PatchEmbedding> embed_slice(const Slice& slice, BackAverageState& state,
                                        const PatchConfig& config,
                                        const PltAblation& ablation) {
  state = update_back_averages(state, slice);
  const auto attrs = normalize_attributes(slice, state);
  std::vector<PatchEmbedding> out;
  for (const auto& p : make_patches(slice, config)) {
    out.push_back(embed_patch(slice, p, attrs, config, ablation));
  }
  return out;
}

void write_embedding_dump(std::span<const PatchEmbedding> patches, std::ostream& out) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : patches) {
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) out << (i ? "," : "") << p.features[i];
    out << ',' << p.label_read_frac << ',' << p.label_write_frac << '\n';
  }
}

void write_embedding_dump(std::span<const PatchEmbedding> patches,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_embedding_dump(patches, out);
}

}  // namespace nvmeguard
