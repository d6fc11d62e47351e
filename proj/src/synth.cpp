#include "nvmeguard/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <deque>
#include <random>
#include <stdexcept>

#include "nvmeguard/seed.hpp"

namespace nvmeguard {
namespace {

constexpr std::uint64_t kAlign = 4096;
constexpr double kMinGap = 1e-7;

std::uint64_t align_up(std::uint64_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

// Draws are built from raw 64-bit outputs so the streams do not depend on the
// standard library's distribution implementations.
class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : rng_() % n; }
  double exponential(double mean) { return -mean * std::log1p(-uniform()); }
  template <typename T, std::size_t N>
  T pick(const std::array<T, N>& a) {
    return a[below(N)];
  }

 private:
  std::mt19937_64 rng_;
};

struct Extent {
  std::uint64_t offset;
  std::uint64_t size;
};

std::vector<Extent> file_layout(const WorkloadSpec& spec) {
  Draw d(derive_seed(spec.layout_seed, 0xF11E));
  std::vector<Extent> files;
  const std::uint64_t limit = spec.capacity / 2;
  const double lo = std::log(static_cast<double>(spec.file_min));
  const double hi = std::log(static_cast<double>(spec.file_max));
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < spec.files; ++i) {
    const auto size = align_up(static_cast<std::uint64_t>(std::exp(lo + (hi - lo) * d.uniform())));
    pos += d.below(1024) * kAlign;
    if (pos + size > limit) break;
    files.push_back({pos, size});
    pos += size;
  }
  if (files.empty()) throw std::invalid_argument("no file fits on the configured disk");
  return files;
}

struct Pending {
  Opcode op;
  std::uint64_t offset;
  std::uint64_t size;
  double gap;
};

class BenignSource {
 public:
  BenignSource(const WorkloadSpec& spec, const std::vector<Extent>& files, std::uint64_t seed)
      : spec_(spec), files_(files), d_(seed) {
    const std::uint64_t half = spec.capacity / 2;
    fresh_ = half + align_up(d_.below(half / 4));
  }

  Pending next() {
    while (queue_.empty()) refill();
    auto p = queue_.front();
    queue_.pop_front();
    return p;
  }

 private:
  void push(Opcode op, std::uint64_t off, std::uint64_t size, double mean_gap) {
    queue_.push_back({op, off, size, d_.exponential(mean_gap) + kMinGap});
  }

  std::uint64_t fresh(std::uint64_t size) {
    if (fresh_ + size > spec_.capacity) fresh_ = spec_.capacity / 2;
    const auto at = fresh_;
    fresh_ += size;
    return at;
  }

  const Extent& any_file() { return files_[d_.below(files_.size())]; }

  void refill() {
    const std::array<double, 5> w = {spec_.w_sequential_read, spec_.w_random_rw, spec_.w_archive,
                                     spec_.w_install, spec_.w_updater};
    double total = 0.0;
    for (double x : w) total += x;
    double u = d_.uniform() * total;
    std::size_t kind = 0;
    while (kind + 1 < w.size() && (u >= w[kind] || w[kind] == 0.0)) {
      u -= w[kind];
      ++kind;
    }
    const double g = spec_.benign_gap;
    const std::size_t first = queue_.size();
    switch (kind) {
      case 0: {  // sequential read of a file
        const auto& f = any_file();
        const auto chunk = d_.pick(std::array<std::uint64_t, 3>{64 << 10, 128 << 10, 256 << 10});
        for (std::uint64_t off = 0, n = 0; off < f.size && n < 64; off += chunk, ++n) {
          push(Opcode::Read, f.offset + off, std::min(chunk, f.size - off), 0.3 * g);
        }
        break;
      }
      case 1: {  // small random reads and writes
        const auto n = 16 + d_.below(49);
        for (std::uint64_t i = 0; i < n; ++i) {
          const auto& f = any_file();
          const auto size = std::min<std::uint64_t>(
              f.size, d_.pick(std::array<std::uint64_t, 5>{4 << 10, 8 << 10, 16 << 10, 32 << 10,
                                                           64 << 10}));
          const auto off = f.offset + d_.below((f.size - size) / kAlign + 1) * kAlign;
          push(d_.uniform() < 0.35 ? Opcode::Write : Opcode::Read, off, size, g);
        }
        break;
      }
      case 2: {  // archive: read a file, write a compressed copy elsewhere
        const auto& f = any_file();
        const std::uint64_t chunk = 128 << 10;
        std::size_t reads = 0;
        for (std::uint64_t off = 0; off < f.size && reads < 32; off += chunk) {
          push(Opcode::Read, f.offset + off, std::min(chunk, f.size - off), 0.5 * g);
          if (++reads % 4 == 0) push(Opcode::Write, fresh(256 << 10), 256 << 10, 0.5 * g);
        }
        break;
      }
      case 3: {  // install: new files written sequentially
        const auto n = 16 + d_.below(49);
        const auto size = d_.pick(
            std::array<std::uint64_t, 4>{128 << 10, 256 << 10, 512 << 10, 1 << 20});
        for (std::uint64_t i = 0; i < n; ++i) push(Opcode::Write, fresh(size), size, g);
        break;
      }
      default: {  // updater: read a whole file region, then rewrite it in place
        const auto& f = any_file();
        const auto chunk = d_.pick(std::array<std::uint64_t, 2>{128 << 10, 256 << 10});
        std::vector<Extent> parts;
        for (std::uint64_t off = 0; off < f.size && parts.size() < 32; off += chunk) {
          parts.push_back({f.offset + off, std::min(chunk, f.size - off)});
        }
        for (const auto& p : parts) push(Opcode::Read, p.offset, p.size, 0.5 * g);
        bool first_write = true;
        for (const auto& p : parts) {
          push(Opcode::Write, p.offset, p.size, first_write ? spec_.idle_gap : 0.5 * g);
          first_write = false;
        }
        break;
      }
    }
    if (queue_.size() > first) queue_[first].gap += d_.exponential(spec_.idle_gap);
  }

  const WorkloadSpec& spec_;
  const std::vector<Extent>& files_;
  Draw d_;
  std::uint64_t fresh_ = 0;
  std::deque<Pending> queue_;
};

class RansomSource {
 public:
  RansomSource(const WorkloadSpec& spec, const std::vector<Extent>& files, std::uint64_t seed)
      : spec_(spec), d_(seed) {
    order_.assign(files.begin(), files.end());
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[d_.below(i)]);
  }

  std::optional<Pending> next() {
    if (queue_.empty()) refill();
    if (queue_.empty()) return std::nullopt;
    auto p = queue_.front();
    queue_.pop_front();
    return p;
  }

 private:
  void refill() {
    while (file_ < order_.size() && pos_ >= order_[file_].size) {
      ++file_;
      pos_ = 0;
    }
    if (file_ >= order_.size()) return;
    const auto& f = order_[file_];
    std::vector<Extent> group;
    for (std::size_t i = 0; i < spec_.burst && pos_ < f.size; ++i) {
      const auto size = std::min(spec_.chunk, f.size - pos_);
      group.push_back({f.offset + pos_, size});
      pos_ += size;
    }
    std::uint64_t bytes = 0;
    for (const auto& e : group) {
      queue_.push_back({Opcode::Read, e.offset, e.size, d_.exponential(spec_.ransom_gap) + kMinGap});
      bytes += e.size;
    }
    bool first = true;
    for (const auto& e : group) {
      const auto size = std::min(
          e.size, align_up(static_cast<std::uint64_t>(static_cast<double>(e.size) *
                                                       spec_.overwrite_ratio)));
      const double encrypt = static_cast<double>(bytes) / spec_.encrypt_rate;
      const double gap = first ? encrypt * (0.5 + d_.uniform()) : d_.exponential(spec_.ransom_gap);
      queue_.push_back({Opcode::Write, e.offset, std::max(size, kAlign), gap + kMinGap});
      first = false;
    }
  }

  const WorkloadSpec& spec_;
  Draw d_;
  std::vector<Extent> order_;
  std::size_t file_ = 0;
  std::uint64_t pos_ = 0;
  std::deque<Pending> queue_;
};

Stream empty_stream(const WorkloadSpec& spec) {
  Stream s;
  s.stream_id = spec.stream_id;
  s.disk_capacity = spec.capacity;
  s.family = spec.family;
  return s;
}

void emit(Stream& s, double& t, const Pending& p, Label label) {
  t += p.gap;
  s.commands.push_back({t, p.op, p.offset, p.size, label});
}

}  // namespace

void WorkloadSpec::validate() const {
  for (double w : {w_sequential_read, w_random_rw, w_archive, w_install, w_updater}) {
    if (!(w >= 0.0)) throw std::invalid_argument("behaviour weights must be non-negative");
  }
  if (w_sequential_read + w_random_rw + w_archive + w_install + w_updater <= 0.0) {
    throw std::invalid_argument("at least one behaviour weight must be positive");
  }
  if (!(interleave >= 0.0 && interleave <= 1.0)) {
    throw std::invalid_argument("interleave must lie in [0,1]");
  }
  if (!(overwrite_ratio > 0.0 && overwrite_ratio <= 1.0)) {
    throw std::invalid_argument("overwrite_ratio must lie in (0,1]");
  }
  if (capacity < (1ull << 25)) throw std::invalid_argument("capacity below 32 MiB");
  if (file_min == 0 || file_min > file_max) throw std::invalid_argument("bad file size range");
  if (chunk == 0 || burst == 0) throw std::invalid_argument("chunk and burst must be positive");
  if (!(benign_gap > 0.0 && idle_gap >= 0.0 && ransom_gap > 0.0 && encrypt_rate > 0.0)) {
    throw std::invalid_argument("timing parameters must be positive");
  }
  if (!(start_time >= 0.0)) throw std::invalid_argument("start_time must be non-negative");
}

WorkloadSpec WorkloadSpec::from_kv(const KeyValueFile& kv) {
  static const char* known[] = {
      "seed", "commands", "capacity", "stream_id", "files", "file_min", "file_max",
      "layout_seed", "w_sequential_read", "w_random_rw", "w_archive", "w_install", "w_updater",
      "benign_gap", "idle_gap", "chunk", "burst", "overwrite_ratio", "interleave", "start_time",
      "encrypt_rate", "ransom_gap", "family", "kind"};
  for (const auto& [k, v] : kv.entries()) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* s) { return k == s; }) ==
        std::end(known)) {
      throw std::invalid_argument("unknown workload key '" + k + "'");
    }
  }
  WorkloadSpec s;
  s.seed = kv.get_u64("seed", s.seed);
  s.commands = kv.get_u64("commands", s.commands);
  s.capacity = kv.get_u64("capacity", s.capacity);
  s.stream_id = kv.get_or("stream_id", s.stream_id);
  s.files = kv.get_u64("files", s.files);
  s.file_min = kv.get_u64("file_min", s.file_min);
  s.file_max = kv.get_u64("file_max", s.file_max);
  s.layout_seed = kv.get_u64("layout_seed", s.layout_seed);
  s.w_sequential_read = kv.get_double("w_sequential_read", s.w_sequential_read);
  s.w_random_rw = kv.get_double("w_random_rw", s.w_random_rw);
  s.w_archive = kv.get_double("w_archive", s.w_archive);
  s.w_install = kv.get_double("w_install", s.w_install);
  s.w_updater = kv.get_double("w_updater", s.w_updater);
  s.benign_gap = kv.get_double("benign_gap", s.benign_gap);
  s.idle_gap = kv.get_double("idle_gap", s.idle_gap);
  s.chunk = kv.get_u64("chunk", s.chunk);
  s.burst = kv.get_u64("burst", s.burst);
  s.overwrite_ratio = kv.get_double("overwrite_ratio", s.overwrite_ratio);
  s.interleave = kv.get_double("interleave", s.interleave);
  s.start_time = kv.get_double("start_time", s.start_time);
  s.encrypt_rate = kv.get_double("encrypt_rate", s.encrypt_rate);
  s.ransom_gap = kv.get_double("ransom_gap", s.ransom_gap);
  if (auto f = kv.get("family")) s.family = *f;
  s.validate();
  return s;
}

KeyValueFile WorkloadSpec::to_kv() const {
  KeyValueFile kv;
  auto num = [](double v) { return format_seconds(v); };
  kv.set("seed", std::to_string(seed));
  kv.set("commands", std::to_string(commands));
  kv.set("capacity", std::to_string(capacity));
  kv.set("stream_id", stream_id);
  kv.set("files", std::to_string(files));
  kv.set("file_min", std::to_string(file_min));
  kv.set("file_max", std::to_string(file_max));
  kv.set("layout_seed", std::to_string(layout_seed));
  kv.set("w_sequential_read", num(w_sequential_read));
  kv.set("w_random_rw", num(w_random_rw));
  kv.set("w_archive", num(w_archive));
  kv.set("w_install", num(w_install));
  kv.set("w_updater", num(w_updater));
  kv.set("benign_gap", num(benign_gap));
  kv.set("idle_gap", num(idle_gap));
  kv.set("chunk", std::to_string(chunk));
  kv.set("burst", std::to_string(burst));
  kv.set("overwrite_ratio", num(overwrite_ratio));
  kv.set("interleave", num(interleave));
  kv.set("start_time", num(start_time));
  kv.set("encrypt_rate", num(encrypt_rate));
  kv.set("ransom_gap", num(ransom_gap));
  if (family) kv.set("family", *family);
  return kv;
}

Stream generate_benign(const WorkloadSpec& spec) {
  spec.validate();
  Stream s = empty_stream(spec);
  s.family.reset();
  if (spec.commands == 0) return s;
  const auto files = file_layout(spec);
  BenignSource src(spec, files, derive_seed(spec.seed, 1));
  double t = 0.0;
  s.commands.reserve(spec.commands);
  while (s.commands.size() < spec.commands) emit(s, t, src.next(), Label::Benign);
  return s;
}

Stream generate_ransomware(const WorkloadSpec& spec) {
  spec.validate();
  Stream s = empty_stream(spec);
  if (spec.commands == 0) return s;
  const auto files = file_layout(spec);
  BenignSource benign(spec, files, derive_seed(spec.seed, 1));
  RansomSource ransom(spec, files, derive_seed(spec.seed, 2));
  Draw choose(derive_seed(spec.seed, 3));
  double t = 0.0;
  s.commands.reserve(spec.commands);
  if (spec.start_time > 0.0) {
    while (s.commands.size() < spec.commands && t < spec.start_time) {
      emit(s, t, benign.next(), Label::Benign);
    }
  }
  bool exhausted = false;
  while (s.commands.size() < spec.commands) {
    const bool pick_benign = exhausted || choose.uniform() < spec.interleave;
    if (!pick_benign) {
      if (auto p = ransom.next()) {
        emit(s, t, *p, Label::Ransomware);
        continue;
      }
      exhausted = true;
    }
    emit(s, t, benign.next(), Label::Benign);
  }
  return s;
}

Stream mix_streams(const Stream& benign, const Stream& ransomware, double launch_time) {
  if (benign.disk_capacity != ransomware.disk_capacity) {
    throw std::invalid_argument("streams have different disk capacities");
  }
  Stream out;
  out.stream_id = benign.stream_id;
  out.disk_capacity = benign.disk_capacity;
  out.family = ransomware.family ? ransomware.family : benign.family;
  out.commands.reserve(benign.commands.size() + ransomware.commands.size());
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < benign.commands.size() || j < ransomware.commands.size()) {
    if (j < ransomware.commands.size()) {
      auto r = ransomware.commands[j];
      r.timestamp += launch_time;
      if (i >= benign.commands.size() || r.timestamp < benign.commands[i].timestamp) {
        out.commands.push_back(r);
        ++j;
        continue;
      }
    }
    out.commands.push_back(benign.commands[i++]);
  }
  return out;
}

std::uint64_t ransomware_bytes(const Stream& stream) {
  std::uint64_t total = 0;
  for (const auto& c : stream.commands) {
    if (c.label == Label::Ransomware) total += c.size;
  }
  return total;
}

WorkloadSpec desk_bench_family(std::size_t family, std::uint64_t seed) {
  struct Params {
    std::uint64_t chunk;
    std::size_t burst;
    double ratio;
    double rate;
  };
  static constexpr std::array<Params, 6> table = {{{256 << 10, 1, 1.0, 400e6},
                                                   {1 << 20, 1, 1.0, 800e6},
                                                   {64 << 10, 2, 1.0, 200e6},
                                                   {128 << 10, 4, 0.5, 300e6},
                                                   {512 << 10, 2, 1.0, 600e6},
                                                   {256 << 10, 1, 0.25, 500e6}}};
  const auto& p = table[family % table.size()];
  WorkloadSpec s;
  s.seed = seed;
  s.chunk = p.chunk;
  s.burst = p.burst;
  s.overwrite_ratio = p.ratio;
  s.encrypt_rate = p.rate;
  s.family = "family-" + std::to_string(family);
  return s;
}

namespace {

constexpr std::size_t kBenignPresets = 4;

void apply_benign_preset(WorkloadSpec& s, std::size_t preset) {
  switch (preset % kBenignPresets) {
    case 1:
      s.w_updater = 4.0;
      break;
    case 2:
      s.w_archive = 3.0;
      s.w_install = 3.0;
      break;
    case 3:
      s.w_sequential_read = 6.0;
      s.w_random_rw = 1.0;
      break;
    default:
      break;
  }
}

}  // namespace

std::vector<SuiteStream> desk_bench_suite(const DeskBenchConfig& config) {
  std::vector<SuiteStream> out;
  char id[32];
  for (std::size_t i = 0; i < config.benign_streams; ++i) {
    WorkloadSpec s;
    s.seed = derive_seed(config.seed, 1000 + i);
    s.layout_seed = derive_seed(config.seed, 5000 + i);
    s.commands = config.commands;
    apply_benign_preset(s, i);
    std::snprintf(id, sizeof id, "benign-%03zu", i);
    s.stream_id = id;
    const std::size_t mix = i % kBenignPresets;
    out.push_back({generate_benign(s), false, (i / kBenignPresets + mix) % 2 == 1});
  }
  static constexpr std::array<double, 4> interleave = {0.2, 0.4, 0.6, 0.8};
  const std::size_t families = std::max<std::size_t>(1, config.families);
  for (std::size_t i = 0; i < config.ransomware_streams; ++i) {
    const std::size_t fam = i % families;
    auto s = desk_bench_family(fam, derive_seed(config.seed, 2000 + i));
    s.layout_seed = derive_seed(config.seed, 6000 + i);
    s.commands = config.commands;
    s.interleave = interleave[(i / families) % interleave.size()];
    Draw d(derive_seed(config.seed, 3000 + i));
    s.start_time = 0.1 + 0.4 * d.uniform();
    apply_benign_preset(s, i / 2);
    std::snprintf(id, sizeof id, "ransom-%03zu", i);
    s.stream_id = id;
    out.push_back({generate_ransomware(s), true, (i / families + fam) % 2 == 1});
  }
  return out;
}

}  // namespace nvmeguard
