#include "nvmeguard/derived.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace nvmeguard {
namespace {

std::uint64_t intersection(const Command& a, const Command& b) {
  const auto lo = std::max(a.offset, b.offset);
  const auto hi = std::min(a.end(), b.end());
  return hi > lo ? hi - lo : 0;
}

}  // namespace

std::optional<std::size_t> LastTouchMap::latest_overlapping(std::uint64_t begin,
                                                            std::uint64_t end) const {
  std::optional<std::size_t> best;
  auto it = ranges_.upper_bound(begin);
  if (it != ranges_.begin()) {
    auto prev = std::prev(it);
    if (prev->second.end > begin) best = prev->second.index;
  }
  for (; it != ranges_.end() && it->first < end; ++it) {
    if (!best || it->second.index > *best) best = it->second.index;
  }
  return best;
}

void LastTouchMap::assign(std::uint64_t begin, std::uint64_t end, std::size_t index) {
  if (begin >= end) return;

  // Trim a range that starts before `begin` and reaches into it.
  auto it = ranges_.lower_bound(begin);
  if (it != ranges_.begin()) {
    auto prev = std::prev(it);
    if (prev->second.end > begin) {
      const Entry tail = prev->second;
      prev->second.end = begin;
      if (tail.end > end) ranges_.emplace(end, Entry{tail.end, tail.index});
    }
  }

  // Drop or trim ranges starting inside [begin, end).
  it = ranges_.lower_bound(begin);
  while (it != ranges_.end() && it->first < end) {
    if (it->second.end > end) {
      const Entry tail = it->second;
      ranges_.erase(it);
      ranges_.emplace(end, tail);
      break;
    }
    it = ranges_.erase(it);
  }
  ranges_.emplace(begin, Entry{end, index});
}

std::vector<DerivedCommand> annotate_stream(const Stream& stream) {
  const auto& cmds = stream.commands;
  std::vector<DerivedCommand> out;
  out.reserve(cmds.size());

  // One map per opcode of the earlier command.
  std::array<LastTouchMap, 2> last_touch;

  for (std::size_t i = 0; i < cmds.size(); ++i) {
    const Command& c = cmds[i];
    DerivedCommand d;
    d.base = c;
    d.delta_t = i == 0 ? 0.0 : c.timestamp - cmds[i - 1].timestamp;

    for (AccessPair pair : kAccessPairs) {
      if (current_opcode(pair) != c.opcode) continue;
      const auto& map = last_touch[static_cast<std::size_t>(earlier_opcode(pair))];
      if (auto j = map.latest_overlapping(c.offset, c.end())) {
        const auto k = static_cast<std::size_t>(pair);
        d.ov[k] = intersection(c, cmds[*j]);
        d.lapse[k] = c.timestamp - cmds[*j].timestamp;
      }
    }
    last_touch[static_cast<std::size_t>(c.opcode)].assign(c.offset, c.end(), i);
    out.push_back(d);
  }
  return out;
}

LastAccess last_access_oracle(const Stream& stream, std::size_t index, AccessPair pair) {
  const auto& cmds = stream.commands;
  if (index >= cmds.size()) throw std::out_of_range("command index out of range");
  const Command& c = cmds[index];
  if (c.opcode != current_opcode(pair)) return {};
  for (std::size_t j = index; j-- > 0;) {
    if (cmds[j].opcode != earlier_opcode(pair)) continue;
    if (const auto ov = intersection(c, cmds[j]); ov > 0) {
      return {ov, c.timestamp - cmds[j].timestamp};
    }
  }
  return {};
}

void write_annotated_csv(std::span<const DerivedCommand> commands,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "timestamp,opcode,offset,size,label,delta_t,ov_war,ov_rar,ov_raw,ov_waw,"
         "lapse_war,lapse_rar,lapse_raw,lapse_waw\n";
  for (const auto& d : commands) {
    const auto& c = d.base;
    out << format_seconds(c.timestamp) << ',' << opcode_letter(c.opcode) << ',' << c.offset << ','
        << c.size << ',';
    if (c.label == Label::Benign) out << '0';
    if (c.label == Label::Ransomware) out << '1';
    out << ',' << format_seconds(d.delta_t);
    for (auto v : d.ov) out << ',' << v;
    for (const auto& l : d.lapse) {
      out << ',';
      if (l) out << format_seconds(*l);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace nvmeguard
