#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "nvmeguard/trace.hpp"

namespace nvmeguard {

// (opcode of the current command, opcode of the earlier command).
enum class AccessPair : std::uint8_t {
  WriteAfterRead = 0,  // (W, R)
  ReadAfterRead = 1,   // (R, R)
  ReadAfterWrite = 2,  // (R, W)
  WriteAfterWrite = 3  // (W, W)
};

inline constexpr std::array<AccessPair, 4> kAccessPairs = {
    AccessPair::WriteAfterRead, AccessPair::ReadAfterRead, AccessPair::ReadAfterWrite,
    AccessPair::WriteAfterWrite};

constexpr Opcode current_opcode(AccessPair p) {
  return (p == AccessPair::WriteAfterRead || p == AccessPair::WriteAfterWrite) ? Opcode::Write
                                                                               : Opcode::Read;
}

constexpr Opcode earlier_opcode(AccessPair p) {
  return (p == AccessPair::WriteAfterRead || p == AccessPair::ReadAfterRead) ? Opcode::Read
                                                                             : Opcode::Write;
}

struct DerivedCommand {
  Command base;
  double delta_t = 0.0;
  std::array<std::uint64_t, 4> ov{};             // indexed by AccessPair
  std::array<std::optional<double>, 4> lapse{};  // present iff ov > 0

  [[nodiscard]] std::uint64_t overlap(AccessPair p) const {
    return ov[static_cast<std::size_t>(p)];
  }
  [[nodiscard]] std::optional<double> time_lapse(AccessPair p) const {
    return lapse[static_cast<std::size_t>(p)];
  }
  [[nodiscard]] bool is_war() const { return overlap(AccessPair::WriteAfterRead) > 0; }
  [[nodiscard]] bool is_rar() const { return overlap(AccessPair::ReadAfterRead) > 0; }

  bool operator==(const DerivedCommand&) const = default;
};

struct LastAccess {
  std::uint64_t overlap = 0;
  std::optional<double> lapse;
};

// Byte-range map remembering, for every byte, the index of the last command
// that touched it. Stored ranges are disjoint half-open [begin, end).
class LastTouchMap {
 public:
  // Largest stored index among ranges intersecting [begin, end).
  [[nodiscard]] std::optional<std::size_t> latest_overlapping(std::uint64_t begin,
                                                              std::uint64_t end) const;

  void assign(std::uint64_t begin, std::uint64_t end, std::size_t index);

  [[nodiscard]] std::size_t fragment_count() const { return ranges_.size(); }

 private:
  struct Entry {
    std::uint64_t end;
    std::size_t index;
  };
  std::map<std::uint64_t, Entry> ranges_;  // keyed by begin
};

// Per-command overlap volumes, time lapses and inter-command time difference.
// History is kept for the whole stream.
std::vector<DerivedCommand> annotate_stream(const Stream& stream);

// Brute-force backward scan for a single command; reference for annotate_stream.
LastAccess last_access_oracle(const Stream& stream, std::size_t index, AccessPair pair);

void write_annotated_csv(std::span<const DerivedCommand> commands,
                         const std::filesystem::path& path);

}  // namespace nvmeguard
