#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nvmeguard/derived.hpp"

namespace nvmeguard {

enum class SliceMode : std::uint8_t { ByCommand, ByVolume, ByTime };

inline constexpr std::size_t kDefaultSliceCommands = 16500;
inline constexpr std::uint64_t kDefaultSliceBytes = 512ull << 20;  // 0.5 GiB

struct SliceBudget {
  SliceMode mode = SliceMode::ByCommand;
  std::size_t commands = kDefaultSliceCommands;
  std::uint64_t bytes = kDefaultSliceBytes;
  double seconds = 30.0;
};

struct Slice {
  std::string stream_id;
  std::size_t slice_index = 0;
  SliceMode mode = SliceMode::ByCommand;
  bool partial = false;  // trailing slice that did not reach its budget
  std::vector<DerivedCommand> commands;

  [[nodiscard]] std::uint64_t volume() const;
  [[nodiscard]] bool has_ransomware() const;
};

// Partitions an annotated stream into successive non-overlapping slices.
// ByVolume never splits a command: a command that would push the running
// total past the budget opens the next slice. Throws on a zero budget.
std::vector<Slice> slice_stream(const std::string& stream_id,
                                std::span<const DerivedCommand> commands,
                                const SliceBudget& budget);

SliceMode parse_slice_mode(const std::string& name);
std::string to_string(SliceMode mode);

}  // namespace nvmeguard
