#include "nvmeguard/slicer.hpp"

#include <algorithm>
#include <stdexcept>

namespace nvmeguard {

std::uint64_t Slice::volume() const {
  std::uint64_t v = 0;
  for (const auto& c : commands) v += c.base.size;
  return v;
}

bool Slice::has_ransomware() const {
  return std::any_of(commands.begin(), commands.end(),
                     [](const DerivedCommand& c) { return c.base.label == Label::Ransomware; });
}

std::vector<Slice> slice_stream(const std::string& stream_id,
                                std::span<const DerivedCommand> commands,
                                const SliceBudget& budget) {
  switch (budget.mode) {
    case SliceMode::ByCommand:
      if (budget.commands == 0) throw std::invalid_argument("slice command budget is zero");
      break;
    case SliceMode::ByVolume:
      if (budget.bytes == 0) throw std::invalid_argument("slice byte budget is zero");
      break;
    case SliceMode::ByTime:
      if (!(budget.seconds > 0.0)) throw std::invalid_argument("slice time budget is zero");
      break;
  }

  std::vector<Slice> slices;
  auto open = [&]() -> Slice& {
    Slice s;
    s.stream_id = stream_id;
    s.slice_index = slices.size();
    s.mode = budget.mode;
    slices.push_back(std::move(s));
    return slices.back();
  };

  Slice* current = nullptr;
  std::uint64_t volume = 0;
  double start_time = 0.0;

  for (const auto& c : commands) {
    bool start_new = current == nullptr;
    if (current) {
      switch (budget.mode) {
        case SliceMode::ByCommand:
          start_new = current->commands.size() == budget.commands;
          break;
        case SliceMode::ByVolume:
          start_new = volume + c.base.size > budget.bytes && !current->commands.empty();
          break;
        case SliceMode::ByTime:
          start_new = c.base.timestamp - start_time >= budget.seconds;
          break;
      }
    }
    if (start_new) {
      current = &open();
      volume = 0;
      start_time = c.base.timestamp;
    }
    current->commands.push_back(c);
    volume += c.base.size;
  }

  // Only the trailing slice can be short of its budget.
  if (!slices.empty()) {
    Slice& last = slices.back();
    switch (budget.mode) {
      case SliceMode::ByCommand:
        last.partial = last.commands.size() < budget.commands;
        break;
      case SliceMode::ByVolume: {
        // Partial when its largest command would still have fit.
        std::uint64_t largest = 0;
        for (const auto& c : last.commands) largest = std::max(largest, c.base.size);
        last.partial = volume + largest <= budget.bytes;
        break;
      }
      case SliceMode::ByTime:
        last.partial = last.commands.back().base.timestamp - start_time < budget.seconds;
        break;
    }
  }
  return slices;
}

SliceMode parse_slice_mode(const std::string& name) {
  if (name == "command") return SliceMode::ByCommand;
  if (name == "volume") return SliceMode::ByVolume;
  if (name == "time") return SliceMode::ByTime;
  throw std::invalid_argument("unknown slice mode '" + name + "'");
}

std::string to_string(SliceMode mode) {
  switch (mode) {
    case SliceMode::ByCommand:
      return "command";
    case SliceMode::ByVolume:
      return "volume";
    case SliceMode::ByTime:
      return "time";
  }
  return "?";
}

}  // namespace nvmeguard
