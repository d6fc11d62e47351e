#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nvmeguard/derived.hpp"
#include "nvmeguard/slicer.hpp"

namespace nvmeguard {

inline constexpr std::uint32_t kCltVocabulary = 1024;
inline constexpr std::uint32_t kCltHalfVocabulary = 512;
inline constexpr std::uint32_t kSingleTokenVocabulary = 1u << 18;
inline constexpr std::size_t kDefaultFrameCommands = 250;

struct QuantizedCommand {
  std::uint8_t dt_bin = 0;      // 4 bits
  std::uint8_t size_bin = 0;    // 4 bits
  std::uint8_t opcode_bit = 0;  // R=0, W=1
  std::uint8_t offset_msb = 0;  // 4 bits
  std::uint8_t offset_lsb = 0;  // 2 bits
  std::uint8_t war_bit = 0;
  std::uint8_t rar_bit = 0;
  std::uint8_t raw_bit = 0;

  bool operator==(const QuantizedCommand&) const = default;
};

struct TokenPair {
  std::uint32_t first = 0;   // [0, 512) unless the index bit is ablated
  std::uint32_t second = 0;  // [512, 1024) unless the index bit is ablated

  bool operator==(const TokenPair&) const = default;
};

// Attribute groups that can be dropped for ablation runs. Dropped fields are
// forced to zero before packing.
struct CltAblation {
  bool offset = false;
  bool delta_t = false;
  bool opcode = false;
  bool size = false;
  bool overlap = false;
  bool index = false;

  static CltAblation parse(const std::string& csv);  // e.g. "offset,size"
  [[nodiscard]] bool any() const { return offset || delta_t || opcode || size || overlap || index; }
};

struct CltTokenizerConfig {
  std::size_t frame_commands = kDefaultFrameCommands;
  // Width in bits used to locate the 4 major offset bits; defaults to
  // ceil(log2(capacity)).
  std::optional<unsigned> offset_msb_width;
  bool single_token = false;  // pack all 18 bits into one token per command
  CltAblation ablation;
};

std::uint8_t quantize_delta_t(double dt);
std::uint8_t quantize_size(std::uint64_t size);

struct OffsetBits {
  std::uint8_t msb = 0;
  std::uint8_t lsb = 0;
};

// Throws if capacity < 2^25 or offset >= capacity.
OffsetBits quantize_offset(std::uint64_t offset, std::uint64_t capacity,
                           std::optional<unsigned> msb_width = std::nullopt);

QuantizedCommand quantize_command(const DerivedCommand& dc, std::uint64_t capacity,
                                  std::optional<unsigned> msb_width = std::nullopt);

std::uint32_t pack_first(const QuantizedCommand& q);
std::uint32_t pack_second(const QuantizedCommand& q);
TokenPair pack_tokens(const QuantizedCommand& q, bool index_bit = true);
QuantizedCommand unpack_tokens(const TokenPair& tokens);

TokenPair tokenize_command(const DerivedCommand& dc, std::uint64_t capacity,
                           const CltTokenizerConfig& config = {});

// One frame of tokens plus the per-command ransomware labels it covers.
struct TokenFrame {
  std::vector<std::uint32_t> tokens;
  std::vector<std::uint8_t> labels;  // 1 = ransomware, one per command
};

// Consecutive frames of `frame_commands` commands (the last may be short);
// two tokens per command, first then second (or one token in single-token mode).
std::vector<TokenFrame> tokenize_frames(const Slice& slice, std::uint64_t capacity,
                                        const CltTokenizerConfig& config = {});

std::uint32_t vocabulary_size(const CltTokenizerConfig& config);

}  // namespace nvmeguard
