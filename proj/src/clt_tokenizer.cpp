#include "nvmeguard/clt_tokenizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nvmeguard {

CltAblation CltAblation::parse(const std::string& csv) {
  CltAblation a;
  std::istringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    if (item == "offset") a.offset = true;
    else if (item == "dt") a.delta_t = true;
    else if (item == "opcode") a.opcode = true;
    else if (item == "size") a.size = true;
    else if (item == "ov") a.overlap = true;
    else if (item == "index") a.index = true;
    else throw std::invalid_argument("unknown CLT ablation group '" + item + "'");
  }
  return a;
}

std::uint8_t quantize_delta_t(double dt) {
  if (!(dt >= 0.0)) throw std::invalid_argument("negative inter-command time");
  // std::round rounds halfway cases away from zero.
  const double bin = std::round(std::log(dt * 1e5 + 1.0));
  return static_cast<std::uint8_t>(std::min(bin, 15.0));
}

std::uint8_t quantize_size(std::uint64_t size) {
  switch (size) {
    case 512ull << 10:
      return 13;
    case 128ull << 10:
      return 14;
    case 16ull << 10:
      return 15;
    default:
      break;
  }
  if (size < 512) return 0;
  // floor(log2(size / 512)) == floor(log2(size)) - 9 for size >= 512.
  const auto log2_floor = static_cast<int>(std::bit_width(size)) - 1;
  return static_cast<std::uint8_t>(std::min(log2_floor - 9, 12));
}

OffsetBits quantize_offset(std::uint64_t offset, std::uint64_t capacity,
                           std::optional<unsigned> msb_width) {
  if (capacity < (1ull << 25)) throw std::invalid_argument("disk capacity below 2^25 bytes");
  if (offset >= capacity) throw std::invalid_argument("offset beyond disk capacity");
  // ceil(log2(capacity))
  const unsigned width =
      msb_width.value_or(static_cast<unsigned>(std::bit_width(capacity - 1)));
  if (width < 4 || width > 64) throw std::invalid_argument("offset msb width out of range");
  OffsetBits bits;
  bits.lsb = static_cast<std::uint8_t>((offset >> 21) & 0x3);
  bits.msb = static_cast<std::uint8_t>((offset >> (width - 4)) & 0xF);
  return bits;
}

QuantizedCommand quantize_command(const DerivedCommand& dc, std::uint64_t capacity,
                                  std::optional<unsigned> msb_width) {
  QuantizedCommand q;
  q.dt_bin = quantize_delta_t(dc.delta_t);
  q.size_bin = quantize_size(dc.base.size);
  q.opcode_bit = dc.base.is_write() ? 1 : 0;
  const auto off = quantize_offset(dc.base.offset, capacity, msb_width);
  q.offset_msb = off.msb;
  q.offset_lsb = off.lsb;
  q.war_bit = dc.overlap(AccessPair::WriteAfterRead) > 0 ? 1 : 0;
  q.rar_bit = dc.overlap(AccessPair::ReadAfterRead) > 0 ? 1 : 0;
  q.raw_bit = dc.overlap(AccessPair::ReadAfterWrite) > 0 ? 1 : 0;
  return q;
}

std::uint32_t pack_first(const QuantizedCommand& q) {
  return (std::uint32_t{q.dt_bin} << 5) | (std::uint32_t{q.size_bin} << 1) | q.opcode_bit;
}

std::uint32_t pack_second(const QuantizedCommand& q) {
  return (std::uint32_t{q.offset_msb} << 5) | (std::uint32_t{q.offset_lsb} << 3) |
         (std::uint32_t{q.war_bit} << 2) | (std::uint32_t{q.rar_bit} << 1) | q.raw_bit;
}

TokenPair pack_tokens(const QuantizedCommand& q, bool index_bit) {
  return {pack_first(q), (index_bit ? kCltHalfVocabulary : 0u) | pack_second(q)};
}

QuantizedCommand unpack_tokens(const TokenPair& tokens) {
  QuantizedCommand q;
  const auto a = tokens.first & 0x1FF;
  const auto b = tokens.second & 0x1FF;
  q.dt_bin = static_cast<std::uint8_t>((a >> 5) & 0xF);
  q.size_bin = static_cast<std::uint8_t>((a >> 1) & 0xF);
  q.opcode_bit = static_cast<std::uint8_t>(a & 0x1);
  q.offset_msb = static_cast<std::uint8_t>((b >> 5) & 0xF);
  q.offset_lsb = static_cast<std::uint8_t>((b >> 3) & 0x3);
  q.war_bit = static_cast<std::uint8_t>((b >> 2) & 0x1);
  q.rar_bit = static_cast<std::uint8_t>((b >> 1) & 0x1);
  q.raw_bit = static_cast<std::uint8_t>(b & 0x1);
  return q;
}

namespace {

QuantizedCommand apply_ablation(QuantizedCommand q, const CltAblation& a) {
  if (a.delta_t) q.dt_bin = 0;
  if (a.size) q.size_bin = 0;
  if (a.opcode) q.opcode_bit = 0;
  if (a.offset) {
    q.offset_msb = 0;
    q.offset_lsb = 0;
  }
  if (a.overlap) {
    q.war_bit = 0;
    q.rar_bit = 0;
    q.raw_bit = 0;
  }
  return q;
}

}  // namespace

TokenPair tokenize_command(const DerivedCommand& dc, std::uint64_t capacity,
                           const CltTokenizerConfig& config) {
  const auto q = apply_ablation(quantize_command(dc, capacity, config.offset_msb_width),
                                config.ablation);
  return pack_tokens(q, !config.ablation.index);
}

std::uint32_t vocabulary_size(const CltTokenizerConfig& config) {
  return config.single_token ? kSingleTokenVocabulary : kCltVocabulary;
}

std::vector<TokenFrame> tokenize_frames(const Slice& slice, std::uint64_t capacity,
                                        const CltTokenizerConfig& config) {
  if (config.frame_commands == 0) throw std::invalid_argument("frame size must be positive");
  std::vector<TokenFrame> frames;
  const auto& cmds = slice.commands;
  const std::size_t per_command = config.single_token ? 1 : 2;
  for (std::size_t start = 0; start < cmds.size(); start += config.frame_commands) {
    const std::size_t stop = std::min(cmds.size(), start + config.frame_commands);
    TokenFrame frame;
    frame.tokens.reserve((stop - start) * per_command);
    frame.labels.reserve(stop - start);
    for (std::size_t i = start; i < stop; ++i) {
      const auto pair = tokenize_command(cmds[i], capacity, config);
      if (config.single_token) {
        frame.tokens.push_back(((pair.first & 0x1FF) << 9) | (pair.second & 0x1FF));
      } else {
        frame.tokens.push_back(pair.first);
        frame.tokens.push_back(pair.second);
      }
      frame.labels.push_back(cmds[i].base.label == Label::Ransomware ? 1 : 0);
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

}  // namespace nvmeguard
