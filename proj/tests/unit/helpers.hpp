#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "nvmeguard/derived.hpp"
#include "nvmeguard/slicer.hpp"
#include "nvmeguard/trace.hpp"

namespace testutil {

using namespace nvmeguard;

inline constexpr std::uint64_t kCapacity = 1ull << 36;

// Random valid stream. A small address range keeps overlaps frequent.
inline Stream random_stream(std::uint64_t seed, std::size_t n, std::uint64_t span = 1ull << 22,
                            bool with_unlabeled = false) {
  std::mt19937_64 rng(seed);
  Stream s;
  s.stream_id = "rand-" + std::to_string(seed);
  s.disk_capacity = kCapacity;
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Command c;
    // ties happen now and then
    if (rng() % 8 != 0) t += static_cast<double>(rng() % 100000) * 1e-7;
    c.timestamp = t;
    c.opcode = rng() % 2 ? Opcode::Write : Opcode::Read;
    c.size = 512 * (1 + rng() % 64);
    c.offset = 512 * (rng() % (span / 512));
    const auto l = rng() % (with_unlabeled ? 3 : 2);
    c.label = static_cast<Label>(l);
    s.commands.push_back(c);
  }
  return s;
}

inline Command cmd(double t, Opcode op, std::uint64_t off, std::uint64_t size,
                   Label label = Label::Benign) {
  return Command{t, op, off, size, label};
}

// Slice over a stream's annotations, for module tests that need one.
inline Slice whole_slice(const Stream& s) {
  Slice sl;
  sl.stream_id = s.stream_id;
  sl.commands = annotate_stream(s);
  return sl;
}

// Fresh directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("nvmeguard-test-" + name + "-" + std::to_string(std::random_device{}()));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
