#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nvmeguard/kv_file.hpp"
#include "nvmeguard/trace.hpp"

namespace nvmeguard {

// Knobs for the synthetic workload generator. Sizes in bytes, times in
// seconds unless the key says otherwise.
struct WorkloadSpec {
  std::uint64_t seed = 1;
  std::size_t commands = 4000;
  std::uint64_t capacity = 1ull << 36;
  std::string stream_id = "synthetic";

  // File extents live in the lower half of the disk; fresh writes (archive,
  // install) go to the upper half.
  std::size_t files = 300;
  std::uint64_t file_min = 256ull << 10;
  std::uint64_t file_max = 32ull << 20;
  std::uint64_t layout_seed = 7;  // shared by streams that model the same disk

  // Benign behaviour mix.
  double w_sequential_read = 3.0;
  double w_random_rw = 3.0;
  double w_archive = 1.0;
  double w_install = 1.0;
  double w_updater = 1.0;  // read a file in chunks, then rewrite it in place
  double benign_gap = 300e-6;  // mean inter-command time inside an episode
  double idle_gap = 5e-3;      // mean pause between episodes

  // Ransomware template: read `burst` chunks, pause to encrypt, overwrite them.
  std::uint64_t chunk = 256ull << 10;
  std::size_t burst = 1;
  double overwrite_ratio = 1.0;    // fraction of each read chunk overwritten
  double interleave = 0.5;         // fraction of commands from benign background
  double start_time = 0.0;         // benign-only prefix before the attack
  double encrypt_rate = 400e6;     // bytes per second of encryption
  double ransom_gap = 40e-6;       // inter-command time inside a burst
  std::optional<std::string> family;

  // Throws on negative weights, interleave outside [0,1] and similar.
  void validate() const;

  static WorkloadSpec from_kv(const KeyValueFile& kv);
  [[nodiscard]] KeyValueFile to_kv() const;
};

// Deterministic in spec.seed; timestamps strictly increasing; all labels Benign.
Stream generate_benign(const WorkloadSpec& spec);

// Ransomware commands labeled Ransomware, interleaved with benign background
// at the configured fraction after a benign-only prefix of `start_time`.
Stream generate_ransomware(const WorkloadSpec& spec);

// Stable timestamp merge of benign with ransomware shifted by launch_time.
Stream mix_streams(const Stream& benign, const Stream& ransomware, double launch_time);

std::uint64_t ransomware_bytes(const Stream& stream);

struct SuiteStream {
  Stream stream;
  bool ransomware = false;
  bool held_out = false;  // test half of the suite's fixed train/test split
};

struct DeskBenchConfig {
  std::uint64_t seed = 2024;
  std::size_t benign_streams = 36;
  std::size_t ransomware_streams = 36;
  std::size_t commands = 4000;
  std::size_t families = 6;
};

// Fixed suite used by the end-to-end checks: benign streams with varied
// mixes and ransomware streams from `families` parameter families. Streams
// alternate between the train and held-out halves within each benign mix and
// each family, so both halves cover every mix, family and interleave level.
std::vector<SuiteStream> desk_bench_suite(const DeskBenchConfig& config = {});

// Spec for the i-th ransomware family of the desk bench.
WorkloadSpec desk_bench_family(std::size_t family, std::uint64_t seed);

}  // namespace nvmeguard
