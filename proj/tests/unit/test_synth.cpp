#include <doctest.h>

#include <algorithm>
#include <array>
#include <map>

#include "helpers.hpp"
#include "nvmeguard/baselines.hpp"
#include "nvmeguard/derived.hpp"
#include "nvmeguard/synth.hpp"

using namespace nvmeguard;

namespace {

WorkloadSpec spec(std::uint64_t seed, std::size_t commands) {
  WorkloadSpec s;
  s.seed = seed;
  s.commands = commands;
  return s;
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("benign generator") {
    CHECK(generate_benign(spec(1, 0)).commands.empty());
    const auto a = generate_benign(spec(3, 3000));
    CHECK(a.commands.size() == 3000);
    CHECK(generate_benign(spec(3, 3000)) == a);
    CHECK_FALSE(generate_benign(spec(4, 3000)) == a);
    CHECK(validate_stream(a).empty());
    for (std::size_t i = 1; i < a.commands.size(); ++i) {
      CHECK(a.commands[i].timestamp > a.commands[i - 1].timestamp);
    }
    for (const auto& c : a.commands) CHECK(c.label == Label::Benign);
  }

  TEST_CASE("sequential reads only move forward within a pass") {
    auto s = spec(5, 2000);
    s.files = 1;
    s.w_random_rw = s.w_archive = s.w_install = s.w_updater = 0.0;
    const auto st = generate_benign(s);
    const auto file_start = st.commands.front().offset;
    for (std::size_t i = 1; i < st.commands.size(); ++i) {
      const auto& c = st.commands[i];
      CHECK(c.is_read());
      if (c.offset < st.commands[i - 1].offset) CHECK(c.offset == file_start);
    }
  }

  TEST_CASE("ransomware generator") {
    auto s = spec(7, 3000);
    s.interleave = 0.0;
    const auto pure = generate_ransomware(s);
    CHECK(pure.commands.size() == 3000);
    for (const auto& c : pure.commands) CHECK(c.label == Label::Ransomware);
    CHECK(validate_stream(pure).empty());

    for (std::size_t f = 0; f < 6; ++f) {
      auto fs = desk_bench_family(f, 11);
      fs.commands = 4000;
      const auto st = generate_ransomware(fs);
      CHECK(validate_stream(st).empty());
      std::uint64_t labeled = 0, writes = 0, covered = 0;
      const auto ann = annotate_stream(st);
      for (const auto& c : ann) {
        if (c.base.label != Label::Ransomware) continue;
        labeled += c.base.size;
        if (c.base.is_write()) {
          writes += c.base.size;
          if (c.is_war()) covered += c.base.size;
        }
      }
      CAPTURE(f);
      CHECK(ransomware_bytes(st) == labeled);
      CHECK(static_cast<double>(covered) >= 0.9 * static_cast<double>(writes));
    }
  }

  TEST_CASE("encrypt-everything traffic splits evenly") {
    auto s = spec(9, 1000);
    s.interleave = 0.0;
    s.overwrite_ratio = 1.0;
    const auto st = generate_ransomware(s);
    const auto f = rf_extract_features(testutil::whole_slice(st));
    CHECK(f[0] == doctest::Approx(0.5).epsilon(0.05));
    CHECK(f[1] == doctest::Approx(0.5).epsilon(0.05));
  }

  TEST_CASE("mixing") {
    const auto b = generate_benign(spec(1, 200));
    auto r = spec(2, 100);
    r.interleave = 0.0;
    const auto ran = generate_ransomware(r);

    const double end = b.commands.back().timestamp + 1.0;
    const auto cat = mix_streams(b, ran, end);
    REQUIRE(cat.commands.size() == 300);
    CHECK(std::equal(b.commands.begin(), b.commands.end(), cat.commands.begin()));

    Stream empty = ran;
    empty.commands.clear();
    CHECK(mix_streams(b, empty, 0.0).commands == b.commands);

    // stable sort oracle of the union, benign first on ties
    const auto mixed = mix_streams(b, ran, 0.01);
    std::vector<std::pair<Command, int>> all;
    for (const auto& c : b.commands) all.push_back({c, 0});
    for (auto c : ran.commands) {
      c.timestamp += 0.01;
      all.push_back({c, 1});
    }
    std::stable_sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
      return x.first.timestamp < y.first.timestamp;
    });
    REQUIRE(mixed.commands.size() == all.size());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(mixed.commands[i] == all[i].first);

    Stream other = ran;
    other.disk_capacity /= 2;
    CHECK_THROWS(mix_streams(b, other, 0.0));
  }

  TEST_CASE("spec files") {
    auto s = spec(3, 10);
    s.family = "family-2";
    s.interleave = 0.25;
    const auto back = WorkloadSpec::from_kv(s.to_kv());
    CHECK(back.to_kv().entries() == s.to_kv().entries());
    KeyValueFile bad;
    bad.set("colour", "red");
    CHECK_THROWS(WorkloadSpec::from_kv(bad));
    auto neg = s;
    neg.interleave = 1.5;
    CHECK_THROWS(neg.validate());
  }

  TEST_CASE("desk bench suite") {
    DeskBenchConfig cfg;
    cfg.benign_streams = 3;
    cfg.ransomware_streams = 4;
    cfg.commands = 500;
    const auto a = desk_bench_suite(cfg);
    REQUIRE(a.size() == 7);
    CHECK(a[0].stream.stream_id == "benign-000");
    CHECK(a[3].ransomware);
    CHECK(a[3].stream.family.has_value());
    const auto b = desk_bench_suite(cfg);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].stream == b[i].stream);
  }

  TEST_CASE("desk bench split covers every family and mix") {
    DeskBenchConfig cfg;
    cfg.commands = 200;
    const auto suite = desk_bench_suite(cfg);
    std::map<std::string, std::array<int, 2>> families;
    std::map<double, std::array<int, 2>> interleaves;
    std::array<std::array<int, 2>, 4> mixes{};
    std::array<int, 2> halves{};
    for (std::size_t i = 0; i < suite.size(); ++i) {
      const auto& s = suite[i];
      halves[s.held_out]++;
      if (s.ransomware) {
        families[*s.stream.family][s.held_out]++;
        const auto j = i - cfg.benign_streams;
        interleaves[std::array{0.2, 0.4, 0.6, 0.8}[(j / cfg.families) % 4]][s.held_out]++;
      } else {
        mixes[i % 4][s.held_out]++;
      }
    }
    CHECK(halves[0] == 36);
    CHECK(halves[1] == 36);
    CHECK(families.size() == 6);
    for (const auto& [name, n] : families) CHECK(n == std::array{3, 3});
    for (const auto& [level, n] : interleaves) CHECK((n[0] > 0 && n[1] > 0));
    for (const auto& n : mixes) CHECK((n[0] > 0 && n[1] > 0));
  }
}
