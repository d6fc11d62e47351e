#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nvmeguard/clt_tokenizer.hpp"

using namespace nvmeguard;

namespace {

DerivedCommand derived(Opcode op, std::uint64_t off, std::uint64_t size, double dt = 0.0) {
  DerivedCommand d;
  d.base = testutil::cmd(0.0, op, off, size);
  d.delta_t = dt;
  return d;
}

Slice slice_of(std::size_t n, std::uint64_t seed = 1) {
  auto s = testutil::random_stream(seed, n, 1ull << 30);
  return testutil::whole_slice(s);
}

}  // namespace

TEST_SUITE("tokenizer") {
  TEST_CASE("delta-t bins") {
    CHECK(quantize_delta_t(0.0) == 0);
    CHECK(quantize_delta_t(1e-5) == 1);
    CHECK(quantize_delta_t(100.0) == 15);
    auto at = [](double ln_value) { return (std::exp(ln_value) - 1.0) / 1e5; };
    CHECK(quantize_delta_t(at(2.49)) == 2);
    CHECK(quantize_delta_t(at(2.51)) == 3);
    CHECK_THROWS(quantize_delta_t(-1.0));
  }

  TEST_CASE("size bins") {
    CHECK(quantize_size(512) == 0);
    CHECK(quantize_size(1024) == 1);
    CHECK(quantize_size(524288) == 13);
    CHECK(quantize_size(131072) == 14);
    CHECK(quantize_size(16384) == 15);
    CHECK(quantize_size(4u << 20) == 12);
    CHECK(quantize_size(2u << 20) == 12);
    CHECK(quantize_size(4096) == 3);
  }

  TEST_CASE("offset bits") {
    const auto cap = 1ull << 36;
    auto z = quantize_offset(0, cap);
    CHECK(z.msb == 0);
    CHECK(z.lsb == 0);
    CHECK(quantize_offset(1ull << 21, cap).lsb == 1);
    CHECK(quantize_offset(15ull << 32, cap).msb == 15);
    CHECK(quantize_offset(15ull << 32, cap, 40u).msb == 0);
    CHECK(quantize_offset(1ull << 36, 1ull << 40, 40u).msb == 1);
    CHECK_THROWS(quantize_offset(cap, cap));
    CHECK_THROWS(quantize_offset(0, 1ull << 20));
  }

  TEST_CASE("packing examples") {
    CHECK(tokenize_command(derived(Opcode::Read, 0, 512), 1ull << 36) == TokenPair{0, 512});
    QuantizedCommand q;
    q.opcode_bit = 1;
    q.dt_bin = 15;
    q.size_bin = 15;
    CHECK(pack_first(q) == 15 * 32 + 15 * 2 + 1);
    CHECK(pack_first(q) == 511);
  }

  TEST_CASE("all 2^18 attribute combinations are a bijection") {
    std::vector<bool> seen(1u << 18, false);
    for (std::uint32_t bits = 0; bits < (1u << 18); ++bits) {
      QuantizedCommand q;
      q.dt_bin = bits & 0xF;
      q.size_bin = (bits >> 4) & 0xF;
      q.opcode_bit = (bits >> 8) & 1;
      q.offset_msb = (bits >> 9) & 0xF;
      q.offset_lsb = (bits >> 13) & 0x3;
      q.war_bit = (bits >> 15) & 1;
      q.rar_bit = (bits >> 16) & 1;
      q.raw_bit = (bits >> 17) & 1;
      const auto t = pack_tokens(q);
      REQUIRE(t.first < 512);
      REQUIRE(t.second >= 512);
      REQUIRE(t.second < 1024);
      REQUIRE(unpack_tokens(t) == q);
      const auto key = (t.first << 9) | (t.second - 512);
      REQUIRE_FALSE(seen[key]);
      seen[key] = true;
    }
  }

  TEST_CASE("ablation leaves other fields alone") {
    auto s = testutil::random_stream(3, 400, 1ull << 22);
    const auto a = annotate_stream(s);
    const char* groups[] = {"offset", "dt", "opcode", "size", "ov"};
    for (const char* g : groups) {
      CltTokenizerConfig cfg;
      cfg.ablation = CltAblation::parse(g);
      for (const auto& dc : a) {
        const auto full = unpack_tokens(tokenize_command(dc, s.disk_capacity));
        auto dropped = unpack_tokens(tokenize_command(dc, s.disk_capacity, cfg));
        auto expect = full;
        const std::string name = g;
        if (name == "offset") expect.offset_msb = expect.offset_lsb = 0;
        if (name == "dt") expect.dt_bin = 0;
        if (name == "opcode") expect.opcode_bit = 0;
        if (name == "size") expect.size_bin = 0;
        if (name == "ov") expect.war_bit = expect.rar_bit = expect.raw_bit = 0;
        REQUIRE(dropped == expect);
      }
    }
    CltTokenizerConfig idx;
    idx.ablation.index = true;
    CHECK(tokenize_command(a[0], s.disk_capacity, idx).second < 512);
    CHECK_THROWS(CltAblation::parse("colour"));
  }

  TEST_CASE("frames") {
    const auto big = slice_of(16500);
    const auto frames = tokenize_frames(big, 1ull << 36);
    REQUIRE(frames.size() == 66);
    for (const auto& f : frames) {
      CHECK(f.tokens.size() == 500);
      CHECK(f.labels.size() == 250);
    }
    const auto small = tokenize_frames(slice_of(10), 1ull << 36);
    REQUIRE(small.size() == 1);
    CHECK(small[0].tokens.size() == 20);
    CHECK(vocabulary_size({}) == 1024);
  }

  TEST_CASE("even positions below 512, odd at or above") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      for (const auto& f : tokenize_frames(slice_of(700, seed), 1ull << 36)) {
        for (std::size_t i = 0; i < f.tokens.size(); ++i) {
          REQUIRE(f.tokens[i] < 1024);
          REQUIRE((i % 2 == 0) == (f.tokens[i] < 512));
        }
      }
    }
  }

  TEST_CASE("single-token mode") {
    CltTokenizerConfig cfg;
    cfg.single_token = true;
    const auto frames = tokenize_frames(slice_of(300), 1ull << 36, cfg);
    REQUIRE(frames.size() == 2);
    CHECK(frames[0].tokens.size() == 250);
    for (auto t : frames[0].tokens) CHECK(t < kSingleTokenVocabulary);
    CHECK(vocabulary_size(cfg) == (1u << 18));
  }
}
