#include <doctest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "nvmeguard/pipeline.hpp"
#include "nvmeguard/plt_embedder.hpp"

using namespace nvmeguard;
namespace L = nvmeguard::embedding_layout;

namespace {

Slice uniform_slice(std::size_t n, double dt, std::uint64_t size, Opcode op = Opcode::Read,
                    Label label = Label::Benign) {
  Stream s;
  s.disk_capacity = testutil::kCapacity;
  for (std::size_t i = 0; i < n; ++i) {
    s.commands.push_back(testutil::cmd(static_cast<double>(i) * dt, op, i * size, size, label));
  }
  return testutil::whole_slice(s);
}

double mean_dt(const Slice& s) {
  double sum = 0.0;
  for (const auto& c : s.commands) sum += c.delta_t;
  return sum / static_cast<double>(s.commands.size());
}

}  // namespace

TEST_SUITE("embedder") {
  TEST_CASE("dimension identity") {
    CHECK(36 + 24 + 70 + 28 + 14 + 9 == 181);
    CHECK(kEmbeddingDim == 181);
    CHECK(L::kLogSize == 36);
    CHECK(L::kLogOverlap == 24);
    CHECK(L::kOffset == 70);
    CHECK(L::kLapse == 28);
    CHECK(L::kDeltaT == 14);
    CHECK(L::kScalars == 9);
  }

  TEST_CASE("back-average recursion") {
    BackAverageState st;
    const auto a = uniform_slice(100, 0.002, 4096);
    for (int i = 0; i < 30; ++i) st = update_back_averages(st, a);
    CHECK(st.dt_size2 == doctest::Approx(mean_dt(a)).epsilon(1e-12));

    const auto s1 = uniform_slice(100, 0.001, 4096);
    const auto s2 = uniform_slice(100, 0.003, 4096);
    BackAverageState two;
    two = update_back_averages(two, s1);
    two = update_back_averages(two, s2);
    CHECK(two.dt_size2 == doctest::Approx(0.8 * mean_dt(s1) + 0.2 * mean_dt(s2)));
    CHECK(1.0 / std::log(1.0 / kBackAverageAlpha) == doctest::Approx(4.48).epsilon(0.001));
  }

  TEST_CASE("weighted mean") {
    const std::vector<double> v = {1.0, 3.0};
    CHECK(weighted_mean(v, std::vector<double>{1.0, 3.0}) == doctest::Approx(2.5));
    CHECK(weighted_mean(v, std::vector<double>{0.0, 0.0}) == doctest::Approx(2.0));
    CHECK(weighted_mean({}, {}) == 0.0);
  }

  TEST_CASE("normalized attributes") {
    Stream s;
    s.disk_capacity = testutil::kCapacity;
    for (int i = 0; i < 50; ++i) {
      s.commands.push_back(testutil::cmd(i * 0.001, Opcode::Read, 1 << 20, 4096));
    }
    const auto same = testutil::whole_slice(s);
    BackAverageState st = update_back_averages({}, same);
    for (double x : normalize_attributes(same, st).offset) CHECK(x == 0.0);

    // every delta-t equal to the back-average gives 1
    Slice flat = uniform_slice(60, 0.004, 4096);
    flat.commands[0].delta_t = 0.004;
    BackAverageState fs = update_back_averages({}, flat);
    for (double x : normalize_attributes(flat, fs).delta_t) CHECK(x == doctest::Approx(1.0));
    CHECK_THROWS(normalize_attributes(flat, BackAverageState{}));
  }

  TEST_CASE("rescaled timestamps leave time features unchanged") {
    auto base = testutil::random_stream(21, 4000, 1ull << 24);
    for (double k : {3.0, 4.0}) {
      auto scaled = base;
      for (auto& c : scaled.commands) c.timestamp *= k;
      const auto pa = prepare_stream(base, desk_slice_budget());
      const auto pb = prepare_stream(scaled, desk_slice_budget());
      BackAverageState sa, sb;
      for (std::size_t i = 0; i < pa.slices.size(); ++i) {
        sa = update_back_averages(sa, pa.slices[i]);
        sb = update_back_averages(sb, pb.slices[i]);
        if (i == 0) continue;  // warm-up
        const auto na = normalize_attributes(pa.slices[i], sa);
        const auto nb = normalize_attributes(pb.slices[i], sb);
        for (std::size_t j = 0; j < na.delta_t.size(); ++j) {
          REQUIRE(std::abs(na.delta_t[j] - nb.delta_t[j]) <= 1e-9 * std::max(1.0, na.delta_t[j]));
          REQUIRE(std::abs(na.lapse[j] - nb.lapse[j]) <= 1e-9 * std::max(1.0, na.lapse[j]));
        }
      }
      if (k == 4.0) {
        // power-of-two scaling is exact, so whole feature blocks agree
        const auto ea = embed_stream(pa, desk_patch_config());
        const auto eb = embed_stream(pb, desk_patch_config());
        for (std::size_t i = 1; i < ea.size(); ++i) {
          for (std::size_t p = 0; p < ea[i].size(); ++p) {
            for (std::size_t f = L::kLapseBegin; f < L::kScalarsBegin; ++f) {
              REQUIRE(std::abs(ea[i][p].features[f] - eb[i][p].features[f]) <= 1e-9);
            }
          }
        }
      }
    }
  }

  TEST_CASE("patches by command count") {
    PatchConfig cfg;
    const auto s = uniform_slice(16500, 1e-4, 4096);
    const auto p = make_patches(s, cfg);
    REQUIRE(p.size() == 100);
    for (std::size_t k = 0; k + 1 < p.size(); ++k) {
      CHECK(p[k].size() == 250);
      if (k + 2 < p.size()) CHECK(p[k + 1].begin - p[k].begin == 165);
    }
    CHECK(p.back().end == 16500);
    CHECK(p.back().begin == 16250);

    const auto exact = make_patches(uniform_slice(250, 1e-4, 4096), cfg);
    REQUIRE(exact.size() == 100);
    for (const auto& q : exact) {
      CHECK(q == exact[0]);
      CHECK(q.degenerate);
    }
  }

  TEST_CASE("patches by volume") {
    PatchConfig cfg;
    cfg.mode = SliceMode::ByVolume;
    const std::uint64_t mib = 1 << 20;
    const auto s = uniform_slice(512, 1e-4, mib);
    const auto p = make_patches(s, cfg);
    REQUIRE(p.size() == 100);
    const double stride = static_cast<double>((512 - 50) * mib) / 99.0;
    CHECK(stride / 1e6 == doctest::Approx(4.9).epsilon(0.01));
    for (std::size_t k = 0; k < p.size(); ++k) {
      const auto lo = static_cast<std::size_t>(std::floor(stride * k / mib));
      CHECK(p[k].begin == lo);
      CHECK(p[k].size() >= 50);
    }
    CHECK(p.back().end == 512);
  }

  TEST_CASE("one-hot read histogram and command scalar") {
    const auto s = uniform_slice(250, 1e-4, 8192);
    PatchConfig cfg;
    BackAverageState st = update_back_averages({}, s);
    const auto attrs = normalize_attributes(s, st);
    const auto e = embed_patch(s, Patch{0, 250, true}, attrs, cfg);
    const auto bin = log_bin(8192);
    for (std::size_t b = 0; b < L::kLogBins; ++b) {
      CHECK(e.features[L::kLogSizeBegin + b] == (b == bin ? 1.0 : 0.0));      // read
      CHECK(e.features[L::kLogSizeBegin + 12 + b] == 0.0);                   // write
      CHECK(e.features[L::kLogSizeBegin + 24 + b] == (b == bin ? 1.0 : 0.0)); // rest
    }
    for (std::size_t f = L::kLogOverlapBegin; f < L::kOffsetBegin; ++f) CHECK(e.features[f] == 0.0);
    CHECK(e.features[L::kScalarsBegin] == 1.0);
    CHECK(e.features.size() == 181);
  }

  TEST_CASE("histogram mass matches direct sums") {
    const auto s = testutil::whole_slice(testutil::random_stream(6, 1200, 1ull << 21));
    BackAverageState st = update_back_averages({}, s);
    const auto attrs = normalize_attributes(s, st);
    const Patch patch{100, 900, false};
    const auto h = patch_histograms(s, patch, attrs, {});
    double reads = 0, writes = 0, rest = 0, war = 0, rar = 0, bytes = 0, rbytes = 0,
           wbytes = 0, ov_war = 0, ov_rar = 0;
    for (std::size_t i = patch.begin; i < patch.end; ++i) {
      const auto& c = s.commands[i];
      const double sz = static_cast<double>(c.base.size);
      bytes += sz;
      (c.base.is_read() ? reads : writes) += 1;
      (c.base.is_read() ? rbytes : wbytes) += sz;
      if (c.is_war()) war += 1;
      if (c.is_rar()) rar += 1;
      if (!c.is_war() && !c.is_rar()) rest += 1;
      ov_war += static_cast<double>(c.overlap(AccessPair::WriteAfterRead));
      ov_rar += static_cast<double>(c.overlap(AccessPair::ReadAfterRead));
    }
    auto sum = [](const auto& a) { return std::accumulate(a.begin(), a.end(), 0.0); };
    CHECK(sum(h.log_size[0]) == reads);
    CHECK(sum(h.log_size[1]) == writes);
    CHECK(sum(h.log_size[2]) == rest);
    CHECK(sum(h.log_overlap[0]) == war);
    CHECK(sum(h.log_overlap[1]) == rar);
    CHECK(sum(h.offset[0]) == rbytes);
    CHECK(sum(h.offset[1]) == wbytes);
    CHECK(sum(h.delta_t) == bytes);
    CHECK(sum(h.lapse[0]) == ov_war);
    CHECK(sum(h.lapse[1]) == ov_rar);
    CHECK(war > 0);
    CHECK(rar > 0);
  }

  TEST_CASE("label fractions") {
    const auto benign = uniform_slice(20, 1e-3, 4096);
    auto f = label_patch_fractions(benign, Patch{0, 20, false});
    CHECK(f.read == 0.0);
    CHECK(f.write == 0.0);

    Stream s;
    s.disk_capacity = testutil::kCapacity;
    for (int i = 0; i < 10; ++i) {
      s.commands.push_back(testutil::cmd(i * 1e-3, i % 2 ? Opcode::Write : Opcode::Read, 0, 4096,
                                         Label::Ransomware));
    }
    f = label_patch_fractions(testutil::whole_slice(s), Patch{0, 10, false});
    CHECK(f.read == doctest::Approx(0.5));
    CHECK(f.write == doctest::Approx(0.5));

    const auto mixed = testutil::whole_slice(testutil::random_stream(9, 300));
    double total = 0, r = 0, w = 0;
    for (std::size_t i = 40; i < 240; ++i) {
      const auto& c = mixed.commands[i].base;
      total += c.size;
      if (c.label == Label::Ransomware) (c.is_read() ? r : w) += c.size;
    }
    f = label_patch_fractions(mixed, Patch{40, 240, false});
    CHECK(f.read == doctest::Approx(r / total));
    CHECK(f.write == doctest::Approx(w / total));

    auto unl = testutil::random_stream(9, 30, 1 << 20, true);
    unl.commands[3].label = Label::Unlabeled;
    CHECK_THROWS(label_patch_fractions(testutil::whole_slice(unl), Patch{0, 30, false}));
  }

  TEST_CASE("ablation zeroes only its block") {
    const auto s = testutil::whole_slice(testutil::random_stream(12, 600, 1ull << 21));
    BackAverageState st = update_back_averages({}, s);
    const auto attrs = normalize_attributes(s, st);
    PatchConfig cfg;
    const Patch patch{0, 250, false};
    const auto full = embed_patch(s, patch, attrs, cfg);
    const auto cut = embed_patch(s, patch, attrs, cfg, PltAblation::parse("offset"));
    for (std::size_t f = 0; f < kEmbeddingDim; ++f) {
      const bool in_block = f >= L::kOffsetBegin && f < L::kLapseBegin;
      CHECK(cut.features[f] == (in_block ? 0.0 : full.features[f]));
    }
  }
}
