#include <doctest.h>

#include "helpers.hpp"
#include "nvmeguard/pipeline.hpp"
#include "nvmeguard/synth.hpp"

using namespace nvmeguard;

TEST_SUITE("pipeline") {
  TEST_CASE("prepared streams and samples") {
    WorkloadSpec w;
    w.seed = 3;
    w.commands = 2500;
    w.interleave = 0.5;
    const auto st = generate_ransomware(w);
    const auto p = prepare_stream(st, desk_slice_budget());
    REQUIRE(p.slices.size() == 3);
    CHECK(p.ransomware);
    CHECK(p.slices.back().partial);

    const auto samples = clt_samples(p, desk_tokenizer());
    std::size_t commands = 0;
    for (const auto& s : samples) {
      CHECK(s.tokens.size() == 2 * s.labels.size());
      commands += s.labels.size();
    }
    CHECK(commands == 2500);

    const auto emb = embed_stream(p, desk_patch_config());
    REQUIRE(emb.size() == 3);
    CHECK(emb[0].size() == 100);
    const auto ps = plt_sample(emb[0]);
    CHECK(ps.features.rows() == 100);
    CHECK(ps.features.cols() == 181);
    CHECK(ps.targets.cols() == 2);
  }

  TEST_CASE("one prediction per slice") {
    std::vector<PreparedStream> streams;
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      WorkloadSpec w;
      w.seed = seed;
      w.commands = 1500;
      w.stream_id = "s" + std::to_string(seed);
      streams.push_back(prepare_stream(
          seed % 2 ? generate_benign(w) : generate_ransomware(w), desk_slice_budget()));
    }
    const nn::Transformer clt(desk_clt_model(), 1);
    const auto pc = predict_clt(clt, streams, desk_tokenizer());
    CHECK(pc.size() == 8);
    for (const auto& p : pc) CHECK((p.probability >= 0.0 && p.probability <= 1.0));
    const nn::Transformer plt(desk_plt_model(), 1);
    CHECK(predict_plt(plt, streams, desk_patch_config()).size() == 8);

    const auto set = rf_dataset(streams);
    CHECK(set.x.size() == 8);
    CHECK(set.x[0].size() == kRfFeatureCount);
    const auto rf = RandomForest::train(set.x, set.y, {});
    CHECK(predict_rf(rf, streams).size() == 8);
  }
}
