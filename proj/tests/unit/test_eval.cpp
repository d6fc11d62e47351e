#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "nvmeguard/eval.hpp"

using namespace nvmeguard;

namespace {

SlicePrediction pred(std::string id, std::size_t idx, double p, bool ransom,
                     std::uint64_t benign_bytes, std::uint64_t ransom_bytes = 0,
                     std::uint64_t ransom_writes = 0) {
  SlicePrediction s;
  s.stream_id = std::move(id);
  s.slice_index = idx;
  s.probability = p;
  s.ransomware = ransom;
  s.benign_bytes = benign_bytes;
  s.ransomware_bytes = ransom_bytes;
  s.ransomware_write_bytes = ransom_writes;
  return s;
}

std::vector<SlicePrediction> random_predictions(std::uint64_t seed, std::size_t streams,
                                                std::size_t slices) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SlicePrediction> out;
  for (std::size_t s = 0; s < streams; ++s) {
    const bool ransom_stream = s % 2 == 1;
    const std::string id = (ransom_stream ? "r" : "b") + std::to_string(s);
    for (std::size_t i = 0; i < slices; ++i) {
      const bool r = ransom_stream && i >= 2;
      const std::uint64_t rb = r ? 1'000'000 * (1 + rng() % 50) : 0;
      // probabilities on a coarse grid so ties occur
      const double p = std::round(u(rng) * 20.0) / 20.0;
      out.push_back(pred(id, i, r ? std::min(1.0, p + 0.3) : p, r, 2'000'000'000 + rng() % 1000,
                         rb, rb / 2));
    }
  }
  return out;
}

// Smallest candidate threshold whose benign alarms fit the budget.
double exhaustive_threshold(const std::vector<SlicePrediction>& v, double gb_per_alarm) {
  double benign_bytes = 0;
  std::set<double> candidates = {0.0};
  for (const auto& p : v) {
    benign_bytes += static_cast<double>(p.benign_bytes);
    candidates.insert(p.probability);
  }
  const auto allowed = static_cast<std::size_t>(std::floor(benign_bytes / 1e9 / gb_per_alarm));
  for (double t : candidates) {
    std::size_t alarms = 0;
    for (const auto& p : v) alarms += !p.ransomware && p.probability > t;
    if (alarms <= allowed) return t;
  }
  return 1.0;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("confusion metrics") {
    std::vector<SlicePrediction> perfect = {pred("a", 0, 0.9, true, 0), pred("a", 1, 0.1, false, 1),
                                            pred("b", 0, 0.8, true, 0), pred("b", 1, 0.0, false, 1)};
    auto m = confusion_metrics(perfect, 0.5);
    CHECK(*m.mdr == 0.0);
    CHECK(*m.far == 0.0);
    CHECK(*m.f1 == 1.0);
    for (auto& p : perfect) p.probability = 1.0;
    m = confusion_metrics(perfect, 0.5);
    CHECK(*m.far == 1.0);
    CHECK(*m.mdr == 0.0);
    CHECK(*m.f1 == doctest::Approx(2.0 / 3.0));

    // 20 random slices against a direct count
    const auto r = random_predictions(1, 4, 5);
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& p : r) {
      const bool f = p.probability > 0.45;
      tp += p.ransomware && f;
      fn += p.ransomware && !f;
      fp += !p.ransomware && f;
      tn += !p.ransomware && !f;
    }
    m = confusion_metrics(r, 0.45);
    CHECK(m.counts.tp == tp);
    CHECK(m.counts.fp == fp);
    CHECK(m.counts.tn == tn);
    CHECK(m.counts.fn == fn);
    CHECK(*m.mdr == doctest::Approx(double(fn) / (tp + fn)));
    CHECK(*m.far == doctest::Approx(double(fp) / (fp + tn)));
    const double prec = double(tp) / (tp + fp), rec = double(tp) / (tp + fn);
    CHECK(*m.f1 == doctest::Approx(2 * prec * rec / (prec + rec)));
  }

  TEST_CASE("threshold monotonicity") {
    const auto r = random_predictions(2, 10, 10);
    double last_mdr = -1, last_far = 2;
    for (int k = 0; k <= 20; ++k) {
      const auto m = confusion_metrics(r, k / 20.0);
      CHECK(*m.mdr >= last_mdr);
      CHECK(*m.far <= last_far);
      last_mdr = *m.mdr;
      last_far = *m.far;
    }
  }

  TEST_CASE("MBD") {
    const std::vector<SlicePrediction> s = {pred("r", 0, 0.1, true, 0, 10'000'000, 10'000'000),
                                            pred("r", 1, 0.9, true, 0, 20'000'000, 20'000'000),
                                            pred("r", 2, 0.9, true, 0, 30'000'000, 30'000'000)};
    CHECK(compute_mbd(s, 0.5).megabytes == doctest::Approx(30.0));
    CHECK(compute_mbd(s, 0.05).megabytes == doctest::Approx(10.0));
    const auto missed = compute_mbd(s, 0.95);
    CHECK(missed.missed);
    CHECK(missed.megabytes == doctest::Approx(60.0));

    const std::vector<SlicePrediction> early = {pred("r", 0, 0.9, false, 5),
                                                pred("r", 1, 0.1, true, 0, 4, 4)};
    CHECK(compute_mbd(early, 0.5).megabytes == 0.0);
    const std::vector<SlicePrediction> benign = {pred("b", 0, 0.9, false, 5)};
    CHECK_THROWS(compute_mbd(benign, 0.5));

    // detecting more slices never raises MBD
    auto r = random_predictions(3, 2, 30);
    std::vector<SlicePrediction> stream(r.begin() + 30, r.end());
    const double before = compute_mbd(stream, 0.5).megabytes;
    for (auto& p : stream) {
      if (p.slice_index % 5 == 0) p.probability = 1.0;
    }
    CHECK(compute_mbd(stream, 0.5).megabytes <= before);
  }

  TEST_CASE("quantile") {
    CHECK(mbd_quantile({7.0}) == 7.0);
    std::vector<double> v;
    for (int i = 1; i <= 100; ++i) v.push_back(i);
    CHECK(mbd_quantile(v) == doctest::Approx(75.25));
    CHECK(mbd_quantile({3, 3, 3}, 0.3) == 3.0);
    CHECK_THROWS(mbd_quantile({}));
  }

  TEST_CASE("volume metrics") {
    const std::vector<SlicePrediction> s = {pred("a", 0, 0.9, true, 100, 300, 0),
                                            pred("a", 1, 0.2, true, 50, 700, 0),
                                            pred("b", 0, 0.8, false, 400),
                                            pred("b", 1, 0.1, false, 450)};
    auto v = volume_metrics(s, 0.5);
    CHECK(*v.p_miss == doctest::Approx(700.0 / 1000.0));
    CHECK(*v.p_err == doctest::Approx(400.0 / 1000.0));
    v = volume_metrics(s, -1.0);
    CHECK(*v.p_miss == 0.0);
    // benign bytes inside ransomware slices never count as errors
    CHECK(*v.p_err == doctest::Approx(850.0 / 1000.0));
    std::vector<SlicePrediction> perfect = s;
    perfect[1].probability = 0.7;
    perfect[2].probability = 0.0;
    v = volume_metrics(perfect, 0.5);
    CHECK(*v.p_miss == 0.0);
    CHECK(*v.p_err == 0.0);
  }

  TEST_CASE("calibration") {
    std::vector<SlicePrediction> v;
    for (int i = 0; i < 100; ++i) v.push_back(pred("b", i, i / 100.0, false, 1'000'000'000));
    const auto c = calibrate_threshold(v);
    CHECK(c.allowed_false_alarms == 2);
    CHECK(c.false_alarms <= 2);
    CHECK(c.threshold == doctest::Approx(0.97));

    for (auto& p : v) p.probability = 0.0;
    CHECK(calibrate_threshold(v).threshold == 0.0);

    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      auto r = random_predictions(seed, 6, 8);
      const double gb = 1.0 + static_cast<double>(seed % 40);
      REQUIRE(calibrate_threshold(r, gb).threshold == exhaustive_threshold(r, gb));
    }

    // trailing partial slices are left out unless asked for
    std::vector<SlicePrediction> w = {pred("b", 0, 0.2, false, 1'000'000'000),
                                      pred("b", 1, 0.9, false, 10)};
    w[1].partial = true;
    CHECK(calibrate_threshold(w, 50).threshold == 0.2);
    CHECK(calibrate_threshold(w, 50, true).threshold == 0.9);
  }

  TEST_CASE("cross validation") {
    const auto r = random_predictions(7, 30, 6);
    CrossValidationConfig cfg;
    cfg.repeats = 20;
    cfg.seed = 5;
    const auto a = cross_validate(r, cfg);
    cfg.threads = 4;
    const auto b = cross_validate(r, cfg);
    CHECK(metrics_json(a) == metrics_json(b));
    REQUIRE(a.folds.size() == 20);

    // fold spread recomputed from the stored folds
    double mean = 0;
    for (const auto& f : a.folds) mean += *f.confusion.mdr;
    mean /= 20;
    double ss = 0;
    for (const auto& f : a.folds) ss += std::pow(*f.confusion.mdr - mean, 2);
    CHECK(*a.mdr.mean == doctest::Approx(mean));
    CHECK(a.mdr.sigma_folds == doctest::Approx(std::sqrt(ss / 19)));
    double wilson = 0;
    for (const auto& f : a.folds) {
      const auto& c = f.confusion.counts;
      wilson += wilson_half_width(c.fn, c.fn + c.tp);
    }
    CHECK(a.mdr.sigma == doctest::Approx(std::hypot(a.mdr.sigma_folds, wilson / 20)));

    // each fold: one third of each stream type validates, the rest is test
    for (const auto& f : a.folds) {
      CHECK(f.validation_streams.size() == 10);
      CHECK(f.test_streams.size() == 20);
      std::size_t ransom = 0;
      for (const auto& id : f.validation_streams) ransom += id[0] == 'r';
      CHECK(ransom == 5);
    }

    cfg.repeats = 1;
    const auto one = cross_validate(r, cfg);
    const auto manual = evaluate_split(r, one.folds[0].validation_streams,
                                       one.folds[0].test_streams, cfg.quantile, cfg.gb_per_alarm);
    CHECK(*one.f1.mean == *manual.confusion.f1);
    CHECK(*one.mbd_q.mean == *manual.mbd_q);
  }

  TEST_CASE("Wilson half-width") {
    CHECK(wilson_half_width(0, 0) == 0.0);
    // p = 0.5, n = 100, z = 1
    CHECK(wilson_half_width(50, 100) ==
          doctest::Approx(1.0 / 1.01 * std::sqrt(0.0025 + 1.0 / 40000.0)));
  }

  TEST_CASE("positional accuracy") {
    std::vector<FramePrediction> frames = {{{0.9, 0.2, 0.7}, {1, 0, 0}}, {{0.1, 0.8}, {0, 0}}};
    const auto pa = positional_accuracy(frames);
    REQUIRE(pa.accuracy.size() == 3);
    CHECK(pa.accuracy[0] == 1.0);
    CHECK(pa.accuracy[1] == 0.5);
    CHECK(pa.accuracy[2] == 0.0);
    CHECK(pa.counts[2] == 1);

    std::vector<FramePrediction> constant(200);
    for (std::size_t i = 0; i < constant.size(); ++i) {
      constant[i].probabilities.assign(10, 0.9);
      constant[i].labels.assign(10, i % 2);
    }
    for (double a : positional_accuracy(constant).accuracy) CHECK(a == doctest::Approx(0.5));
  }

  TEST_CASE("group split") {
    auto streams_for = [](std::size_t families) {
      std::vector<StreamInfo> s;
      for (std::size_t f = 0; f < families; ++f) {
        for (int k = 0; k < 6; ++k) {
          s.push_back({"r" + std::to_string(f) + "-" + std::to_string(k), true,
                       "family-" + std::to_string(f)});
        }
      }
      for (int k = 0; k < 9; ++k) s.push_back({"b" + std::to_string(k), false, std::nullopt});
      return s;
    };
    const auto three = group_split(streams_for(3));
    REQUIRE(three.size() == 3);
    std::multiset<std::string> held;
    for (const auto& g : three) {
      REQUIRE(g.ood_families.size() == 1);
      held.insert(g.ood_families[0]);
      for (const auto& id : g.train) {
        CHECK(id.rfind("r" + g.ood_families[0].substr(7) + "-", 0) != 0);
      }
    }
    CHECK(held.size() == 3);
    CHECK(std::set<std::string>(held.begin(), held.end()).size() == 3);
    for (const auto& g : group_split(streams_for(9))) CHECK(g.ood_families.size() == 3);
  }

  TEST_CASE("prediction CSV round trip") {
    auto r = random_predictions(9, 4, 3);
    r[2].partial = true;
    const auto dir = testutil::temp_dir("eval");
    {
      std::ofstream out(dir / "p.csv");
      write_predictions_csv(r, out);
    }
    const auto back = read_predictions_csv(dir / "p.csv");
    REQUIRE(back.size() == r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      CHECK(back[i].stream_id == r[i].stream_id);
      CHECK(back[i].probability == r[i].probability);
      CHECK(back[i].partial == r[i].partial);
      CHECK(back[i].ransomware_write_bytes == r[i].ransomware_write_bytes);
    }
  }
}
