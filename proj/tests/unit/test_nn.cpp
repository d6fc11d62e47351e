#include <doctest.h>

#include <cmath>
#include <random>

#include "nvmeguard/nn/loss.hpp"
#include "nvmeguard/nn/training.hpp"
#include "nvmeguard/nn/transformer.hpp"

using namespace nvmeguard::nn;

namespace {

TransformerConfig small(HeadKind head, std::uint32_t context) {
  TransformerConfig c = head == HeadKind::Clt ? TransformerConfig::full_clt()
                                              : TransformerConfig::full_plt();
  c.embed_dim = 16;
  c.ff_dim = 24;
  c.heads = 2;
  c.layers = 2;
  c.context_tokens = context;
  c.dropout = 0.0;
  return c;
}

std::vector<std::uint32_t> random_tokens(std::size_t commands, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint32_t> t;
  for (std::size_t i = 0; i < commands; ++i) {
    t.push_back(static_cast<std::uint32_t>(rng() % 512));
    t.push_back(static_cast<std::uint32_t>(512 + rng() % 512));
  }
  return t;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Central differences along random directions, one tensor at a time.
template <typename LossFn>
void check_gradients(Transformer& model, const Gradients& grads, LossFn loss) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto& params = model.parameters();
  const double eps = 1e-5;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (!params.tensors()[t].trainable) continue;
    for (int trial = 0; trial < 5; ++trial) {
      Matrix dir(params.value(t).rows(), params.value(t).cols());
      for (Eigen::Index i = 0; i < dir.size(); ++i) dir.data()[i] = normal(rng);
      const Matrix saved = params.value(t);
      params.value(t) = saved + eps * dir;
      const double up = loss();
      params.value(t) = saved - eps * dir;
      const double down = loss();
      params.value(t) = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = (grads[t].array() * dir.array()).sum();
      const double rel = std::abs(numeric - analytic) /
                         std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      CAPTURE(params.tensors()[t].name);
      CHECK(rel < 1e-4);
    }
  }
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("CLT gradients match finite differences") {
    Transformer model(small(HeadKind::Clt, 40), 7);
    const auto tokens = random_tokens(20, 1);
    std::vector<std::uint8_t> labels;
    for (int i = 0; i < 20; ++i) labels.push_back(i % 3 == 0);
    auto grads = model.parameters().zero_gradients();
    const double loss = model.clt_backprop(tokens, labels, grads);
    CHECK(loss == doctest::Approx(model.clt_loss(tokens, labels)).epsilon(1e-12));
    check_gradients(model, grads, [&] { return model.clt_loss(tokens, labels); });
  }

  TEST_CASE("PLT gradients match finite differences") {
    Transformer model(small(HeadKind::Plt, 12), 9);
    const Matrix x = random_matrix(12, 181, 3);
    const Matrix y = random_matrix(12, 2, 4, 0.0, 0.5);
    auto grads = model.parameters().zero_gradients();
    model.plt_backprop(x, y, grads);
    check_gradients(model, grads, [&] { return model.plt_loss(x, y); });
  }

  TEST_CASE("attention rows sum to one") {
    Transformer clt(small(HeadKind::Clt, 40), 1);
    for (const auto& a : clt.attention_maps(random_tokens(20, 5))) {
      CHECK(a.rows() == 40);
      for (Eigen::Index r = 0; r < a.rows(); ++r) CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-6);
    }
    Transformer plt(small(HeadKind::Plt, 30), 1);
    for (const auto& a : plt.attention_maps(random_matrix(30, 181, 8))) {
      for (Eigen::Index r = 0; r < a.rows(); ++r) CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-6);
    }
  }

  TEST_CASE("shapes and permutation equivariance") {
    Transformer model(small(HeadKind::Plt, 10), 3);
    const Matrix x = random_matrix(10, 181, 11);
    const auto enc = model.encode_features(x);
    CHECK(enc.rows() == 10);
    CHECK(enc.cols() == 16);

    const auto pos = *model.parameters().find("positional_encoding");
    model.parameters().value(pos).setZero();
    std::vector<int> perm = {3, 1, 4, 0, 9, 2, 6, 5, 8, 7};
    Matrix px(10, 181);
    for (int i = 0; i < 10; ++i) px.row(i) = x.row(perm[i]);
    const auto a = model.encode_features(x);
    const auto b = model.encode_features(px);
    for (int i = 0; i < 10; ++i) CHECK((b.row(i) - a.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("CLT frame outputs") {
    auto cfg = small(HeadKind::Clt, 500);
    Transformer model(cfg, 5);
    const auto tokens = random_tokens(250, 2);
    const auto p = model.predict_clt(tokens);
    CHECK(p.size() == 250);
    CHECK(model.predict_clt(tokens) == p);
    for (double v : p) CHECK((v > 0.0 && v < 1.0));
    const std::vector<std::uint32_t> odd = {1, 513, 2};
    CHECK_THROWS((void)model.predict_clt(odd));
  }

  TEST_CASE("PLT outputs and the zero network") {
    Transformer model(small(HeadKind::Plt, 100), 5);
    const auto out = model.predict_plt(random_matrix(100, 181, 1));
    CHECK(out.rows() == 100);
    CHECK(out.cols() == 2);
    CHECK(out.minCoeff() > 0.0);
    CHECK(out.maxCoeff() < 1.0);

    Transformer zero(small(HeadKind::Plt, 100));
    const auto z = zero.predict_plt(random_matrix(100, 181, 2));
    CHECK((z.array() - 0.5).abs().maxCoeff() < 1e-12);
  }

  TEST_CASE("loss values") {
    CHECK(cross_entropy(1.0, 1.0) < 1e-6);
    CHECK(cross_entropy(0.0, 0.0) < 1e-6);
    const std::vector<double> half(10, 0.5);
    const std::vector<double> labels = {0, 1, 1, 0, 1, 0, 0, 1, 1, 0};
    CHECK(clt_loss_from_probabilities(half, labels) == doctest::Approx(std::log(2.0)));

    const double h = -(0.3 * std::log(0.3) + 0.7 * std::log(0.7));
    CHECK(cross_entropy(0.3, 0.3) == doctest::Approx(h));
    double best_p = 0.0, best = 1e9;
    for (int i = 1; i < 1000; ++i) {
      const double p = i / 1000.0;
      if (cross_entropy(p, 0.3) < best) {
        best = cross_entropy(p, 0.3);
        best_p = p;
      }
    }
    CHECK(best_p == doctest::Approx(0.3));
  }

  TEST_CASE("slice pooling") {
    CHECK(pool_clt_slice(std::vector<double>(8, 0.0)) == 0.0);
    CHECK(pool_clt_slice(std::vector<double>{1, 0, 1, 0}) == doctest::Approx(0.5));
    Matrix m(2, 2);
    m << 0.7, 0.6, 0.0, 0.0;
    CHECK(pool_plt_slice(m) == doctest::Approx(0.5));
    Matrix one(1, 2);
    one << 0.7, 0.6;
    CHECK(pool_plt_slice(one) == doctest::Approx(1.0));
  }

  TEST_CASE("learning-rate schedule") {
    const auto c = TrainConfig::full_clt();
    CHECK(c.learning_rate_at(0) == doctest::Approx(1e-4));
    CHECK(c.learning_rate_at(29) == doctest::Approx(1e-4));
    CHECK(c.learning_rate_at(60) == doctest::Approx(1e-4 * 0.8 * 0.8));
    CHECK(TrainConfig::full_plt().learning_rate_at(399) == doctest::Approx(1e-4));
  }

  TEST_CASE("CLT overfits one batch") {
    const auto cfg = small(HeadKind::Clt, 40);
    CltSample s;
    s.tokens = random_tokens(20, 3);
    for (int i = 0; i < 20; ++i) s.labels.push_back(i < 10);
    TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.epochs = 100;
    tc.batch_size = 1;
    tc.seed = 4;
    std::vector<double> losses;
    train_clt(cfg, std::span(&s, 1), tc, [&](std::uint32_t, double l) { losses.push_back(l); });
    REQUIRE(losses.size() == 100);
    CHECK(losses[49] < losses[0]);
    CHECK(losses.back() < 0.1 * losses.front());
    double best = losses[0];
    for (double l : losses) {
      CHECK(l <= 1.05 * best);
      best = std::min(best, l);
    }
  }

  TEST_CASE("PLT overfits synthetic fractions") {
    auto cfg = small(HeadKind::Plt, 100);
    cfg.embed_dim = 32;
    cfg.ff_dim = 64;
    PltSample s;
    s.features = random_matrix(100, 181, 5, 0.0, 1.0);
    s.targets.resize(100, 2);
    for (int i = 0; i < 100; ++i) {
      s.targets(i, 0) = 0.8 * s.features(i, 0);
      s.targets(i, 1) = 0.5 * (s.features(i, 1) + s.features(i, 2)) * 0.6;
    }
    TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.epochs = 300;
    tc.batch_size = 1;
    const auto ck = train_plt(cfg, std::span(&s, 1), tc);
    const auto out = ck.model.predict_plt(s.features);
    CHECK((out - s.targets).cwiseAbs().mean() < 0.05);
  }

  TEST_CASE("training is deterministic and checkpoints round-trip") {
    const auto cfg = small(HeadKind::Clt, 40);
    std::vector<CltSample> data;
    for (int k = 0; k < 6; ++k) {
      CltSample s;
      s.tokens = random_tokens(20, 10 + k);
      for (int i = 0; i < 20; ++i) s.labels.push_back((i + k) % 2);
      data.push_back(s);
    }
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 99;
    const auto a = serialize_checkpoint(train_clt(cfg, data, tc));
    const auto b = serialize_checkpoint(train_clt(cfg, data, tc));
    CHECK(a == b);
    tc.threads = 3;
    CHECK(serialize_checkpoint(train_clt(cfg, data, tc)) == a);

    auto ck = deserialize_checkpoint(a);
    CHECK(serialize_checkpoint(ck) == a);
    CHECK(ck.epoch == 3);
    const auto before = train_clt(cfg, data, tc).model.predict_clt(data[0].tokens);
    CHECK(ck.model.predict_clt(data[0].tokens) == before);

    auto bad = a;
    bad[0] = 'X';
    CHECK_THROWS(deserialize_checkpoint(bad));
    bad = a;
    bad.resize(bad.size() / 2);
    CHECK_THROWS(deserialize_checkpoint(bad));
  }

  TEST_CASE("resuming equals training straight through") {
    const auto cfg = small(HeadKind::Plt, 8);
    std::vector<PltSample> data(3);
    for (int k = 0; k < 3; ++k) {
      data[k].features = random_matrix(8, 181, 20 + k);
      data[k].targets = random_matrix(8, 2, 30 + k, 0.0, 0.5);
    }
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.batch_size = 2;
    tc.epochs = 4;
    const auto straight = serialize_checkpoint(train_plt(cfg, data, tc));
    tc.epochs = 2;
    auto half = train_plt(cfg, data, tc);
    auto restored = deserialize_checkpoint(serialize_checkpoint(half));
    continue_plt(restored, data, tc);
    CHECK(serialize_checkpoint(restored) == straight);
  }
}
