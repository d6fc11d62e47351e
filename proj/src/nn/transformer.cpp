#include "nvmeguard/nn/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace nvmeguard::nn {
namespace {

constexpr double kLayerNormEps = 1e-5;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void xavier(Matrix& m, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : 0.0;
  return mask;
}

void softmax_rows(Matrix& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

}  // namespace

struct Transformer::LayerNormTape {
  Matrix xhat;
  Vector inv_std;
};

struct Transformer::BlockTape {
  Matrix x, q, k, v;
  std::vector<Matrix> probs;
  Matrix attn_mask;
  LayerNormTape ln1;
  Matrix h, u;
  Matrix ff_mask;
  LayerNormTape ln2;
};

struct Transformer::Tape {
  std::vector<BlockTape> blocks;
};

namespace {

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, Matrix* xhat_out,
                  Vector* inv_out) {
  const auto d = static_cast<double>(x.cols());
  Matrix xhat(x.rows(), x.cols());
  Vector inv(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / d;
    const double var = (x.row(r).array() - mean).square().sum() / d;
    inv(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mean) * inv(r);
  }
  Matrix y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
  if (xhat_out) *xhat_out = std::move(xhat);
  if (inv_out) *inv_out = std::move(inv);
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Vector& inv,
                           const Matrix& gamma, Matrix& dgamma, Matrix& dbeta) {
  dgamma.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbeta.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
  const auto d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double sum = dxhat.row(r).sum();
    const double dot = dxhat.row(r).dot(xhat.row(r));
    dx.row(r) = (inv(r) / d) * (d * dxhat.row(r).array() - sum - xhat.row(r).array() * dot);
  }
  return dx;
}

}  // namespace

TransformerConfig TransformerConfig::full_clt() {
  TransformerConfig c;
  c.head = HeadKind::Clt;
  c.vocab_size = 1024;
  c.embed_dim = 128;
  c.ff_dim = 128;
  c.heads = 4;
  c.layers = 3;
  c.context_tokens = 500;
  c.dropout = 0.1;
  return c;
}

TransformerConfig TransformerConfig::full_plt() {
  TransformerConfig c;
  c.head = HeadKind::Plt;
  c.input_dim = 181;
  c.embed_dim = 512;
  c.ff_dim = 2048;
  c.heads = 4;
  c.layers = 6;
  c.context_tokens = 100;
  c.dropout = 0.1;
  return c;
}

void TransformerConfig::validate() const {
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw std::invalid_argument("embed_dim must be a positive multiple of heads");
  }
  if (context_tokens == 0) throw std::invalid_argument("context_tokens must be >= 1");
  if (ff_dim == 0 || layers == 0) throw std::invalid_argument("ff_dim and layers must be >= 1");
  if (head == HeadKind::Clt && vocab_size == 0) throw std::invalid_argument("vocab_size is 0");
  if (head == HeadKind::Plt && input_dim == 0) throw std::invalid_argument("input_dim is 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout not in [0,1)");
}

std::string to_string(HeadKind kind) { return kind == HeadKind::Clt ? "clt" : "plt"; }

Matrix sinusoidal_positions(std::size_t positions, std::size_t dim) {
  Matrix pe(static_cast<Eigen::Index>(positions), static_cast<Eigen::Index>(dim));
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(p) * rate;
      pe(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) =
          i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Transformer::Transformer(const TransformerConfig& config) : config_(config) {
  config_.validate();
  build();
}

Transformer::Transformer(const TransformerConfig& config, std::uint64_t seed)
    : Transformer(config) {
  initialize(seed);
}

void Transformer::build() {
  const auto d = static_cast<Eigen::Index>(config_.embed_dim);
  const auto ff = static_cast<Eigen::Index>(config_.ff_dim);
  if (config_.head == HeadKind::Clt) {
    input_index_ = params_.add("token_embedding", config_.vocab_size, d);
  } else {
    input_index_ = params_.add("input_projection", config_.input_dim, d);
  }
  pos_index_ = params_.add("positional_encoding", config_.context_tokens, d, false);
  for (std::uint32_t l = 0; l < config_.layers; ++l) {
    const auto p = "layer" + std::to_string(l) + ".";
    LayerIndex idx{};
    idx.wq = params_.add(p + "attn.wq", d, d);
    idx.wk = params_.add(p + "attn.wk", d, d);
    idx.wv = params_.add(p + "attn.wv", d, d);
    idx.ff1 = params_.add(p + "ff1", d, ff);
    idx.ff2 = params_.add(p + "ff2", ff, d);
    idx.ln1_gamma = params_.add(p + "ln1.gamma", 1, d);
    idx.ln1_beta = params_.add(p + "ln1.beta", 1, d);
    idx.ln2_gamma = params_.add(p + "ln2.gamma", 1, d);
    idx.ln2_beta = params_.add(p + "ln2.beta", 1, d);
    layers_.push_back(idx);
  }
  if (config_.head == HeadKind::Clt) {
    head_w_ = params_.add("head.projection.w", d, 1);
    head_b_ = params_.add("head.projection.b", 1, 1);
    head_conv_ = params_.add("head.conv", 1, 2);
  } else {
    head_w_ = params_.add("head.w", d, 2);
    head_b_ = params_.add("head.b", 1, 2);
  }
}

void Transformer::initialize(std::uint64_t seed) {
  Rng rng(seed);
  if (config_.head == HeadKind::Clt) {
    std::normal_distribution<double> normal(0.0, 1.0);
    auto& e = params_.value(input_index_);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = normal(rng);
  } else {
    xavier(params_.value(input_index_), rng);
  }
  params_.value(pos_index_) = sinusoidal_positions(config_.context_tokens, config_.embed_dim);
  for (const auto& idx : layers_) {
    for (auto i : {idx.wq, idx.wk, idx.wv, idx.ff1, idx.ff2}) xavier(params_.value(i), rng);
    params_.value(idx.ln1_gamma).setOnes();
    params_.value(idx.ln2_gamma).setOnes();
  }
  xavier(params_.value(head_w_), rng);
  if (config_.head == HeadKind::Clt) xavier(params_.value(head_conv_), rng);
}

Matrix Transformer::embed_tokens(std::span<const std::uint32_t> tokens) const {
  if (config_.head != HeadKind::Clt) throw std::logic_error("token input requires a CLT model");
  if (tokens.empty()) throw std::invalid_argument("empty token sequence");
  if (tokens.size() > config_.context_tokens) {
    throw std::invalid_argument("token sequence longer than the context");
  }
  const auto& table = params_.value(input_index_);
  const auto& pos = params_.value(pos_index_);
  Matrix x(static_cast<Eigen::Index>(tokens.size()), table.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= config_.vocab_size) throw std::invalid_argument("token id out of vocabulary");
    const auto r = static_cast<Eigen::Index>(i);
    x.row(r) = table.row(tokens[i]) + pos.row(r);
  }
  return x;
}

Matrix Transformer::embed_features(const Matrix& features) const {
  if (config_.head != HeadKind::Plt) throw std::logic_error("feature input requires a PLT model");
  if (features.rows() == 0) throw std::invalid_argument("empty feature sequence");
  if (features.cols() != static_cast<Eigen::Index>(config_.input_dim)) {
    throw std::invalid_argument("feature length does not match input_dim");
  }
  if (features.rows() > static_cast<Eigen::Index>(config_.context_tokens)) {
    throw std::invalid_argument("feature sequence longer than the context");
  }
  Matrix x = features * params_.value(input_index_);
  x += params_.value(pos_index_).topRows(features.rows());
  return x;
}

Matrix Transformer::block_forward(const LayerIndex& idx, const Matrix& x, BlockTape* tape,
                                  Rng* dropout) const {
  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const auto dh = static_cast<Eigen::Index>(config_.embed_dim / config_.heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool drop = dropout != nullptr && config_.dropout > 0.0;

  Matrix q = x * params_.value(idx.wq);
  Matrix k = x * params_.value(idx.wk);
  Matrix v = x * params_.value(idx.wv);
  Matrix attn(x.rows(), x.cols());
  std::vector<Matrix> probs;
  if (tape) probs.reserve(static_cast<std::size_t>(heads));
  for (Eigen::Index h = 0; h < heads; ++h) {
    Matrix s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    softmax_rows(s);
    attn.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    if (tape) probs.push_back(std::move(s));
  }
  Matrix attn_mask;
  if (drop) {
    attn_mask = dropout_mask(attn.rows(), attn.cols(), config_.dropout, *dropout);
    attn.array() *= attn_mask.array();
  }

  Matrix xhat1;
  Vector inv1;
  Matrix h = layer_norm(x + attn, params_.value(idx.ln1_gamma), params_.value(idx.ln1_beta),
                        tape ? &xhat1 : nullptr, tape ? &inv1 : nullptr);
  Matrix u = h * params_.value(idx.ff1);
  Matrix f = u.cwiseMax(0.0) * params_.value(idx.ff2);
  Matrix ff_mask;
  if (drop) {
    ff_mask = dropout_mask(f.rows(), f.cols(), config_.dropout, *dropout);
    f.array() *= ff_mask.array();
  }
  Matrix xhat2;
  Vector inv2;
  Matrix y = layer_norm(h + f, params_.value(idx.ln2_gamma), params_.value(idx.ln2_beta),
                        tape ? &xhat2 : nullptr, tape ? &inv2 : nullptr);
  if (tape) {
    tape->x = x;
    tape->q = std::move(q);
    tape->k = std::move(k);
    tape->v = std::move(v);
    tape->probs = std::move(probs);
    tape->attn_mask = std::move(attn_mask);
    tape->ln1 = {std::move(xhat1), std::move(inv1)};
    tape->h = std::move(h);
    tape->u = std::move(u);
    tape->ff_mask = std::move(ff_mask);
    tape->ln2 = {std::move(xhat2), std::move(inv2)};
  }
  return y;
}

Matrix Transformer::block_backward(const LayerIndex& idx, const BlockTape& tape, const Matrix& dy,
                                   Gradients& grads) const {
  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const auto dh = static_cast<Eigen::Index>(config_.embed_dim / config_.heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Second residual + layer norm.
  const Matrix dr2 = layer_norm_backward(dy, tape.ln2.xhat, tape.ln2.inv_std,
                                         params_.value(idx.ln2_gamma), grads[idx.ln2_gamma],
                                         grads[idx.ln2_beta]);
  Matrix df = dr2;
  if (tape.ff_mask.size() != 0) df.array() *= tape.ff_mask.array();

  // Feed-forward.
  const Matrix z = tape.u.cwiseMax(0.0);
  grads[idx.ff2].noalias() += z.transpose() * df;
  Matrix du = df * params_.value(idx.ff2).transpose();
  du.array() *= (tape.u.array() > 0.0).cast<double>();
  grads[idx.ff1].noalias() += tape.h.transpose() * du;
  Matrix dh_total = dr2;
  dh_total.noalias() += du * params_.value(idx.ff1).transpose();

  // First residual + layer norm.
  const Matrix dr1 = layer_norm_backward(dh_total, tape.ln1.xhat, tape.ln1.inv_std,
                                         params_.value(idx.ln1_gamma), grads[idx.ln1_gamma],
                                         grads[idx.ln1_beta]);
  Matrix dattn = dr1;
  if (tape.attn_mask.size() != 0) dattn.array() *= tape.attn_mask.array();

  // Attention.
  Matrix dq(tape.q.rows(), tape.q.cols());
  Matrix dk(tape.k.rows(), tape.k.cols());
  Matrix dv(tape.v.rows(), tape.v.cols());
  for (Eigen::Index h = 0; h < heads; ++h) {
    const Matrix& p = tape.probs[static_cast<std::size_t>(h)];
    const auto d_out = dattn.middleCols(h * dh, dh);
    Matrix dp = d_out * tape.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = p.transpose() * d_out;
    const Vector row_dot = (dp.array() * p.array()).rowwise().sum();
    Matrix ds = p.array() * (dp.array().colwise() - row_dot.array());
    ds *= scale;
    dq.middleCols(h * dh, dh).noalias() = ds * tape.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * tape.q.middleCols(h * dh, dh);
  }
  grads[idx.wq].noalias() += tape.x.transpose() * dq;
  grads[idx.wk].noalias() += tape.x.transpose() * dk;
  grads[idx.wv].noalias() += tape.x.transpose() * dv;

  Matrix dx = dr1;
  dx.noalias() += dq * params_.value(idx.wq).transpose();
  dx.noalias() += dk * params_.value(idx.wk).transpose();
  dx.noalias() += dv * params_.value(idx.wv).transpose();
  return dx;
}

Matrix Transformer::run_encoder(Matrix x, Tape* tape, Rng* dropout) const {
  if (tape) tape->blocks.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    x = block_forward(layers_[l], x, tape ? &tape->blocks[l] : nullptr, dropout);
  }
  return x;
}

Matrix Transformer::encode_tokens(std::span<const std::uint32_t> tokens) const {
  return run_encoder(embed_tokens(tokens), nullptr, nullptr);
}

Matrix Transformer::encode_features(const Matrix& features) const {
  return run_encoder(embed_features(features), nullptr, nullptr);
}

std::vector<Matrix> Transformer::attention_maps(std::span<const std::uint32_t> tokens) const {
  Tape tape;
  run_encoder(embed_tokens(tokens), &tape, nullptr);
  std::vector<Matrix> maps;
  for (auto& b : tape.blocks) {
    for (auto& p : b.probs) maps.push_back(std::move(p));
  }
  return maps;
}

std::vector<Matrix> Transformer::attention_maps(const Matrix& features) const {
  Tape tape;
  run_encoder(embed_features(features), &tape, nullptr);
  std::vector<Matrix> maps;
  for (auto& b : tape.blocks) {
    for (auto& p : b.probs) maps.push_back(std::move(p));
  }
  return maps;
}

std::vector<double> Transformer::clt_head(const Matrix& encoded, Matrix* projected) const {
  if (encoded.rows() % 2 != 0) throw std::invalid_argument("CLT head needs an even token count");
  Matrix s = encoded * params_.value(head_w_);
  s.array() += params_.value(head_b_)(0, 0);
  const double k0 = params_.value(head_conv_)(0, 0);
  const double k1 = params_.value(head_conv_)(0, 1);
  std::vector<double> logits(static_cast<std::size_t>(s.rows() / 2));
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const auto r = static_cast<Eigen::Index>(2 * j);
    logits[j] = k0 * s(r, 0) + k1 * s(r + 1, 0);
  }
  if (projected) *projected = std::move(s);
  return logits;
}

Matrix Transformer::plt_head(const Matrix& encoded) const {
  Matrix logits = encoded * params_.value(head_w_);
  logits.rowwise() += params_.value(head_b_).row(0);
  return logits;
}

std::vector<double> Transformer::clt_logits(std::span<const std::uint32_t> tokens) const {
  if (tokens.size() % 2 != 0) throw std::invalid_argument("CLT frame needs an even token count");
  return clt_head(encode_tokens(tokens), nullptr);
}

std::vector<double> Transformer::predict_clt(std::span<const std::uint32_t> tokens) const {
  auto z = clt_logits(tokens);
  for (auto& v : z) v = sigmoid(v);
  return z;
}

Matrix Transformer::predict_plt(const Matrix& features) const {
  Matrix logits = plt_head(encode_features(features));
  return logits.unaryExpr([](double z) { return sigmoid(z); });
}

double Transformer::clt_backprop(std::span<const std::uint32_t> tokens,
                                 std::span<const std::uint8_t> labels, Gradients& grads,
                                 Rng* dropout) const {
  if (tokens.size() % 2 != 0) throw std::invalid_argument("CLT frame needs an even token count");
  if (labels.size() * 2 != tokens.size()) throw std::invalid_argument("label count mismatch");
  Tape tape;
  const Matrix encoded = run_encoder(embed_tokens(tokens), &tape, dropout);
  Matrix s;
  const auto logits = clt_head(encoded, &s);

  const double n = static_cast<double>(logits.size());
  const double k0 = params_.value(head_conv_)(0, 0);
  const double k1 = params_.value(head_conv_)(0, 1);
  double loss = 0.0;
  Matrix ds(s.rows(), 1);
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double y = labels[j] ? 1.0 : 0.0;
    loss += softplus(logits[j]) - y * logits[j];
    const double dz = (sigmoid(logits[j]) - y) / n;
    const auto r = static_cast<Eigen::Index>(2 * j);
    grads[head_conv_](0, 0) += dz * s(r, 0);
    grads[head_conv_](0, 1) += dz * s(r + 1, 0);
    ds(r, 0) = dz * k0;
    ds(r + 1, 0) = dz * k1;
  }
  grads[head_w_].noalias() += encoded.transpose() * ds;
  grads[head_b_](0, 0) += ds.sum();
  Matrix dx = ds * params_.value(head_w_).transpose();

  for (std::size_t l = layers_.size(); l-- > 0;) {
    dx = block_backward(layers_[l], tape.blocks[l], dx, grads);
  }
  auto& emb = grads[input_index_];
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    emb.row(tokens[i]) += dx.row(static_cast<Eigen::Index>(i));
  }
  return loss / n;
}

double Transformer::plt_backprop(const Matrix& features, const Matrix& targets, Gradients& grads,
                                 Rng* dropout) const {
  if (targets.rows() != features.rows() || targets.cols() != 2) {
    throw std::invalid_argument("PLT targets must be rows x 2");
  }
  Tape tape;
  const Matrix encoded = run_encoder(embed_features(features), &tape, dropout);
  const Matrix logits = plt_head(encoded);
  double loss = 0.0;
  Matrix dlogits(logits.rows(), 2);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double z = logits.data()[i];
    const double y = targets.data()[i];
    loss += softplus(z) - y * z;
    dlogits.data()[i] = sigmoid(z) - y;
  }
  grads[head_w_].noalias() += encoded.transpose() * dlogits;
  grads[head_b_].row(0) += dlogits.colwise().sum();
  Matrix dx = dlogits * params_.value(head_w_).transpose();
  for (std::size_t l = layers_.size(); l-- > 0;) {
    dx = block_backward(layers_[l], tape.blocks[l], dx, grads);
  }
  grads[input_index_].noalias() += features.transpose() * dx;
  return loss;
}

double Transformer::clt_loss(std::span<const std::uint32_t> tokens,
                             std::span<const std::uint8_t> labels) const {
  const auto logits = clt_logits(tokens);
  if (labels.size() != logits.size()) throw std::invalid_argument("label count mismatch");
  double loss = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    loss += softplus(logits[j]) - (labels[j] ? logits[j] : 0.0);
  }
  return loss / static_cast<double>(logits.size());
}

double Transformer::plt_loss(const Matrix& features, const Matrix& targets) const {
  const Matrix logits = plt_head(encode_features(features));
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    loss += softplus(logits.data()[i]) - targets.data()[i] * logits.data()[i];
  }
  return loss;
}

}  // namespace nvmeguard::nn
