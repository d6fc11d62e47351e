#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nvmeguard/nn/tensor.hpp"

namespace nvmeguard::nn {

enum class HeadKind : std::uint8_t { Clt = 0, Plt = 1 };

struct TransformerConfig {
  HeadKind head = HeadKind::Clt;
  std::uint32_t vocab_size = 1024;  // CLT only
  std::uint32_t input_dim = 181;    // PLT only
  std::uint32_t embed_dim = 128;
  std::uint32_t ff_dim = 128;
  std::uint32_t heads = 4;
  std::uint32_t layers = 3;
  std::uint32_t context_tokens = 500;
  double dropout = 0.1;

  static TransformerConfig full_clt();
  static TransformerConfig full_plt();

  // Throws std::invalid_argument on inconsistent values.
  void validate() const;

  bool operator==(const TransformerConfig&) const = default;
};

std::string to_string(HeadKind kind);

using Rng = std::mt19937_64;

// Post-norm transformer encoder with a CLT (per-command probability) or PLT
// (per-token read/write fraction) head. Weights live in one ParameterSet so
// optimizers and checkpoints treat them uniformly.
//
// Per encoder layer: multi-head self-attention (no output projection), two
// bias-free feed-forward matrices with ReLU, two layer norms.
// CLT head: per-token scalar projection (weights + bias), width-2 stride-2
// convolution over the projected sequence, then the ransomware side of a
// two-way softmax over (0, z), i.e. sigmoid(z).
// PLT head: linear map to two logits per token (weights + bias), sigmoid.
class Transformer {
 public:
  Transformer(const TransformerConfig& config, std::uint64_t seed);
  // Shape-only construction, weights zeroed (used when loading checkpoints).
  explicit Transformer(const TransformerConfig& config);

  [[nodiscard]] const TransformerConfig& config() const { return config_; }
  [[nodiscard]] ParameterSet& parameters() { return params_; }
  [[nodiscard]] const ParameterSet& parameters() const { return params_; }

  // Encoder output, one embed_dim row per input position.
  [[nodiscard]] Matrix encode_tokens(std::span<const std::uint32_t> tokens) const;
  [[nodiscard]] Matrix encode_features(const Matrix& features) const;

  // Attention probabilities of every layer and head (layer-major), for inspection.
  [[nodiscard]] std::vector<Matrix> attention_maps(std::span<const std::uint32_t> tokens) const;
  [[nodiscard]] std::vector<Matrix> attention_maps(const Matrix& features) const;

  // Ransomware probability per command: tokens.size()/2 values. Throws on an
  // odd token count.
  [[nodiscard]] std::vector<double> predict_clt(std::span<const std::uint32_t> tokens) const;
  // Ransomware logit per command (pre-sigmoid).
  [[nodiscard]] std::vector<double> clt_logits(std::span<const std::uint32_t> tokens) const;

  // (read, write) fraction per token, rows = features.rows().
  [[nodiscard]] Matrix predict_plt(const Matrix& features) const;

  // Forward + backward for one sample. Gradients are added to `grads` (which
  // must come from parameters().zero_gradients()); returns the sample loss.
  // `dropout` enables dropout when non-null.
  double clt_backprop(std::span<const std::uint32_t> tokens, std::span<const std::uint8_t> labels,
                      Gradients& grads, Rng* dropout = nullptr) const;
  double plt_backprop(const Matrix& features, const Matrix& targets, Gradients& grads,
                      Rng* dropout = nullptr) const;

  // Loss only, same objective as the backprop functions (no dropout).
  [[nodiscard]] double clt_loss(std::span<const std::uint32_t> tokens,
                                std::span<const std::uint8_t> labels) const;
  [[nodiscard]] double plt_loss(const Matrix& features, const Matrix& targets) const;

 private:
  struct LayerIndex {
    std::size_t wq, wk, wv, ff1, ff2, ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  };
  struct LayerNormTape;
  struct BlockTape;
  struct Tape;

  void build();
  void initialize(std::uint64_t seed);

  Matrix embed_tokens(std::span<const std::uint32_t> tokens) const;
  Matrix embed_features(const Matrix& features) const;
  Matrix run_encoder(Matrix x, Tape* tape, Rng* dropout) const;
  Matrix block_forward(const LayerIndex& idx, const Matrix& x, BlockTape* tape, Rng* dropout) const;
  Matrix block_backward(const LayerIndex& idx, const BlockTape& tape, const Matrix& dy,
                        Gradients& grads) const;
  std::vector<double> clt_head(const Matrix& encoded, Matrix* projected) const;
  Matrix plt_head(const Matrix& encoded) const;

  TransformerConfig config_;
  ParameterSet params_;
  std::size_t input_index_ = 0;  // token embedding or input projection
  std::size_t pos_index_ = 0;
  std::vector<LayerIndex> layers_;
  std::size_t head_w_ = 0;
  std::size_t head_b_ = 0;
  std::size_t head_conv_ = 0;  // CLT only
};

// Fixed sinusoidal positional table, rows = positions.
Matrix sinusoidal_positions(std::size_t positions, std::size_t dim);

}  // namespace nvmeguard::nn
