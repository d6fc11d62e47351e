#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "nvmeguard/nn/tensor.hpp"
#include "nvmeguard/nn/transformer.hpp"

namespace nvmeguard::nn {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::uint32_t lr_step_epochs = 0;  // 0 disables the step scheduler
  double lr_gamma = 0.8;
  std::uint32_t epochs = 10;
  std::uint32_t batch_size = 64;
  std::uint64_t seed = 0;
  std::uint32_t threads = 1;
  bool dropout = true;  // apply the model's dropout rate while training

  static TrainConfig full_clt();  // Adam 1e-4, step 30 / gamma 0.8, batch 64, 300 epochs
  static TrainConfig full_plt();  // Adam 1e-4, batch 256, 400 epochs

  // Learning rate used during the given 0-based epoch.
  [[nodiscard]] double learning_rate_at(std::uint32_t epoch) const;
};

struct AdamState {
  std::uint64_t step = 0;
  Gradients m;
  Gradients v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam update of every trainable tensor. Initializes moment buffers on first use.
void adam_step(ParameterSet& params, AdamState& state, const Gradients& grads,
               double learning_rate);

struct Checkpoint {
  explicit Checkpoint(Transformer m) : model(std::move(m)) {}

  Transformer model;
  AdamState optimizer;
  std::uint32_t epoch = 0;  // completed epochs
  std::uint64_t seed = 0;
  std::vector<double> epoch_losses;  // not persisted
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: "NVGD", version, config, epoch, seed, tensors (name, rank, dims,
// raw f64), then Adam step/betas/epsilon and the m/v tensors when present.
std::vector<char> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::vector<char> bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct CltSample {
  std::vector<std::uint32_t> tokens;
  std::vector<std::uint8_t> labels;
};

struct PltSample {
  Matrix features;  // tokens x input_dim
  Matrix targets;   // tokens x 2
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(std::uint64_t step)
      : std::runtime_error("training diverged at step " + std::to_string(step)), step_(step) {}
  [[nodiscard]] std::uint64_t step() const { return step_; }

 private:
  std::uint64_t step_;
};

using EpochCallback = std::function<void(std::uint32_t epoch, double mean_loss)>;

// Trains from a fresh initialization seeded by config.seed. Deterministic for
// a given seed regardless of config.threads.
Checkpoint train_clt(const TransformerConfig& model_config, std::span<const CltSample> samples,
                     const TrainConfig& config, const EpochCallback& on_epoch = {});
Checkpoint train_plt(const TransformerConfig& model_config, std::span<const PltSample> samples,
                     const TrainConfig& config, const EpochCallback& on_epoch = {});

// Continues training an existing checkpoint for config.epochs more epochs.
void continue_clt(Checkpoint& checkpoint, std::span<const CltSample> samples,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});
void continue_plt(Checkpoint& checkpoint, std::span<const PltSample> samples,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

// Stops glibc from handing the large per-step activation buffers back to the
// kernel after every sample, which otherwise roughly doubles training time.
// Process-wide; call once from main. No-op on other C libraries.
void tune_allocator();

}  // namespace nvmeguard::nn
