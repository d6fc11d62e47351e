#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nvmeguard/baselines.hpp"
#include "nvmeguard/clt_tokenizer.hpp"
#include "nvmeguard/eval.hpp"
#include "nvmeguard/nn/training.hpp"
#include "nvmeguard/plt_embedder.hpp"
#include "nvmeguard/slicer.hpp"

// Glue between the data modules and the models: per-stream annotation and
// slicing, sample construction and slice scoring.
namespace nvmeguard {

// Desk-scale settings: 1000-command slices, 250-command frames, 20-command
// patches with stride 10 (100 per slice) and small encoders that train in
// minutes on one core.
SliceBudget desk_slice_budget();
CltTokenizerConfig desk_tokenizer();
PatchConfig desk_patch_config();
nn::TransformerConfig desk_clt_model();
nn::TransformerConfig desk_plt_model();
nn::TrainConfig desk_clt_training();
nn::TrainConfig desk_plt_training();

struct PreparedStream {
  std::string stream_id;
  std::uint64_t capacity = 0;
  std::optional<std::string> family;
  bool ransomware = false;
  std::vector<Slice> slices;
};

PreparedStream prepare_stream(const Stream& stream, const SliceBudget& budget);

std::vector<nn::CltSample> clt_samples(const PreparedStream& stream,
                                       const CltTokenizerConfig& config);

// Patch embeddings of every slice, carrying the back-average state across the
// stream's slices in order.
std::vector<std::vector<PatchEmbedding>> embed_stream(const PreparedStream& stream,
                                                      const PatchConfig& config,
                                                      const PltAblation& ablation = {});

nn::PltSample plt_sample(std::span<const PatchEmbedding> patches);

// All frames (or slices) of the given streams; throws when there are none.
std::vector<nn::CltSample> clt_training_set(std::span<const PreparedStream> streams,
                                            const CltTokenizerConfig& config);
std::vector<nn::PltSample> plt_training_set(std::span<const PreparedStream> streams,
                                            const PatchConfig& config,
                                            const PltAblation& ablation = {});

// Per-command probabilities of all frames of a slice.
std::vector<double> clt_command_probabilities(const nn::Transformer& model, const Slice& slice,
                                              std::uint64_t capacity,
                                              const CltTokenizerConfig& config);

double score_slice_clt(const nn::Transformer& model, const Slice& slice, std::uint64_t capacity,
                       const CltTokenizerConfig& config);
double score_slice_plt(const nn::Transformer& model, std::span<const PatchEmbedding> patches);

// Slice predictions for whole streams.
std::vector<SlicePrediction> predict_clt(const nn::Transformer& model,
                                         std::span<const PreparedStream> streams,
                                         const CltTokenizerConfig& config);
std::vector<SlicePrediction> predict_plt(const nn::Transformer& model,
                                         std::span<const PreparedStream> streams,
                                         const PatchConfig& config,
                                         const PltAblation& ablation = {});
std::vector<SlicePrediction> predict_rf(const RandomForest& model,
                                        std::span<const PreparedStream> streams);
std::vector<SlicePrediction> predict_deftpunk(const DeftPunk& model,
                                              std::span<const PreparedStream> streams);

struct TabularSet {
  FeatureMatrix x;
  std::vector<std::uint8_t> y;
};

TabularSet rf_dataset(std::span<const PreparedStream> streams);
TabularSet deftpunk_dataset(std::span<const PreparedStream> streams);

}  // namespace nvmeguard
