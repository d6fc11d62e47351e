#include "nvmeguard/pipeline.hpp"

#include <stdexcept>

#include "nvmeguard/derived.hpp"
#include "nvmeguard/nn/loss.hpp"

namespace nvmeguard {

SliceBudget desk_slice_budget() {
  SliceBudget b;
  b.mode = SliceMode::ByCommand;
  b.commands = 1000;
  return b;
}

CltTokenizerConfig desk_tokenizer() { return {}; }

PatchConfig desk_patch_config() {
  PatchConfig c;
  c.window_commands = 20;
  c.stride_commands = 10;
  return c;
}

nn::TransformerConfig desk_clt_model() {
  auto c = nn::TransformerConfig::full_clt();
  c.embed_dim = 16;
  c.ff_dim = 32;
  c.heads = 2;
  c.layers = 2;
  c.dropout = 0.0;
  return c;
}

nn::TransformerConfig desk_plt_model() {
  auto c = nn::TransformerConfig::full_plt();
  c.embed_dim = 32;
  c.ff_dim = 64;
  c.heads = 2;
  c.layers = 2;
  c.dropout = 0.0;
  return c;
}

nn::TrainConfig desk_clt_training() {
  nn::TrainConfig c;
  c.learning_rate = 2e-3;
  c.epochs = 15;
  c.batch_size = 16;
  return c;
}

nn::TrainConfig desk_plt_training() {
  nn::TrainConfig c;
  c.learning_rate = 2e-3;
  c.epochs = 45;
  c.batch_size = 8;
  return c;
}

PreparedStream prepare_stream(const Stream& stream, const SliceBudget& budget) {
  PreparedStream p;
  p.stream_id = stream.stream_id;
  p.capacity = stream.disk_capacity;
  p.family = stream.family;
  const auto derived = annotate_stream(stream);
  p.slices = slice_stream(stream.stream_id, derived, budget);
  for (const auto& s : p.slices) p.ransomware = p.ransomware || s.has_ransomware();
  return p;
}

std::vector<nn::CltSample> clt_samples(const PreparedStream& stream,
                                       const CltTokenizerConfig& config) {
  std::vector<nn::CltSample> out;
  for (const auto& slice : stream.slices) {
    for (auto& f : tokenize_frames(slice, stream.capacity, config)) {
      out.push_back({std::move(f.tokens), std::move(f.labels)});
    }
  }
  return out;
}

std::vector<std::vector<PatchEmbedding>> embed_stream(const PreparedStream& stream,
                                                      const PatchConfig& config,
                                                      const PltAblation& ablation) {
  BackAverageState state;
  std::vector<std::vector<PatchEmbedding>> out;
  out.reserve(stream.slices.size());
  for (const auto& slice : stream.slices) out.push_back(embed_slice(slice, state, config, ablation));
  return out;
}

nn::PltSample plt_sample(std::span<const PatchEmbedding> patches) {
  if (patches.empty()) throw std::invalid_argument("no patches");
  nn::PltSample s;
  s.features.resize(static_cast<Eigen::Index>(patches.size()), kEmbeddingDim);
  s.targets.resize(static_cast<Eigen::Index>(patches.size()), 2);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < kEmbeddingDim; ++j) {
      s.features(r, static_cast<Eigen::Index>(j)) = patches[i].features[j];
    }
    s.targets(r, 0) = patches[i].label_read_frac;
    s.targets(r, 1) = patches[i].label_write_frac;
  }
  return s;
}

std::vector<nn::CltSample> clt_training_set(std::span<const PreparedStream> streams,
                                            const CltTokenizerConfig& config) {
  std::vector<nn::CltSample> out;
  for (const auto& s : streams) {
    for (auto& x : clt_samples(s, config)) out.push_back(std::move(x));
  }
  if (out.empty()) throw std::runtime_error("no CLT frames in the training traces");
  return out;
}

std::vector<nn::PltSample> plt_training_set(std::span<const PreparedStream> streams,
                                            const PatchConfig& config,
                                            const PltAblation& ablation) {
  std::vector<nn::PltSample> out;
  for (const auto& s : streams) {
    for (const auto& e : embed_stream(s, config, ablation)) out.push_back(plt_sample(e));
  }
  if (out.empty()) throw std::runtime_error("no PLT slices in the training traces");
  return out;
}

std::vector<double> clt_command_probabilities(const nn::Transformer& model, const Slice& slice,
                                              std::uint64_t capacity,
                                              const CltTokenizerConfig& config) {
  std::vector<double> probs;
  for (const auto& f : tokenize_frames(slice, capacity, config)) {
    const auto p = model.predict_clt(f.tokens);
    probs.insert(probs.end(), p.begin(), p.end());
  }
  return probs;
}

double score_slice_clt(const nn::Transformer& model, const Slice& slice, std::uint64_t capacity,
                       const CltTokenizerConfig& config) {
  return nn::pool_clt_slice(clt_command_probabilities(model, slice, capacity, config));
}

double score_slice_plt(const nn::Transformer& model, std::span<const PatchEmbedding> patches) {
  return nn::pool_plt_slice(model.predict_plt(plt_sample(patches).features));
}

std::vector<SlicePrediction> predict_clt(const nn::Transformer& model,
                                         std::span<const PreparedStream> streams,
                                         const CltTokenizerConfig& config) {
  std::vector<SlicePrediction> out;
  for (const auto& s : streams) {
    for (const auto& slice : s.slices) {
      out.push_back(describe_slice(slice, score_slice_clt(model, slice, s.capacity, config)));
    }
  }
  return out;
}

std::vector<SlicePrediction> predict_plt(const nn::Transformer& model,
                                         std::span<const PreparedStream> streams,
                                         const PatchConfig& config,
                                         const PltAblation& ablation) {
  std::vector<SlicePrediction> out;
  for (const auto& s : streams) {
    const auto embedded = embed_stream(s, config, ablation);
    for (std::size_t i = 0; i < s.slices.size(); ++i) {
      out.push_back(describe_slice(s.slices[i], score_slice_plt(model, embedded[i])));
    }
  }
  return out;
}

std::vector<SlicePrediction> predict_rf(const RandomForest& model,
                                        std::span<const PreparedStream> streams) {
  std::vector<SlicePrediction> out;
  for (const auto& s : streams) {
    for (const auto& slice : s.slices) {
      const auto f = rf_extract_features(slice);
      out.push_back(describe_slice(slice, model.predict(f)));
    }
  }
  return out;
}

std::vector<SlicePrediction> predict_deftpunk(const DeftPunk& model,
                                              std::span<const PreparedStream> streams) {
  std::vector<SlicePrediction> out;
  for (const auto& s : streams) {
    for (const auto& slice : s.slices) {
      const auto f = deftpunk_extract_features(slice, s.capacity);
      out.push_back(describe_slice(slice, model.predict(f)));
    }
  }
  return out;
}

TabularSet rf_dataset(std::span<const PreparedStream> streams) {
  TabularSet t;
  for (const auto& s : streams) {
    for (const auto& slice : s.slices) {
      const auto f = rf_extract_features(slice);
      t.x.emplace_back(f.begin(), f.end());
      t.y.push_back(slice.has_ransomware() ? 1 : 0);
    }
  }
  return t;
}

TabularSet deftpunk_dataset(std::span<const PreparedStream> streams) {
  TabularSet t;
  for (const auto& s : streams) {
    for (const auto& slice : s.slices) {
      t.x.push_back(deftpunk_extract_features(slice, s.capacity));
      t.y.push_back(slice.has_ransomware() ? 1 : 0);
    }
  }
  return t;
}

}  // namespace nvmeguard
