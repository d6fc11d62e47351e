#include "nvmeguard/nn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "nvmeguard/binary_io.hpp"
#include "nvmeguard/seed.hpp"

namespace nvmeguard::nn {
namespace {

// Fixed number of gradient partial sums per batch; the reduction order does
// not depend on the number of worker threads.
constexpr std::size_t kGradientChunks = 8;

template <typename Sample, typename Backprop>
void run_training(Checkpoint& ckpt, std::span<const Sample> samples, const TrainConfig& config,
                  const EpochCallback& on_epoch, Backprop backprop) {
  if (samples.empty()) throw std::invalid_argument("empty training set");
  if (config.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  auto& params = ckpt.model.parameters();
  const bool use_dropout = config.dropout && ckpt.model.config().dropout > 0.0;
  const std::size_t threads = std::max<std::size_t>(1, config.threads);

  std::vector<std::size_t> order(samples.size());
  for (std::uint32_t e = 0; e < config.epochs; ++e) {
    const std::uint32_t epoch = ckpt.epoch;
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(ckpt.seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = config.learning_rate_at(epoch);

    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      const std::size_t batch = b1 - b0;
      const std::size_t chunks = std::min(kGradientChunks, batch);

      std::vector<Gradients> partial(chunks);
      std::vector<double> partial_loss(chunks, 0.0);
      auto work = [&](std::size_t c) {
        partial[c] = params.zero_gradients();
        const std::size_t lo = b0 + batch * c / chunks;
        const std::size_t hi = b0 + batch * (c + 1) / chunks;
        for (std::size_t i = lo; i < hi; ++i) {
          Rng drop_rng(derive_seed(derive_seed(ckpt.seed, epoch), i));
          partial_loss[c] +=
              backprop(samples[order[i]], partial[c], use_dropout ? &drop_rng : nullptr);
        }
      };
      if (threads == 1 || chunks == 1) {
        for (std::size_t c = 0; c < chunks; ++c) work(c);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(threads, chunks); ++t) {
          pool.emplace_back([&, t] {
            for (std::size_t c = t; c < chunks; c += threads) work(c);
          });
        }
        for (auto& th : pool) th.join();
      }

      Gradients grads = std::move(partial[0]);
      double batch_loss = partial_loss[0];
      for (std::size_t c = 1; c < chunks; ++c) {
        accumulate(grads, partial[c]);
        batch_loss += partial_loss[c];
      }
      if (!std::isfinite(batch_loss)) throw TrainingDiverged(ckpt.optimizer.step);
      scale(grads, 1.0 / static_cast<double>(batch));
      adam_step(params, ckpt.optimizer, grads, lr);
      epoch_loss += batch_loss;
    }
    epoch_loss /= static_cast<double>(samples.size());
    ckpt.epoch_losses.push_back(epoch_loss);
    ++ckpt.epoch;
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
}

void write_tensor(BinaryWriter& w, const std::string& name, const Matrix& m) {
  w.str(name);
  w.u(std::uint32_t{2});
  w.u(static_cast<std::uint64_t>(m.rows()));
  w.u(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
}

Matrix read_tensor(BinaryReader& r, const std::string& expected_name) {
  const auto name = r.str();
  if (name != expected_name) {
    throw std::runtime_error("checkpoint tensor '" + name + "', expected '" + expected_name + "'");
  }
  const auto rank = r.u<std::uint32_t>();
  if (rank != 2) throw std::runtime_error("unsupported tensor rank in checkpoint");
  const auto rows = static_cast<Eigen::Index>(r.u<std::uint64_t>());
  const auto cols = static_cast<Eigen::Index>(r.u<std::uint64_t>());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
  return m;
}

}  // namespace

TrainConfig TrainConfig::full_clt() {
  TrainConfig c;
  c.learning_rate = 1e-4;
  c.lr_step_epochs = 30;
  c.lr_gamma = 0.8;
  c.epochs = 300;
  c.batch_size = 64;
  return c;
}

TrainConfig TrainConfig::full_plt() {
  TrainConfig c;
  c.learning_rate = 1e-4;
  c.lr_step_epochs = 0;
  c.epochs = 400;
  c.batch_size = 256;
  return c;
}

double TrainConfig::learning_rate_at(std::uint32_t epoch) const {
  if (lr_step_epochs == 0) return learning_rate;
  return learning_rate * std::pow(lr_gamma, static_cast<double>(epoch / lr_step_epochs));
}

void adam_step(ParameterSet& params, AdamState& state, const Gradients& grads,
               double learning_rate) {
  if (state.m.empty()) {
    state.m = params.zero_gradients();
    state.v = params.zero_gradients();
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto& tensors = params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i].trainable) continue;
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i].cwiseAbs2();
    tensors[i].value.array() -= learning_rate * (state.m[i].array() / c1) /
                                ((state.v[i].array() / c2).sqrt() + state.epsilon);
  }
}

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt) {
  BinaryWriter w;
  w.bytes("NVGD");
  w.u(kCheckpointVersion);
  const auto& c = ckpt.model.config();
  w.u(static_cast<std::uint32_t>(c.head));
  w.u(c.vocab_size);
  w.u(c.input_dim);
  w.u(c.embed_dim);
  w.u(c.ff_dim);
  w.u(c.heads);
  w.u(c.layers);
  w.u(c.context_tokens);
  w.f64(c.dropout);
  w.u(ckpt.epoch);
  w.u(ckpt.seed);

  const auto& tensors = ckpt.model.parameters().tensors();
  w.u(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) write_tensor(w, t.name, t.value);

  const auto& opt = ckpt.optimizer;
  w.u(opt.step);
  w.f64(opt.beta1);
  w.f64(opt.beta2);
  w.f64(opt.epsilon);
  w.u(static_cast<std::uint8_t>(opt.m.empty() ? 0 : 1));
  if (!opt.m.empty()) {
    for (std::size_t i = 0; i < tensors.size(); ++i) write_tensor(w, "m." + tensors[i].name, opt.m[i]);
    for (std::size_t i = 0; i < tensors.size(); ++i) write_tensor(w, "v." + tensors[i].name, opt.v[i]);
  }
  return w.buffer();
}

Checkpoint deserialize_checkpoint(std::vector<char> bytes) {
  BinaryReader r(std::move(bytes));
  if (r.bytes(4) != "NVGD") throw std::runtime_error("not a checkpoint (bad magic)");
  const auto version = r.u<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  TransformerConfig c;
  c.head = static_cast<HeadKind>(r.u<std::uint32_t>());
  c.vocab_size = r.u<std::uint32_t>();
  c.input_dim = r.u<std::uint32_t>();
  c.embed_dim = r.u<std::uint32_t>();
  c.ff_dim = r.u<std::uint32_t>();
  c.heads = r.u<std::uint32_t>();
  c.layers = r.u<std::uint32_t>();
  c.context_tokens = r.u<std::uint32_t>();
  c.dropout = r.f64();

  Checkpoint ckpt{Transformer(c)};
  ckpt.epoch = r.u<std::uint32_t>();
  ckpt.seed = r.u<std::uint64_t>();

  auto& tensors = ckpt.model.parameters().tensors();
  if (r.u<std::uint32_t>() != tensors.size()) {
    throw std::runtime_error("checkpoint tensor count does not match its config");
  }
  for (auto& t : tensors) {
    Matrix m = read_tensor(r, t.name);
    if (m.rows() != t.value.rows() || m.cols() != t.value.cols()) {
      throw std::runtime_error("checkpoint tensor shape mismatch for " + t.name);
    }
    t.value = std::move(m);
  }

  auto& opt = ckpt.optimizer;
  opt.step = r.u<std::uint64_t>();
  opt.beta1 = r.f64();
  opt.beta2 = r.f64();
  opt.epsilon = r.f64();
  if (r.u<std::uint8_t>() != 0) {
    for (const auto& t : tensors) opt.m.push_back(read_tensor(r, "m." + t.name));
    for (const auto& t : tensors) opt.v.push_back(read_tensor(r, "v." + t.name));
  }
  if (!r.at_end()) throw std::runtime_error("trailing bytes in checkpoint");
  return ckpt;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  BinaryWriter w;
  const auto bytes = serialize_checkpoint(checkpoint);
  w.bytes(std::string_view(bytes.data(), bytes.size()));
  w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("cannot open " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(probe)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(std::move(data));
}

void continue_clt(Checkpoint& ckpt, std::span<const CltSample> samples, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  const Transformer& model = ckpt.model;
  run_training<CltSample>(ckpt, samples, config, on_epoch,
                          [&model](const CltSample& s, Gradients& g, Rng* rng) {
                            return model.clt_backprop(s.tokens, s.labels, g, rng);
                          });
}

void continue_plt(Checkpoint& ckpt, std::span<const PltSample> samples, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  const Transformer& model = ckpt.model;
  run_training<PltSample>(ckpt, samples, config, on_epoch,
                          [&model](const PltSample& s, Gradients& g, Rng* rng) {
                            return model.plt_backprop(s.features, s.targets, g, rng);
                          });
}

Checkpoint train_clt(const TransformerConfig& model_config, std::span<const CltSample> samples,
                     const TrainConfig& config, const EpochCallback& on_epoch) {
  if (model_config.head != HeadKind::Clt) throw std::invalid_argument("expected a CLT config");
  Checkpoint ckpt{Transformer(model_config, derive_seed(config.seed, 0xC17))};
  ckpt.seed = config.seed;
  continue_clt(ckpt, samples, config, on_epoch);
  return ckpt;
}

Checkpoint train_plt(const TransformerConfig& model_config, std::span<const PltSample> samples,
                     const TrainConfig& config, const EpochCallback& on_epoch) {
  if (model_config.head != HeadKind::Plt) throw std::invalid_argument("expected a PLT config");
  Checkpoint ckpt{Transformer(model_config, derive_seed(config.seed, 0x917))};
  ckpt.seed = config.seed;
  continue_plt(ckpt, samples, config, on_epoch);
  return ckpt;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace nvmeguard::nn
