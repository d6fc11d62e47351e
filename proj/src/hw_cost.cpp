#include "nvmeguard/hw_cost.hpp"

#include <numeric>
#include <stdexcept>

namespace nvmeguard {
namespace {

std::uint64_t total(const std::vector<CostTerm>& terms) {
  return std::accumulate(terms.begin(), terms.end(), std::uint64_t{0},
                         [](std::uint64_t acc, const CostTerm& t) { return acc + t.count; });
}

}  // namespace

std::vector<CostTerm> parameter_terms(const nn::TransformerConfig& c) {
  const std::uint64_t d = c.embed_dim;
  const std::uint64_t ff = c.ff_dim;
  const std::uint64_t layers = c.layers;
  std::vector<CostTerm> terms;
  if (c.head == nn::HeadKind::Clt) {
    terms.push_back({"embedding table", std::uint64_t{c.vocab_size} * d});
  } else {
    terms.push_back({"input projection", std::uint64_t{c.input_dim} * d});
  }
  terms.push_back({"positional encoding", std::uint64_t{c.context_tokens} * d});
  terms.push_back({"attention Q/K/V", layers * 3 * d * d});
  terms.push_back({"feed-forward", layers * 2 * d * ff});
  terms.push_back({"layer-norm vectors", layers * 4 * d});
  if (c.head == nn::HeadKind::Clt) {
    terms.push_back({"projection head", d + 1});
    terms.push_back({"convolution kernel", 2});
  } else {
    terms.push_back({"projection head", 2 * d + 2});
  }
  return terms;
}

std::uint64_t count_parameters(const nn::TransformerConfig& config) {
  return total(parameter_terms(config));
}

std::vector<CostTerm> multiplication_terms(const nn::TransformerConfig& c,
                                           std::uint64_t n) {
  if (n == 0 || n > c.context_tokens) throw std::invalid_argument("input length out of range");
  const std::uint64_t d = c.embed_dim;
  const std::uint64_t ff = c.ff_dim;
  const std::uint64_t layers = c.layers;
  std::vector<CostTerm> terms;
  if (c.head == nn::HeadKind::Plt) {
    terms.push_back({"input projection", std::uint64_t{c.input_dim} * d * n});
  }
  terms.push_back({"Q/K/V projections", layers * 3 * n * d * d});
  terms.push_back({"QK^T and XV", layers * 2 * n * n * d});
  terms.push_back({"feed-forward", layers * 2 * n * d * ff});
  terms.push_back({"head projection", n * d * (c.head == nn::HeadKind::Plt ? 2 : 1)});
  return terms;
}

std::uint64_t count_multiplications(const nn::TransformerConfig& config,
                                    std::uint64_t input_length) {
  return total(multiplication_terms(config, input_length));
}

CostReport estimate_deployment(std::uint64_t multiplications, std::uint64_t parameters,
                               double bytes_per_pass, double commands_per_pass,
                               const DeploymentParams& p) {
  if (multiplications == 0 || p.multipliers == 0 || !(p.clock_hz > 0.0)) {
    throw std::invalid_argument("deployment inputs must be positive");
  }
  CostReport r;
  r.parameters = parameters;
  r.multiplications = multiplications;
  r.latency_s = static_cast<double>(multiplications) /
                (static_cast<double>(p.multipliers) * p.clock_hz);
  r.throughput_bytes_per_s = bytes_per_pass / r.latency_s;
  r.iops = commands_per_pass / r.latency_s;
  r.gates = p.multipliers * p.gates_per_multiplier;
  r.dram_bytes = p.bytes_per_parameter * parameters;
  return r;
}

CostReport model_cost(const nn::TransformerConfig& config, const DeploymentParams& params,
                      std::optional<std::uint64_t> input_length) {
  const auto n = input_length.value_or(config.context_tokens);
  if (n == 0 || n > config.context_tokens) {
    throw std::invalid_argument("input length must lie in [1, context]");
  }
  const auto mults = count_multiplications(config, n);
  const auto parameters = count_parameters(config);
  // A shorter input covers a proportional share of the nominal pass.
  const double share = static_cast<double>(n) / static_cast<double>(config.context_tokens);
  if (config.head == nn::HeadKind::Clt) {
    const double commands = static_cast<double>(n) / 2.0;
    return estimate_deployment(mults, parameters, commands * 256.0 * 1024.0, commands, params);
  }
  return estimate_deployment(mults, parameters, share * static_cast<double>(512ull << 20),
                             share * 16500.0, params);
}

}  // namespace nvmeguard
