#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nvmeguard/nn/transformer.hpp"

namespace nvmeguard {

// One named term of a parameter or multiplication count.
struct CostTerm {
  std::string name;
  std::uint64_t count = 0;
};

// Itemized parameter count: input embedding, positional encoding, per-layer
// Q/K/V, two feed-forward matrices, four d-long vectors (layer-norm gain and
// bias), then the head. Matches the tensors nn::Transformer instantiates.
std::vector<CostTerm> parameter_terms(const nn::TransformerConfig& config);
std::uint64_t count_parameters(const nn::TransformerConfig& config);

// Itemized multiplications of one forward pass over `input_length` tokens:
// input projection (PLT only), Q/K/V projections, QK^T and PV products,
// feed-forward products and the head projection.
std::vector<CostTerm> multiplication_terms(const nn::TransformerConfig& config,
                                           std::uint64_t input_length);
std::uint64_t count_multiplications(const nn::TransformerConfig& config,
                                    std::uint64_t input_length);

struct DeploymentParams {
  std::uint64_t multipliers = 256;
  double clock_hz = 300e6;
  std::uint64_t gates_per_multiplier = 2000;  // half-precision multiplier
  std::uint64_t bytes_per_parameter = 2;      // half-precision storage
};

struct CostReport {
  std::uint64_t parameters = 0;
  std::uint64_t multiplications = 0;
  std::uint64_t dram_bytes = 0;
  double latency_s = 0.0;
  double throughput_bytes_per_s = 0.0;
  double iops = 0.0;
  std::uint64_t gates = 0;
};

CostReport estimate_deployment(std::uint64_t multiplications, std::uint64_t parameters,
                               double bytes_per_pass, double commands_per_pass,
                               const DeploymentParams& params = {});

// Full report for a model: CLT passes cover 250 commands of 256 KiB, PLT
// passes cover one 0.5 GiB slice of 16500 commands. A shorter input_length
// covers a proportional part of that traffic.
CostReport model_cost(const nn::TransformerConfig& config, const DeploymentParams& params = {},
                      std::optional<std::uint64_t> input_length = std::nullopt);

}  // namespace nvmeguard
