#pragma once

#include <span>

#include "nvmeguard/nn/tensor.hpp"
#include "nvmeguard/nn/transformer.hpp"

namespace nvmeguard::nn {

inline constexpr double kProbabilityClamp = 1e-7;

// Cross-entropy of one (possibly fractional) target; p is clamped to
// [kProbabilityClamp, 1 - kProbabilityClamp].
double cross_entropy(double p, double y);

// CLT: mean binary cross-entropy over per-command probabilities.
double clt_loss_from_probabilities(std::span<const double> probabilities,
                                   std::span<const double> labels);

// PLT: sum of the cross-entropy terms over every (read, write) target.
double plt_loss_from_probabilities(const Matrix& probabilities, const Matrix& targets);

// Slice probability from the per-command CLT outputs of all its frames.
double pool_clt_slice(std::span<const double> command_probabilities);

// Slice probability from the per-token PLT fractions: mean over tokens of
// min(read + write, 1).
double pool_plt_slice(const Matrix& fractions);

}  // namespace nvmeguard::nn
