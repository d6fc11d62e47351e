#include "nvmeguard/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nvmeguard::nn {

double cross_entropy(double p, double y) {
  const double q = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

double clt_loss_from_probabilities(std::span<const double> probabilities,
                                   std::span<const double> labels) {
  if (probabilities.size() != labels.size()) throw std::invalid_argument("shape mismatch");
  if (probabilities.empty()) throw std::invalid_argument("empty predictions");
  double sum = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) {
      throw std::invalid_argument("CLT labels must be 0 or 1");
    }
    sum += cross_entropy(probabilities[i], labels[i]);
  }
  return sum / static_cast<double>(probabilities.size());
}

double plt_loss_from_probabilities(const Matrix& probabilities, const Matrix& targets) {
  if (probabilities.rows() != targets.rows() || probabilities.cols() != targets.cols()) {
    throw std::invalid_argument("shape mismatch");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < probabilities.size(); ++i) {
    const double y = targets.data()[i];
    if (y < 0.0 || y > 1.0) throw std::invalid_argument("PLT targets must lie in [0,1]");
    sum += cross_entropy(probabilities.data()[i], y);
  }
  return sum;
}

double pool_clt_slice(std::span<const double> command_probabilities) {
  if (command_probabilities.empty()) throw std::invalid_argument("no CLT outputs to pool");
  double sum = 0.0;
  for (double p : command_probabilities) sum += p;
  return sum / static_cast<double>(command_probabilities.size());
}

double pool_plt_slice(const Matrix& fractions) {
  if (fractions.rows() == 0 || fractions.cols() != 2) {
    throw std::invalid_argument("PLT outputs must be a non-empty rows x 2 matrix");
  }
  double sum = 0.0;
  for (Eigen::Index r = 0; r < fractions.rows(); ++r) {
    sum += std::min(fractions(r, 0) + fractions(r, 1), 1.0);
  }
  return sum / static_cast<double>(fractions.rows());
}

}  // namespace nvmeguard::nn
