#include "nvmeguard/nn/tensor.hpp"

#include <stdexcept>

namespace nvmeguard::nn {

std::size_t ParameterSet::add(std::string name, Eigen::Index rows, Eigen::Index cols,
                              bool trainable) {
  if (find(name)) throw std::logic_error("duplicate tensor name " + name);
  tensors_.push_back({std::move(name), Matrix::Zero(rows, cols), trainable});
  return tensors_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  return std::nullopt;
}

std::int64_t ParameterSet::element_count() const {
  std::int64_t n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

Gradients ParameterSet::zero_gradients() const {
  Gradients g;
  g.reserve(tensors_.size());
  for (const auto& t : tensors_) g.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
  return g;
}

void accumulate(Gradients& into, const Gradients& from) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}

void scale(Gradients& g, double factor) {
  for (auto& m : g) m *= factor;
}

}  // namespace nvmeguard::nn
