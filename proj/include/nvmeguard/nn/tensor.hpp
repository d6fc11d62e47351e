#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nvmeguard::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct NamedTensor {
  std::string name;
  Matrix value;
  bool trainable = true;
};

// Gradient buffers, one per tensor of a ParameterSet, same shapes.
using Gradients = std::vector<Matrix>;

// Ordered, named collection of weight tensors. Order is insertion order and
// defines the checkpoint layout.
class ParameterSet {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols, bool trainable = true);

  [[nodiscard]] Matrix& value(std::size_t i) { return tensors_[i].value; }
  [[nodiscard]] const Matrix& value(std::size_t i) const { return tensors_[i].value; }
  [[nodiscard]] std::vector<NamedTensor>& tensors() { return tensors_; }
  [[nodiscard]] const std::vector<NamedTensor>& tensors() const { return tensors_; }
  [[nodiscard]] std::size_t size() const { return tensors_.size(); }

  [[nodiscard]] std::optional<std::size_t> find(const std::string& name) const;

  // Total number of scalar entries across all tensors.
  [[nodiscard]] std::int64_t element_count() const;

  [[nodiscard]] Gradients zero_gradients() const;

 private:
  std::vector<NamedTensor> tensors_;
};

void accumulate(Gradients& into, const Gradients& from);
void scale(Gradients& g, double factor);

}  // namespace nvmeguard::nn
