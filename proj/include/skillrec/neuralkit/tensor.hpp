#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace skillrec {
class Rng;
}

namespace skillrec::nk {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

using TensorId = std::size_t;

/// A named parameter tensor. Row-sparse tensors are lookup tables whose
/// gradients and optimizer updates touch only the rows a batch used.
struct Tensor {
  std::string name;
  Mat value;
  bool row_sparse = false;
};

class Parameters {
 public:
  TensorId add(std::string name, Mat init, bool row_sparse = false);

  Tensor& operator[](TensorId id) { return tensors_[id]; }
  const Tensor& operator[](TensorId id) const { return tensors_[id]; }
  Mat& value(TensorId id) { return tensors_[id].value; }
  const Mat& value(TensorId id) const { return tensors_[id].value; }

  const Tensor* find(const std::string& name) const;
  TensorId id_of(const std::string& name) const;
  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  const std::vector<Tensor>& tensors() const { return tensors_; }

  bool all_finite() const;
  void set_zero();

 private:
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, TensorId> by_name_;
};

/// Gradient buffers shaped like a Parameters set. Dense tensors are zeroed in
/// full; row-sparse tensors track which rows were written since the last zero().
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const Parameters& params);

  Mat& operator[](TensorId id) { return grads_[id]; }
  const Mat& operator[](TensorId id) const { return grads_[id]; }
  std::size_t size() const { return grads_.size(); }

  /// Returns the gradient row and marks it touched.
  auto row(TensorId id, Eigen::Index r) {
    auto& flags = touched_flag_[id];
    if (!flags.empty() && !flags[static_cast<std::size_t>(r)]) {
      flags[static_cast<std::size_t>(r)] = 1;
      touched_[id].push_back(r);
    }
    return grads_[id].row(r);
  }

  bool row_sparse(TensorId id) const { return !touched_flag_[id].empty(); }
  const std::vector<Eigen::Index>& touched_rows(TensorId id) const { return touched_[id]; }

  void zero();
  void scale(double factor);

 private:
  std::vector<Mat> grads_;
  std::vector<std::vector<char>> touched_flag_;
  std::vector<std::vector<Eigen::Index>> touched_;
};

/// Glorot-uniform fill with a = sqrt(6 / (fan_in + fan_out)).
Mat glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng);
Mat normal_fill(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

}  // namespace skillrec::nk
