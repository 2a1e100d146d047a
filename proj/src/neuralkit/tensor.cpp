#include "skillrec/neuralkit/tensor.hpp"

#include <cmath>

#include "skillrec/error.hpp"
#include "skillrec/rng.hpp"

namespace skillrec::nk {

TensorId Parameters::add(std::string name, Mat init, bool row_sparse) {
  if (by_name_.count(name)) throw InvalidArgument("duplicate tensor name '" + name + "'");
  const TensorId id = tensors_.size();
  by_name_.emplace(name, id);
  tensors_.push_back({std::move(name), std::move(init), row_sparse});
  return id;
}

const Tensor* Parameters::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : &tensors_[it->second];
}

TensorId Parameters::id_of(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw InvalidArgument("no tensor named '" + name + "'");
  return it->second;
}

std::size_t Parameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

bool Parameters::all_finite() const {
  for (const auto& t : tensors_)
    if (!t.value.allFinite()) return false;
  return true;
}

void Parameters::set_zero() {
  for (auto& t : tensors_) t.value.setZero();
}

Gradients::Gradients(const Parameters& params) {
  grads_.reserve(params.size());
  touched_flag_.resize(params.size());
  touched_.resize(params.size());
  for (TensorId i = 0; i < params.size(); ++i) {
    const auto& t = params[i];
    grads_.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
    if (t.row_sparse) touched_flag_[i].assign(static_cast<std::size_t>(t.value.rows()), 0);
  }
}

void Gradients::zero() {
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (touched_flag_[i].empty()) {
      grads_[i].setZero();
      continue;
    }
    for (auto r : touched_[i]) {
      grads_[i].row(r).setZero();
      touched_flag_[i][static_cast<std::size_t>(r)] = 0;
    }
    touched_[i].clear();
  }
}

void Gradients::scale(double factor) {
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    if (touched_flag_[i].empty()) {
      grads_[i] *= factor;
    } else {
      for (auto r : touched_[i]) grads_[i].row(r) *= factor;
    }
  }
}

Mat glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
  return m;
}

Mat normal_fill(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
  return m;
}

}  // namespace skillrec::nk
