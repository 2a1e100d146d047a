#include "skillrec/neuralkit/optimizer.hpp"

#include <cmath>

#include "skillrec/error.hpp"

namespace skillrec::nk {

Adam::Adam(const Parameters& params, AdamConfig config) : config_(config) {
  if (!(config.learning_rate > 0.0)) throw InvalidArgument("learning rate must be > 0");
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& t : params.tensors()) {
    m_.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
    v_.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
  }
}

void Adam::step(Parameters& params, const Gradients& grads) {
  if (grads.size() != params.size() || m_.size() != params.size())
    throw InvalidArgument("Adam::step: gradient set does not match parameters");
  for (TensorId i = 0; i < params.size(); ++i) {
    const Mat& g = grads[i];
    if (g.rows() != params.value(i).rows() || g.cols() != params.value(i).cols())
      throw InvalidArgument("Adam::step: gradient shape mismatch for tensor '" + params[i].name + "'");
    bool finite = true;
    if (grads.row_sparse(i)) {
      for (auto r : grads.touched_rows(i)) finite = finite && g.row(r).allFinite();
    } else {
      finite = g.allFinite();
    }
    if (!finite) throw Error("non-finite gradient in tensor '" + params[i].name + "'");
  }

  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  const double eps = config_.epsilon;

  auto update = [&](auto&& w, auto&& m, auto&& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };

  for (TensorId i = 0; i < params.size(); ++i) {
    Mat& w = params.value(i);
    if (grads.row_sparse(i)) {
      for (auto r : grads.touched_rows(i))
        update(w.row(r), m_[i].row(r), v_[i].row(r), grads[i].row(r));
    } else {
      update(w, m_[i], v_[i], grads[i]);
    }
  }
}

}  // namespace skillrec::nk
