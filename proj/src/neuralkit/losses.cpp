#include "skillrec/neuralkit/losses.hpp"

#include <algorithm>
#include <cmath>

#include "skillrec/error.hpp"
#include "skillrec/neuralkit/layers.hpp"

namespace skillrec::nk {

Vec softmax(const Vec& logits) {
  if (logits.size() == 0) return logits;
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double loss_ova(const Vec& logits, const Vec& targets, Vec* grad) {
  if (logits.size() != targets.size()) throw InvalidArgument("loss_ova: size mismatch");
  double loss = 0.0;
  if (grad) grad->resize(logits.size());
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    const double y = targets[k];
    if (y != 0.0 && y != 1.0) throw InvalidArgument("loss_ova: targets must be binary");
    const double o = logits[k];
    loss += softplus(o) - y * o;
    if (grad) (*grad)[k] = sigmoid(o) - y;
  }
  return loss;
}

double loss_multiclass_index(const Vec& logits, Eigen::Index positive, Vec* grad) {
  if (positive < 0 || positive >= logits.size())
    throw InvalidArgument("loss_multiclass: positive index out of range");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  if (grad) {
    *grad = (logits.array() - lse).exp();
    (*grad)[positive] -= 1.0;
  }
  return lse - logits[positive];
}

double loss_multiclass(const Vec& logits, const Vec& targets, Vec* grad) {
  if (logits.size() != targets.size()) throw InvalidArgument("loss_multiclass: size mismatch");
  Eigen::Index positive = -1;
  for (Eigen::Index k = 0; k < targets.size(); ++k) {
    if (targets[k] == 1.0) {
      if (positive >= 0) throw InvalidArgument("loss_multiclass: more than one positive target");
      positive = k;
    } else if (targets[k] != 0.0) {
      throw InvalidArgument("loss_multiclass: targets must be binary");
    }
  }
  if (positive < 0) throw InvalidArgument("loss_multiclass: no positive target");
  return loss_multiclass_index(logits, positive, grad);
}

double binary_cross_entropy(const Vec& scores, const Vec& labels, const Vec& mask) {
  if (scores.size() != labels.size() || scores.size() != mask.size())
    throw InvalidArgument("binary_cross_entropy: size mismatch");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    if (!(s >= 0.0 && s <= 1.0)) throw InvalidArgument("binary_cross_entropy: score outside [0, 1]");
    if (mask[i] == 0.0) continue;
    const double p = std::clamp(s, kProbClamp, 1.0 - kProbClamp);
    const double y = labels[i];
    loss += -y * std::log(p) - (1.0 - y) * std::log(1.0 - p);
  }
  return loss;
}

}  // namespace skillrec::nk
