#pragma once

#include "skillrec/neuralkit/tensor.hpp"

namespace skillrec::nk {

/// Numerically stable softmax (max subtracted).
Vec softmax(const Vec& logits);

/// log(1 + exp(x)) without overflow.
double softplus(double x);

/// One-versus-all logistic loss: sum_k -[y_k ln s(o_k) + (1 - y_k) ln(1 - s(o_k))]
/// with s the logistic sigmoid. Throws InvalidArgument on size mismatch or
/// non-binary targets. `grad` receives dL/dO.
double loss_ova(const Vec& logits, const Vec& targets, Vec* grad = nullptr);

/// Multi-class logistic loss -ln softmax(O)_k* where k* is the single
/// positive target. Throws InvalidArgument unless exactly one target is 1
/// and all others are 0.
double loss_multiclass(const Vec& logits, const Vec& targets, Vec* grad = nullptr);

/// Same loss given the positive index directly.
double loss_multiclass_index(const Vec& logits, Eigen::Index positive, Vec* grad = nullptr);

/// Masked binary cross-entropy over probabilities, clamped to
/// [1e-7, 1 - 1e-7] before the logarithm. Labels may be fractional.
/// Throws InvalidArgument on size mismatch or scores outside [0, 1].
double binary_cross_entropy(const Vec& scores, const Vec& labels, const Vec& mask);

inline constexpr double kProbClamp = 1e-7;

}  // namespace skillrec::nk
