#pragma once

#include <cstdint>

#include "skillrec/neuralkit/tensor.hpp"

namespace skillrec::nk {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias-corrected moments. Row-sparse tensors are updated lazily:
/// only rows touched by the current gradient have their moments advanced,
/// while the bias correction uses the global step count.
class Adam {
 public:
  Adam() = default;
  Adam(const Parameters& params, AdamConfig config);

  /// Throws Error naming the tensor if any gradient entry is non-finite;
  /// the parameters are left unchanged in that case.
  void step(Parameters& params, const Gradients& grads);

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  AdamConfig config_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  std::int64_t t_ = 0;
};

}  // namespace skillrec::nk
