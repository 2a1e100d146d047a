#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "skillrec/neuralkit/tensor.hpp"

namespace skillrec {
class Rng;
}

namespace skillrec::nk {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int max_epochs = 10;
  int patience = 2;
  double dropout = 0.2;
  std::uint64_t seed = 1;

  /// Throws InvalidArgument when a field is out of range.
  void validate() const;
};

struct TrainReport {
  int epochs_run = 0;
  int best_epoch = -1;  // 0-based; -1 when no validation set was given
  double best_validation_loss = 0.0;
  std::vector<double> train_loss;       // mean per example, per epoch
  std::vector<double> validation_loss;  // per epoch
};

/// Accumulates gradients for the examples in `batch` into `grads` and
/// returns the summed loss over them.
using BatchLoss = std::function<double(std::span<const std::size_t> batch, Gradients& grads, Rng& rng)>;
/// Mean validation loss of the current parameters.
using ValidationLoss = std::function<double()>;

/// Mini-batch Adam over shuffled example indices. Gradients are averaged
/// over each batch. With a validation function the loop stops after
/// `patience` epochs without improvement and restores the best epoch's
/// parameters; without one it runs `max_epochs` epochs.
TrainReport fit(Parameters& params, std::size_t example_count, const BatchLoss& batch_loss,
                const ValidationLoss& validation_loss, const TrainConfig& config);

}  // namespace skillrec::nk
