#include "skillrec/neuralkit/trainer.hpp"

#include <limits>
#include <numeric>
#include <optional>

#include "skillrec/error.hpp"
#include "skillrec/neuralkit/optimizer.hpp"
#include "skillrec/rng.hpp"

namespace skillrec::nk {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be > 0");
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (max_epochs < 1) throw InvalidArgument("max epochs must be >= 1");
  if (patience < 1) throw InvalidArgument("patience must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("dropout must be in [0, 1)");
}

TrainReport fit(Parameters& params, std::size_t example_count, const BatchLoss& batch_loss,
                const ValidationLoss& validation_loss, const TrainConfig& config) {
  config.validate();
  if (example_count == 0) throw InvalidArgument("fit: empty training set");
  TrainReport report;
  Adam adam(params, {config.learning_rate});
  Gradients grads(params);
  Rng rng(config.seed);
  std::vector<std::size_t> order(example_count);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::optional<Parameters> best;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      grads.zero();
      total += batch_loss(std::span<const std::size_t>(order.data() + start, len), grads, rng);
      grads.scale(1.0 / static_cast<double>(len));
      adam.step(params, grads);
    }
    report.train_loss.push_back(total / static_cast<double>(example_count));
    report.epochs_run = epoch + 1;
    if (!validation_loss) continue;
    const double v = validation_loss();
    report.validation_loss.push_back(v);
    if (v < best_loss) {
      best_loss = v;
      best = params;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  if (best) {
    params = std::move(*best);
    report.best_validation_loss = best_loss;
  }
  if (!params.all_finite()) throw Error("fit: parameters became non-finite");
  return report;
}

}  // namespace skillrec::nk
