#pragma once

#include <json.hpp>

#include "skillrec/neuralkit/featurizer.hpp"
#include "skillrec/neuralkit/trainer.hpp"

namespace skillrec::nk {

inline void to_json(nlohmann::json& j, const FeaturizerConfig& c) {
  j = nlohmann::json{{"word_orders", c.word_orders},
                     {"char_orders", c.char_orders},
                     {"dim_log2", c.dim_log2},
                     {"hash_seed", c.hash_seed}};
}

inline void from_json(const nlohmann::json& j, FeaturizerConfig& c) {
  c.word_orders = j.value("word_orders", c.word_orders);
  c.char_orders = j.value("char_orders", c.char_orders);
  c.dim_log2 = j.value("dim_log2", c.dim_log2);
  c.hash_seed = j.value("hash_seed", c.hash_seed);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},       {"patience", c.patience},
                     {"dropout", c.dropout},             {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
}

}  // namespace skillrec::nk
