#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "skillrec/catalog.hpp"
#include "skillrec/neuralkit/featurizer.hpp"
#include "skillrec/reranker.hpp"

namespace skillrec {

// ---------------------------------------------------------------- embeddings

struct EmbedConfig {
  nk::FeaturizerConfig featurizer{{1}, {}, 18, 0x656d626564ULL};
  int dim = 256;
  std::uint64_t seed = 0x9e3779b9ULL;
};

/// Unit-norm rows: TF-IDF weighted hashed n-grams times a fixed Gaussian
/// projection (one N(0, 1/dim) row per hashed index, generated from the seed).
struct UtteranceEmbeddings {
  std::vector<std::string> ids;
  Eigen::MatrixXf vectors;  // one row per id
  std::unordered_map<std::string, std::size_t> index;

  const std::size_t* find(const std::string& id) const;
};

UtteranceEmbeddings utterance_embeddings(const std::vector<Utterance>& utterances, const EmbedConfig& config);

// ---------------------------------------------------------------- neighbors

struct Neighbor {
  std::size_t index;  // row in the pool
  float similarity;
};

/// Exact top-m neighbors per query with cosine >= r, most similar first
/// (ties by pool index). Pool rows whose id equals the query id are skipped.
std::vector<std::vector<Neighbor>> nearest_neighbors(const UtteranceEmbeddings& queries,
                                                     const UtteranceEmbeddings& pool, std::size_t m,
                                                     double r);

struct NeighborAggregate {
  struct Entry {
    std::string skill_id;
    double p = 0.0;      // mean accept rate among neighbors suggested this skill
    std::size_t n = 0;   // neighbors suggested this skill
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;  // sorted by skill_id
};

/// Aggregates the neighbors' logged (suggested skill, accepted) pairs.
/// `pool` rows correspond to the pool embeddings used for the search.
NeighborAggregate aggregate_neighbors(const std::vector<Neighbor>& neighbors,
                                      const std::vector<LoggedInteraction>& pool);

/// Entries with n >= n_c and p >= p_c.
std::vector<NeighborAggregate::Entry> filter_aggregate(const NeighborAggregate& aggregate, std::size_t n_c,
                                                       double p_c);

// ---------------------------------------------------------------- collaborative

struct CollabConfig {
  std::size_t m = 100;
  double r = 0.8;
  std::size_t n_c = 6;
  double p_c = 0.45;
  std::uint64_t seed = 1;
  bool fractional = false;  // write p_i instead of sampling

  void validate() const;
};

struct RelabelReport {
  std::size_t added_positives = 0;
  std::size_t imputed_negatives = 0;
  std::size_t targets_touched = 0;
  int i_star = -1;
};

/// Aggregates per utterance id, computed once and shared by example sets
/// built over the same interactions.
using AggregateMap = std::unordered_map<std::string, NeighborAggregate>;

AggregateMap neighbor_aggregates(const std::vector<LoggedInteraction>& pool, const EmbedConfig& embed,
                                 const CollabConfig& config);

/// Imputes labels on unobserved candidates from the qualifying neighbor skills.
/// Observed labels are never touched.
RelabelReport collaborative_relabel(std::vector<RerankExample>& examples, const AggregateMap& aggregates,
                                    const CollabConfig& config);

// ---------------------------------------------------------------- self-training

enum class Schedule { Constant, Adaptive };
const char* to_string(Schedule s);
Schedule parse_schedule(const std::string& text);

struct SelfTrainConfig {
  int iterations = 10;
  double c = 0.3;
  Schedule schedule = Schedule::Adaptive;
  int epochs_per_iteration = 2;  // warm-started retraining budget
  bool stop_when_unchanged = true;

  double threshold(int i) const { return schedule == Schedule::Adaptive ? c + 0.1 * i : c; }
  void validate() const;
};

/// Sets every unobserved candidate scoring above `cutoff` to an imputed 1.
/// Returns the number of labels changed.
std::size_t self_train_step(std::vector<RerankExample>& examples, const std::vector<std::vector<double>>& scores,
                            double cutoff);

struct SelfTrainResult {
  std::vector<RerankExample> examples;  // labels of the selected iteration
  RRModel model;
  int i_star = 0;                        // 1-based iteration count of the selected model
  std::vector<double> validation_loss;   // per iteration
  std::vector<std::size_t> added;        // labels changed per iteration
  RelabelReport report;
};

SelfTrainResult self_train_relabel(const std::vector<RerankExample>& train,
                                   const std::vector<RerankExample>& validation, const RRModel& base,
                                   const Catalog& catalog, const SelfTrainConfig& config);

}  // namespace skillrec
