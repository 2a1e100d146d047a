#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillrec/evalkit.hpp"
#include "skillrec/model_sl.hpp"
#include "skillrec/relabel.hpp"
#include "skillrec/reranker.hpp"
#include "skillrec/simulate.hpp"

namespace skillrec {

enum class LabelPolicy { Baseline, Collaborative, SelfTraining };
const char* to_string(LabelPolicy policy);
LabelPolicy parse_label_policy(const std::string& text);

/// One reranking system: mode, candidate source and label policy.
struct SystemSpec {
  std::string name;
  RerankMode mode = RerankMode::Listwise;
  bool model_sl = false;  // combine the model-based list with the keyword list
  LabelPolicy labels = LabelPolicy::Baseline;
  FeatureMask features;
  std::size_t k1 = 40;
};

/// The seven comparison systems in table order.
std::vector<SystemSpec> default_systems();

struct ExperimentConfig {
  ExperimentConfig() { apply_seed(1); }

  WorldConfig world;
  std::size_t n_utterances = 20000;
  SplitFractions split;
  SlConfig sl;
  CandidateConfig candidates;
  RrConfig rr;
  EmbedConfig embed;
  CollabConfig collab;
  SelfTrainConfig selftrain;
  double cutoff = 0.5;
  std::size_t oracle_sample = 1000;
  std::vector<SystemSpec> systems = default_systems();
  bool ablations = true;        // feature ablations of `ablation_base`
  std::string ablation_base = "collab+model";
  bool sensitivity = true;      // `ablation_base` again with K1 = sensitivity_k1
  std::size_t sensitivity_k1 = 10;
  bool save_models = false;     // write every trained reranker below models/
  std::uint64_t seed = 1;
  /// Worker threads for the independent systems; 0 uses every core. An
  /// execution setting only: it is not serialized and never changes results.
  unsigned threads = 0;

  /// Propagates `seed` into every component seed.
  void apply_seed(std::uint64_t seed);
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Missing keys keep their defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
std::string config_hash(const nlohmann::json& j);

struct SystemResult {
  SystemSpec spec;
  MetricsReport logged;
  MetricsReport oracle;
  nk::TrainReport train;
  RelabelReport relabel;
};

struct PipelineResult {
  std::vector<SystemResult> systems;
  std::vector<SystemResult> ablations;  // one per disabled feature
  std::optional<SystemResult> ablation_reference;
  std::optional<SystemResult> sensitivity;
  ShortlistMetrics keyword_sl;
  ShortlistMetrics model_sl;
  double keyword_logged_coverage = 0.0;  // logged positives inside the keyword top-K2 list
  ExampleStats rule_stats, model_stats;
  std::size_t test_utterances = 0;
  std::size_t oracle_utterances = 0;
  std::size_t sl_vocabulary = 0;
  double logging_suggestion_rate = 0.0;

  const SystemResult& system(const std::string& name) const;
  nlohmann::json to_json() const;
};

using ProgressFn = std::function<void(const std::string&)>;

/// simulate -> index -> train-sl -> make-examples -> relabel -> train-rr -> evaluate.
/// Writes artifacts below `out_dir` when it is non-empty.
PipelineResult run_pipeline(const ExperimentConfig& config, const std::filesystem::path& out_dir = {},
                            const ProgressFn& progress = {});

/// Table-style summary: Pre@rates, P, R, F1 for both label modes and overlap@1.
std::string format_table(const std::vector<SystemResult>& systems);

/// Reranks each example's candidates by model score. Empty lists give empty outputs.
std::vector<SystemOutput> rerank_outputs(const RRModel& model, const std::vector<RerankExample>& examples);

}  // namespace skillrec
