#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "skillrec/catalog.hpp"
#include "skillrec/keyword_sl.hpp"

namespace skillrec {

class Rng;

/// All knobs of the synthetic world. Every default is a simulator choice.
struct WorldConfig {
  int n_skills = 300;
  int n_clusters = 100;
  int n_categories = 12;
  int subcategories_per_category = 3;
  int core_pool = 600;
  int specific_tokens = 1;  // core tokens owned by one cluster
  int family_tokens = 3;    // core tokens shared by every cluster of a subcategory
  int carrier_phrases = 20;
  int noise_pool = 1000;
  double zipf_exponent = 1.1;
  double drop_prob = 0.2;
  double corrupt_prob = 0.05;
  bool corrupt_systematic = true;   // each token always mishears the same way
  double noise_prob = 0.3;
  double cross_noise = 1.0;  // share of description noise drawn from other clusters' core tokens
  int desc_noise_tokens = 6;
  double a_rel = 0.75;
  double a_irr = 0.05;
  double popular_fraction = 0.1;
  double pick_margin = 0.2;  // near-top candidates the log picks among uniformly; 0 is argmax
  double tau_log = 74.27;  // logging-policy abstention threshold on the top TF-IDF score
  std::size_t k2 = 40;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const WorldConfig& config);
WorldConfig world_config_from_json(const nlohmann::json& j);

struct Cluster {
  std::string category;
  std::string subcategory;
  std::vector<std::string> core_tokens;  // cluster-specific tokens first, then the family tokens
  std::vector<std::string> skills;
};

struct World {
  WorldConfig config;
  Catalog catalog;
  std::vector<Cluster> clusters;
  std::unordered_map<std::string, int> cluster_of;
  std::vector<std::string> carriers;
  std::vector<std::string> noise_tokens;
  std::vector<double> cluster_cdf;  // Zipf over a seeded cluster ranking
};

World gen_world(const WorldConfig& config);

struct GeneratedUtterance {
  Utterance utterance;
  int cluster = -1;
  std::vector<std::string> relevant;  // sorted skill ids
};

/// Draws one utterance. `ordinal` fixes the id and the monotone timestamp.
GeneratedUtterance gen_utterance(const World& world, Rng& rng, std::size_t ordinal);

struct LoggingDecision {
  std::optional<std::string> suggested;
  CandidateList candidates;
};

/// Top-K2 TF-IDF retrieval; abstains when nothing matches or the top score is
/// below tau_log. Otherwise picks the first (argmax) candidate, or with a
/// positive `pick_margin` and an rng, a uniform pick among candidates scoring
/// at least (1 - pick_margin) times the top score.
LoggingDecision logging_policy(const InvertedIndex& index, std::string_view text, std::size_t k2, double tau_log,
                               double pick_margin = 0.0, Rng* rng = nullptr);

int user_feedback(const World& world, const GeneratedUtterance& utterance, const std::string& suggested,
                  Rng& rng);

struct SimulatedLog {
  World world;
  std::vector<LoggedInteraction> interactions;
  RelevanceOracle oracle;
  std::vector<int> clusters;  // generating cluster per interaction
};

SimulatedLog simulate_log(const WorldConfig& config, std::size_t n_utterances);

/// Writes skills.jsonl, interactions.jsonl, oracle.jsonl and world.json.
void write_simulation(const SimulatedLog& log, const std::filesystem::path& dir);

/// Threshold giving the target suggestion rate over `n` fresh utterances.
double calibrate_tau_log(const WorldConfig& config, std::size_t n, double target_rate);

}  // namespace skillrec
