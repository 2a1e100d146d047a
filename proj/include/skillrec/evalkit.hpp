#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "skillrec/catalog.hpp"

namespace skillrec {

// ---------------------------------------------------------------- ranking metrics

/// |top-K ∩ relevant| / K. Throws on K = 0 or an empty relevant set.
double precision_at_k(const std::vector<std::string>& ranked, const std::vector<std::string>& relevant,
                      std::size_t k);
/// Binary-gain NDCG with log2(i + 1) discounts.
double ndcg_at_k(const std::vector<std::string>& ranked, const std::vector<std::string>& relevant, std::size_t k);

// ---------------------------------------------------------------- decisions

enum class LabelMode { Logged, Oracle };
const char* to_string(LabelMode mode);
LabelMode parse_label_mode(const std::string& text);

/// One system output: the reranked list and its top-1 score.
struct SystemOutput {
  std::string utterance_id;
  std::vector<std::string> ranked;  // best first
  double top_score = 0.0;           // 0 for an empty list

  std::optional<std::string> top() const {
    if (ranked.empty()) return std::nullopt;
    return ranked.front();
  }
};

/// The labels a system is judged against.
struct EvalContext {
  struct Logged {
    std::optional<std::string> skill;
    std::optional<int> accepted;
  };
  std::unordered_map<std::string, Logged> logged;
  const RelevanceOracle* oracle = nullptr;

  static EvalContext from_interactions(const std::vector<LoggedInteraction>& interactions,
                                       const RelevanceOracle* oracle);
  /// Whether suggesting `skill` for the utterance counts as correct.
  bool correct(LabelMode mode, const std::string& utterance_id, const std::string& skill) const;
  bool opportunity(LabelMode mode, const std::string& utterance_id) const;
};

struct DecisionMetrics {
  std::optional<double> precision;  // null when nothing was suggested
  double recall = 0.0;
  std::optional<double> f1;
  double suggestion_rate = 0.0;
  std::size_t utterances = 0;
  std::size_t suggestions = 0;
  std::size_t correct = 0;
  std::size_t opportunities = 0;
};

/// Suggestions made: system -> optional skill per utterance.
using Decisions = std::vector<std::pair<std::string, std::optional<std::string>>>;

Decisions decide(const std::vector<SystemOutput>& outputs, double cutoff);
DecisionMetrics decision_metrics(const Decisions& decisions, const EvalContext& context, LabelMode mode);

/// Agreement rate on utterances where both the system and the log suggest; null if none.
std::optional<double> overlap_at_1(const Decisions& system, const EvalContext& context);

struct CurvePoint {
  double cutoff;
  double precision;
  double recall;
  double suggestion_rate;
};

/// Decision metrics at every distinct top-1 score, suggesting scores >= threshold,
/// thresholds descending.
std::vector<CurvePoint> sweep_curves(const std::vector<SystemOutput>& outputs, const EvalContext& context,
                                     LabelMode mode);
/// Trapezoidal area under precision over recall, anchored at recall 0 with the first precision.
double curve_area(const std::vector<CurvePoint>& curve);
void write_curve_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path);

// ---------------------------------------------------------------- reports

inline const std::vector<double> kReportRates{0.25, 0.40, 0.50, 0.75};

struct MetricsReport {
  LabelMode mode = LabelMode::Logged;
  std::string system;
  std::string config_hash;
  std::size_t utterances = 0;
  std::vector<std::pair<double, std::optional<double>>> precision_at_rate;
  DecisionMetrics at_cutoff;
  double cutoff = 0.5;
  std::optional<double> overlap_at_1;  // at the 50% suggestion-rate operating point
  std::optional<double> overlap_at_cutoff;

  std::optional<double> pre_at(double rate) const;
  nlohmann::json to_json() const;
};

MetricsReport evaluate_outputs(const std::vector<SystemOutput>& outputs, const EvalContext& context,
                               LabelMode mode, double cutoff = 0.5);

struct ShortlistMetrics {
  std::vector<std::pair<std::size_t, double>> precision;  // (K, mean P@K)
  std::vector<std::pair<std::size_t, double>> ndcg;
  std::size_t utterances = 0;
  double value(const std::vector<std::pair<std::size_t, double>>& v, std::size_t k) const;
};

/// Mean oracle P@K and NDCG@K of shortlists keyed by utterance id.
ShortlistMetrics shortlist_metrics(const std::vector<std::pair<std::string, std::vector<std::string>>>& lists,
                                   const RelevanceOracle& oracle, const std::vector<std::size_t>& ks);

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// JSONL with {"utterance_id","suggested","score","top_skill","ranked"} per output.
void save_suggestions(const std::vector<SystemOutput>& outputs, double cutoff, const std::filesystem::path& path);
std::vector<SystemOutput> load_suggestions(const std::filesystem::path& path);

}  // namespace skillrec
