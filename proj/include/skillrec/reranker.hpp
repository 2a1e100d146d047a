#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "skillrec/catalog.hpp"
#include "skillrec/keyword_sl.hpp"
#include "skillrec/model_sl.hpp"
#include "skillrec/neuralkit/featurizer.hpp"
#include "skillrec/neuralkit/layers.hpp"
#include "skillrec/neuralkit/trainer.hpp"

namespace skillrec {

// ---------------------------------------------------------------- combinator

/// Model-list skills first, then the rule-list skills the model list lacks.
struct CombinedCandidates {
  std::vector<Candidate> items;
  std::size_t k1 = 0;
  std::size_t k2 = 0;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  std::optional<std::size_t> position(const std::string& skill_id) const;
  bool operator==(const CombinedCandidates&) const = default;
};

/// Appends `rule` to `model`, dropping rule entries already present, and
/// truncates to `k_max` entries (0 keeps everything).
CombinedCandidates combine(const CandidateList& model, const CandidateList& rule,
                           std::size_t k_max = 0);

// ---------------------------------------------------------------- score bins

using BinEdges = std::array<double, 2>;

/// Ascending thresholds per candidate source.
struct SourceBinEdges {
  BinEdges rule{0.0, 0.0};
  BinEdges model{0.0, 0.0};
  const BinEdges& of(CandidateSource s) const { return s == CandidateSource::Rule ? rule : model; }
};

/// 0 if s < e1, 1 if e1 <= s < e2, else 2.
int bin_score(double score, const BinEdges& edges);
/// Tertile edges: the values at ranks floor(n/3) and floor(2n/3) of the sorted scores.
BinEdges fit_tertile_edges(std::vector<double> scores);

// ---------------------------------------------------------------- examples

enum class LabelSource : std::uint8_t { Unobserved, Observed, Imputed };

struct RerankExample {
  std::string utterance_id;
  std::string text;
  CombinedCandidates candidates;
  std::vector<double> labels;
  std::vector<LabelSource> sources;
  /// Skill the logging policy suggested, kept even when it fell outside the list.
  std::optional<std::string> logged_skill;
  std::optional<int> logged_accepted;

  std::optional<std::size_t> observed_position() const;
  std::size_t positives() const;
};

/// JSONL persistence, one example per line.
void save_examples(const std::vector<RerankExample>& examples, const std::filesystem::path& path);
std::vector<RerankExample> load_examples(const std::filesystem::path& path);

SourceBinEdges fit_bin_edges(const std::vector<RerankExample>& examples);

struct CandidateConfig {
  std::size_t k1 = 40;
  std::size_t k2 = 40;
  std::size_t k_max = 80;
};

/// Combined shortlists for one utterance. `sl` may be null for rule-only systems.
CombinedCandidates shortlist(std::string_view text, const SLModel* sl, const InvertedIndex& index,
                             const CandidateConfig& config);

struct ExampleStats {
  std::size_t interactions = 0;
  std::size_t examples = 0;
  std::size_t missing_observed = 0;  // suggested skill not in the combined list
  std::size_t empty_lists = 0;       // dropped: no candidates at all

  double missing_fraction() const {
    return examples == 0 ? 0.0 : static_cast<double>(missing_observed) / static_cast<double>(examples);
  }
};

/// Baseline labeling: the observed skill gets its feedback bit, every other
/// candidate is an unobserved 0. Interactions without feedback are skipped.
std::vector<RerankExample> make_examples(const std::vector<LoggedInteraction>& interactions,
                                         const SLModel* sl, const InvertedIndex& index,
                                         const CandidateConfig& config, ExampleStats* stats = nullptr);

// ---------------------------------------------------------------- reranker

enum class RerankMode { Pointwise, Listwise };
const char* to_string(RerankMode mode);
RerankMode parse_mode(const std::string& text);

/// Which skill features feed the fusion layer. A disabled feature contributes zeros.
struct FeatureMask {
  bool skill_id = true;
  bool skill_name = true;
  bool score_bin = true;
  bool category = true;
  bool popularity = true;
  bool flag = true;

  static const std::vector<std::string>& names();
  /// Comma-separated feature names to disable, e.g. "skill_id,flag".
  static FeatureMask ablating(const std::string& csv);
  std::string ablated_csv() const;
  bool operator==(const FeatureMask&) const = default;
};

struct RrConfig {
  RerankMode mode = RerankMode::Listwise;
  nk::FeaturizerConfig featurizer;
  int text_dim = 32;     // shared hashed encoder width
  int utt_dim = 32;      // utterance tower output, equals fused_dim
  int id_dim = 16;
  int bin_dim = 4;
  int category_dim = 8;
  int popularity_dim = 2;
  int flag_dim = 2;
  int fused_dim = 32;
  int rnn_hidden = 16;   // per direction; 2 * rnn_hidden equals fused_dim
  std::vector<int> score_hidden{32};
  FeatureMask features;
  nk::TrainConfig train;

  void validate() const;
};

/// Static per-skill features the reranker looks up by id.
struct SkillFeatureTable {
  std::vector<std::string> skill_ids;
  std::vector<std::string> names;
  std::vector<std::string> categories;  // category vocabulary
  std::vector<int> category_of;
  std::vector<int> popularity;

  static SkillFeatureTable from_catalog(const Catalog& catalog);
};

struct RrBatchCache;

class RRModel {
 public:
  /// `id_vocab` lists the skills with a trained id embedding; others use the UNK row.
  RRModel(RrConfig config, SkillFeatureTable skills, std::vector<std::string> id_vocab,
          SourceBinEdges edges);

  const RrConfig& config() const { return config_; }
  RerankMode mode() const { return config_.mode; }
  const SourceBinEdges& bin_edges() const { return edges_; }
  const std::vector<std::string>& id_vocab() const { return id_vocab_; }
  nk::Parameters& parameters() { return params_; }
  const nk::Parameters& parameters() const { return params_; }
  void set_features(const FeatureMask& mask) { config_.features = mask; }

  /// Sigmoid scores, one per candidate.
  std::vector<double> score(std::string_view text, const CombinedCandidates& candidates) const;

  /// Raw logits for every candidate of every list, concatenated in batch order.
  nk::Vec forward_batch(const std::vector<const RerankExample*>& batch, bool train, Rng* rng,
                        RrBatchCache* cache) const;
  void backward_batch(const RrBatchCache& cache, const nk::Vec& d_logits, nk::Gradients& grads) const;

  void save(const std::filesystem::path& path) const;
  static RRModel load(const std::filesystem::path& path);

 private:
  struct SkillRef {
    int id_row;
    int table_row;  // -1 when the skill is not in the feature table
  };
  SkillRef resolve(const std::string& skill_id) const;
  void build(std::uint64_t seed);
  int fusion_input_dim() const;

  RrConfig config_;
  SkillFeatureTable skills_;
  std::vector<std::string> id_vocab_;
  SourceBinEdges edges_;
  std::unordered_map<std::string, int> id_lookup_;
  std::unordered_map<std::string, int> table_lookup_;
  std::vector<nk::SparseFeatures> name_features_;

  nk::Parameters params_;
  nk::TensorId encoder_ = 0;
  nk::Dense utt_dense_;
  nk::TensorId id_table_ = 0, bin_table_ = 0, category_table_ = 0, popularity_table_ = 0, flag_table_ = 0;
  nk::Dense fusion_;
  nk::BiGru rnn_;
  nk::Mlp scorer_;

  friend struct RrBatchCache;
};

/// BCE over masked positions; scores must lie in [0, 1] and are clamped at 1e-7.
double rr_loss(const std::vector<double>& scores, const std::vector<double>& labels,
               const std::vector<int>& mask);

/// Summed BCE-with-logits over a batch. `observed_only` restricts the loss to
/// candidates carrying logged feedback.
double rr_batch_loss(const RRModel& model, const std::vector<const RerankExample*>& batch,
                     nk::Gradients* grads, bool train, Rng* rng, bool observed_only = false);

/// Mean per-label loss over the observed labels of `examples`.
double rr_observed_loss(const RRModel& model, const std::vector<RerankExample>& examples);

std::vector<std::string> build_rr_id_vocab(const std::vector<RerankExample>& examples);

/// Trains from scratch, or continues from `warm_start` when given.
RRModel train_rr(const std::vector<RerankExample>& train, const std::vector<RerankExample>& validation,
                 const Catalog& catalog, const RrConfig& config, const RRModel* warm_start = nullptr,
                 nk::TrainReport* report = nullptr);

/// Eval-mode scores for every example.
std::vector<std::vector<double>> score_examples(const RRModel& model,
                                                const std::vector<RerankExample>& examples);

struct Suggestion {
  std::string skill_id;
  double score = 0.0;
};

/// Argmax candidate (earliest position on ties) if its score exceeds the cutoff.
std::optional<Suggestion> suggest(const CombinedCandidates& candidates,
                                  const std::vector<double>& scores, double cutoff);

/// Largest c such that the fraction of scores > c is at least `rate`.
double cutoff_for_rate(const std::vector<double>& top_scores, double rate);

}  // namespace skillrec
