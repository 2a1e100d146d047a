#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "skillrec/catalog.hpp"
#include "skillrec/neuralkit/featurizer.hpp"
#include "skillrec/neuralkit/layers.hpp"
#include "skillrec/neuralkit/trainer.hpp"

namespace skillrec {

class Rng;

/// Weights of the skill-id, category and subcategory losses.
struct MultiTaskWeights {
  double w1 = 1.0 / 3.0;
  double w2 = 1.0 / 3.0;
  double w3 = 1.0 / 3.0;

  void validate() const;
};

enum class SkillLoss { OneVsAll, MultiClass };

struct SlConfig {
  nk::FeaturizerConfig featurizer;
  int embed_dim = 64;
  std::vector<int> hidden{128, 64};
  SkillLoss skill_loss = SkillLoss::MultiClass;
  MultiTaskWeights weights;
  int min_count = 2;
  nk::TrainConfig train;
};

/// Raw (pre-softmax) scores of the three output heads.
struct SlHeads {
  nk::Vec skill;
  nk::Vec category;
  nk::Vec subcategory;
};

/// Head labels as indices into the model's vocabularies.
struct SlLabels {
  Eigen::Index skill = -1;
  Eigen::Index category = -1;
  Eigen::Index subcategory = -1;
};

struct SlCache {
  Eigen::Index rows = 0;
  std::vector<nk::SparseFeatures> features;
  nk::Mat encoded;
  nk::MlpCache mlp;
  nk::Mat hidden;
};

/// Hashed n-gram encoder, ReLU MLP, and three linear heads. The skill head
/// is an (N*_s x last hidden) matrix.
class SLModel {
 public:
  SLModel(SlConfig config, std::vector<std::string> skills, std::vector<std::string> categories,
          std::vector<std::string> subcategories);

  const SlConfig& config() const { return config_; }
  const std::vector<std::string>& vocabulary() const { return skills_; }
  const std::vector<std::string>& categories() const { return categories_; }
  const std::vector<std::string>& subcategories() const { return subcategories_; }
  std::optional<Eigen::Index> skill_index(const std::string& skill_id) const;
  std::optional<Eigen::Index> category_index(const std::string& category) const;
  std::optional<Eigen::Index> subcategory_index(const std::string& subcategory) const;

  /// Skill scores O in evaluation mode.
  nk::Vec forward(std::string_view text) const;
  SlHeads forward_heads(std::string_view text) const;

  /// Batched forward over pre-featurized inputs; one row per input.
  void forward_batch(const std::vector<const nk::SparseFeatures*>& inputs, bool train, Rng* rng,
                     nk::Mat& skill, nk::Mat& category, nk::Mat& subcategory, SlCache* cache) const;
  void backward_batch(const SlCache& cache, const nk::Mat& d_skill, const nk::Mat& d_category,
                      const nk::Mat& d_subcategory, nk::Gradients& grads) const;

  /// Top-K1 vocabulary skills by O (ties by skill_id), scored by softmax(O).
  CandidateList retrieve(std::string_view text, std::size_t k) const;

  nk::Parameters& parameters() { return params_; }
  const nk::Parameters& parameters() const { return params_; }

  void save(const std::filesystem::path& path) const;
  static SLModel load(const std::filesystem::path& path);

 private:
  void build(std::uint64_t seed);

  SlConfig config_;
  std::vector<std::string> skills_;
  std::vector<std::string> categories_;
  std::vector<std::string> subcategories_;
  std::unordered_map<std::string, Eigen::Index> skill_lookup_;
  std::unordered_map<std::string, Eigen::Index> category_lookup_;
  std::unordered_map<std::string, Eigen::Index> subcategory_lookup_;

  nk::Parameters params_;
  nk::TensorId embedding_ = 0;
  nk::Mlp mlp_;
  nk::Dense skill_head_, category_head_, subcategory_head_;
};

/// Skills whose accepted-suggestion count in `train` is at least
/// `min_count`, ordered by count descending then skill_id. Throws
/// InvalidArgument when min_count < 1 or the result is empty.
std::vector<std::string> build_sl_vocab(const std::vector<LoggedInteraction>& train, int min_count);

/// w1 * skill loss + w2 * category loss + w3 * subcategory loss. The skill
/// term is one-versus-all or multi-class per `skill_loss`; the other two are
/// always multi-class. Throws InvalidArgument when a label is missing.
/// `grads`, when given, receives d loss / d head logits.
double loss_multitask(const SlHeads& heads, const SlLabels& labels, const MultiTaskWeights& weights,
                      SkillLoss skill_loss = SkillLoss::MultiClass, SlHeads* grads = nullptr);

/// One training example for the shortlister.
struct SlExample {
  nk::SparseFeatures features;
  SlLabels labels;
};

/// Accepted interactions whose suggested skill is in the model vocabulary.
std::vector<SlExample> make_sl_examples(const SLModel& model,
                                        const std::vector<LoggedInteraction>& interactions,
                                        const Catalog& catalog);

/// Summed multitask loss over the examples, accumulating gradients when
/// `grads` is non-null. `train` enables dropout.
double sl_loss(const SLModel& model, const std::vector<const SlExample*>& batch,
               nk::Gradients* grads, bool train, Rng* rng);

/// Builds the vocabulary, initializes, and trains with early stopping on
/// the validation multitask loss. Throws InvalidArgument on an empty
/// training set.
SLModel train_sl(const std::vector<LoggedInteraction>& train,
                 const std::vector<LoggedInteraction>& validation, const Catalog& catalog,
                 const SlConfig& config, nk::TrainReport* report = nullptr);

}  // namespace skillrec
