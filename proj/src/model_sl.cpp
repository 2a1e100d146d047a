#include "skillrec/model_sl.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "skillrec/config_json.hpp"
#include "skillrec/error.hpp"
#include "skillrec/neuralkit/losses.hpp"
#include "skillrec/neuralkit/model_file.hpp"
#include "skillrec/rng.hpp"

namespace skillrec {

using nk::Mat;
using nk::Vec;

void MultiTaskWeights::validate() const {
  if (w1 <= 0.0 || w2 < 0.0 || w3 < 0.0)
    throw InvalidArgument("multitask weights must satisfy w1 > 0, w2 >= 0, w3 >= 0");
}

namespace {

std::unordered_map<std::string, Eigen::Index> make_lookup(const std::vector<std::string>& items,
                                                          const char* what) {
  std::unordered_map<std::string, Eigen::Index> m;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (!m.emplace(items[i], static_cast<Eigen::Index>(i)).second)
      throw InvalidArgument(std::string("duplicate entry in ") + what + " vocabulary: " + items[i]);
  return m;
}

std::optional<Eigen::Index> lookup(const std::unordered_map<std::string, Eigen::Index>& m,
                                   const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) return std::nullopt;
  return it->second;
}

}  // namespace

SLModel::SLModel(SlConfig config, std::vector<std::string> skills,
                 std::vector<std::string> categories, std::vector<std::string> subcategories)
    : config_(std::move(config)),
      skills_(std::move(skills)),
      categories_(std::move(categories)),
      subcategories_(std::move(subcategories)) {
  if (skills_.empty()) throw InvalidArgument("SLModel: empty skill vocabulary");
  if (categories_.empty() || subcategories_.empty())
    throw InvalidArgument("SLModel: empty category or subcategory vocabulary");
  config_.weights.validate();
  skill_lookup_ = make_lookup(skills_, "skill");
  category_lookup_ = make_lookup(categories_, "category");
  subcategory_lookup_ = make_lookup(subcategories_, "subcategory");
  build(config_.train.seed);
}

void SLModel::build(std::uint64_t seed) {
  Rng rng(seed);
  const auto dim = static_cast<Eigen::Index>(config_.featurizer.dim());
  embedding_ = params_.add("encoder.embedding", nk::normal_fill(dim, config_.embed_dim, 0.05, rng), true);
  mlp_ = nk::make_mlp(params_, "mlp", config_.embed_dim, config_.hidden, nk::Activation::Relu, true,
                      config_.train.dropout, rng);
  const Eigen::Index width = mlp_.layers.empty() ? config_.embed_dim : mlp_.out();
  skill_head_ = nk::make_dense(params_, "head.skill", width, static_cast<Eigen::Index>(skills_.size()), rng, false);
  category_head_ = nk::make_dense(params_, "head.category", width,
                                  static_cast<Eigen::Index>(categories_.size()), rng, false);
  subcategory_head_ = nk::make_dense(params_, "head.subcategory", width,
                                     static_cast<Eigen::Index>(subcategories_.size()), rng, false);
}

std::optional<Eigen::Index> SLModel::skill_index(const std::string& id) const {
  return lookup(skill_lookup_, id);
}
std::optional<Eigen::Index> SLModel::category_index(const std::string& c) const {
  return lookup(category_lookup_, c);
}
std::optional<Eigen::Index> SLModel::subcategory_index(const std::string& s) const {
  return lookup(subcategory_lookup_, s);
}

void SLModel::forward_batch(const std::vector<const nk::SparseFeatures*>& inputs, bool train,
                            Rng* rng, Mat& skill, Mat& category, Mat& subcategory,
                            SlCache* cache) const {
  const auto rows = static_cast<Eigen::Index>(inputs.size());
  const Mat& table = params_.value(embedding_);
  Mat encoded(rows, table.cols());
  for (Eigen::Index i = 0; i < rows; ++i) encoded.row(i) = nk::embed_bag_forward(table, *inputs[i]);
  Mat hidden = mlp_.layers.empty()
                   ? encoded
                   : nk::mlp_forward(params_, mlp_, encoded, train, rng, cache ? &cache->mlp : nullptr);
  skill = nk::dense_forward(params_, skill_head_, hidden);
  category = nk::dense_forward(params_, category_head_, hidden);
  subcategory = nk::dense_forward(params_, subcategory_head_, hidden);
  if (cache) {
    cache->rows = rows;
    cache->features.clear();
    for (const auto* f : inputs) cache->features.push_back(*f);
    cache->encoded = std::move(encoded);
    cache->hidden = std::move(hidden);
  }
}

void SLModel::backward_batch(const SlCache& cache, const Mat& d_skill, const Mat& d_category,
                             const Mat& d_subcategory, nk::Gradients& grads) const {
  Mat d_hidden = nk::dense_backward(params_, skill_head_, cache.hidden, d_skill, grads);
  d_hidden += nk::dense_backward(params_, category_head_, cache.hidden, d_category, grads);
  d_hidden += nk::dense_backward(params_, subcategory_head_, cache.hidden, d_subcategory, grads);
  Mat d_encoded = mlp_.layers.empty() ? d_hidden
                                      : nk::mlp_backward(params_, mlp_, cache.mlp, d_hidden, grads);
  for (Eigen::Index i = 0; i < cache.rows; ++i)
    nk::embed_bag_backward(embedding_, cache.features[static_cast<std::size_t>(i)],
                           d_encoded.row(i), grads);
}

SlHeads SLModel::forward_heads(std::string_view text) const {
  const auto features = nk::featurize(text, config_.featurizer);
  Mat s, c, sc;
  forward_batch({&features}, false, nullptr, s, c, sc, nullptr);
  return {s.row(0).transpose(), c.row(0).transpose(), sc.row(0).transpose()};
}

Vec SLModel::forward(std::string_view text) const { return forward_heads(text).skill; }

CandidateList SLModel::retrieve(std::string_view text, std::size_t k) const {
  if (k == 0) throw InvalidArgument("sl_retrieve: K1 must be >= 1");
  const Vec o = forward(text);
  const Vec p = nk::softmax(o);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(o.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const std::size_t n = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](Eigen::Index a, Eigen::Index b) {
                      if (o[a] != o[b]) return o[a] > o[b];
                      return skills_[static_cast<std::size_t>(a)] < skills_[static_cast<std::size_t>(b)];
                    });
  CandidateList out;
  out.k = k;
  for (std::size_t i = 0; i < n; ++i)
    out.items.push_back({skills_[static_cast<std::size_t>(order[i])], p[order[i]], CandidateSource::Model, -1});
  return out;
}

namespace {

nlohmann::json sl_sidecar(const SlConfig& c, const std::vector<std::string>& skills,
                          const std::vector<std::string>& categories,
                          const std::vector<std::string>& subcategories) {
  return nlohmann::json{
      {"kind", "shortlister"},
      {"version", 1},
      {"featurizer", c.featurizer},
      {"embed_dim", c.embed_dim},
      {"hidden", c.hidden},
      {"skill_loss", c.skill_loss == SkillLoss::MultiClass ? "multiclass" : "ova"},
      {"weights", {c.weights.w1, c.weights.w2, c.weights.w3}},
      {"min_count", c.min_count},
      {"train", c.train},
      {"skills", skills},
      {"categories", categories},
      {"subcategories", subcategories}};
}

}  // namespace

void SLModel::save(const std::filesystem::path& path) const {
  nk::save_model(path, params_, sl_sidecar(config_, skills_, categories_, subcategories_));
}

SLModel SLModel::load(const std::filesystem::path& path) {
  const auto j = nk::load_sidecar(path);
  if (j.value("kind", "") != "shortlister") throw Error(path.string() + ": not a shortlister model");
  SlConfig c;
  c.featurizer = j.at("featurizer").get<nk::FeaturizerConfig>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.skill_loss = j.at("skill_loss").get<std::string>() == "ova" ? SkillLoss::OneVsAll : SkillLoss::MultiClass;
  const auto w = j.at("weights").get<std::vector<double>>();
  if (w.size() != 3) throw Error(path.string() + ": weights must have three entries");
  c.weights = {w[0], w[1], w[2]};
  c.min_count = j.at("min_count").get<int>();
  c.train = j.at("train").get<nk::TrainConfig>();
  SLModel model(c, j.at("skills").get<std::vector<std::string>>(),
                j.at("categories").get<std::vector<std::string>>(),
                j.at("subcategories").get<std::vector<std::string>>());
  nk::load_tensors(path, model.params_);
  return model;
}

std::vector<std::string> build_sl_vocab(const std::vector<LoggedInteraction>& train, int min_count) {
  if (min_count < 1) throw InvalidArgument("build_sl_vocab: min_count must be >= 1");
  std::map<std::string, int> counts;
  for (const auto& x : train)
    if (x.has_feedback() && *x.accepted == 1) ++counts[*x.suggested_skill];
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [id, n] : counts)
    if (n >= min_count) kept.emplace_back(id, n);
  if (kept.empty()) throw InvalidArgument("build_sl_vocab: empty vocabulary (cannot train)");
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> vocab;
  for (auto& [id, _] : kept) vocab.push_back(id);
  return vocab;
}

double loss_multitask(const SlHeads& heads, const SlLabels& labels, const MultiTaskWeights& weights,
                      SkillLoss skill_loss, SlHeads* grads) {
  if (labels.skill < 0 || labels.category < 0 || labels.subcategory < 0)
    throw InvalidArgument("loss_multitask: every head needs a label");
  double skill_term;
  Vec g_skill, g_cat, g_sub;
  if (skill_loss == SkillLoss::MultiClass) {
    skill_term = nk::loss_multiclass_index(heads.skill, labels.skill, grads ? &g_skill : nullptr);
  } else {
    Vec y = Vec::Zero(heads.skill.size());
    if (labels.skill >= y.size()) throw InvalidArgument("loss_multitask: skill label out of range");
    y[labels.skill] = 1.0;
    skill_term = nk::loss_ova(heads.skill, y, grads ? &g_skill : nullptr);
  }
  const double cat_term = nk::loss_multiclass_index(heads.category, labels.category, grads ? &g_cat : nullptr);
  const double sub_term =
      nk::loss_multiclass_index(heads.subcategory, labels.subcategory, grads ? &g_sub : nullptr);
  if (grads) {
    grads->skill = weights.w1 * g_skill;
    grads->category = weights.w2 * g_cat;
    grads->subcategory = weights.w3 * g_sub;
  }
  return weights.w1 * skill_term + weights.w2 * cat_term + weights.w3 * sub_term;
}

std::vector<SlExample> make_sl_examples(const SLModel& model,
                                        const std::vector<LoggedInteraction>& interactions,
                                        const Catalog& catalog) {
  std::vector<SlExample> out;
  for (const auto& x : interactions) {
    if (!x.has_feedback() || *x.accepted != 1) continue;
    const auto skill = model.skill_index(*x.suggested_skill);
    if (!skill) continue;
    const Skill& meta = catalog.at(*x.suggested_skill);
    const auto cat = model.category_index(meta.category);
    const auto sub = model.subcategory_index(meta.subcategory);
    if (!cat || !sub) throw ValidationError("skill '" + meta.skill_id + "' has a category unknown to the model");
    out.push_back({nk::featurize(x.utterance.text, model.config().featurizer), {*skill, *cat, *sub}});
  }
  return out;
}

double sl_loss(const SLModel& model, const std::vector<const SlExample*>& batch,
               nk::Gradients* grads, bool train, Rng* rng) {
  if (batch.empty()) return 0.0;
  std::vector<const nk::SparseFeatures*> inputs;
  for (const auto* e : batch) inputs.push_back(&e->features);
  Mat s, c, sc;
  SlCache cache;
  model.forward_batch(inputs, train, rng, s, c, sc, grads ? &cache : nullptr);
  Mat ds(s.rows(), s.cols()), dc(c.rows(), c.cols()), dsc(sc.rows(), sc.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    SlHeads heads{s.row(i).transpose(), c.row(i).transpose(), sc.row(i).transpose()};
    SlHeads g;
    total += loss_multitask(heads, batch[static_cast<std::size_t>(i)]->labels, model.config().weights,
                            model.config().skill_loss, grads ? &g : nullptr);
    if (grads) {
      ds.row(i) = g.skill.transpose();
      dc.row(i) = g.category.transpose();
      dsc.row(i) = g.subcategory.transpose();
    }
  }
  if (grads) model.backward_batch(cache, ds, dc, dsc, *grads);
  return total;
}

SLModel train_sl(const std::vector<LoggedInteraction>& train,
                 const std::vector<LoggedInteraction>& validation, const Catalog& catalog,
                 const SlConfig& config, nk::TrainReport* report) {
  config.train.validate();
  bool any = std::any_of(train.begin(), train.end(),
                         [](const LoggedInteraction& x) { return x.has_feedback() && *x.accepted == 1; });
  if (!any) throw InvalidArgument("train_sl: empty training set");
  SLModel model(config, build_sl_vocab(train, config.min_count), catalog.categories(),
                catalog.subcategories());
  const auto train_ex = make_sl_examples(model, train, catalog);
  if (train_ex.empty()) throw InvalidArgument("train_sl: empty training set");
  const auto val_ex = make_sl_examples(model, validation, catalog);

  auto batch_loss = [&](std::span<const std::size_t> idx, nk::Gradients& g, Rng& rng) {
    std::vector<const SlExample*> batch;
    for (auto i : idx) batch.push_back(&train_ex[i]);
    return sl_loss(model, batch, &g, true, &rng);
  };
  nk::ValidationLoss val_loss;
  if (!val_ex.empty()) {
    val_loss = [&]() {
      double total = 0.0;
      std::vector<const SlExample*> batch;
      for (const auto& e : val_ex) {
        batch.push_back(&e);
        if (batch.size() == 256) {
          total += sl_loss(model, batch, nullptr, false, nullptr);
          batch.clear();
        }
      }
      total += sl_loss(model, batch, nullptr, false, nullptr);
      return total / static_cast<double>(val_ex.size());
    };
  }
  auto r = nk::fit(model.parameters(), train_ex.size(), batch_loss, val_loss, config.train);
  if (report) *report = std::move(r);
  return model;
}

}  // namespace skillrec
