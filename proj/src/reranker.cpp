#include "skillrec/reranker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "skillrec/config_json.hpp"
#include "skillrec/error.hpp"
#include "skillrec/neuralkit/losses.hpp"
#include "skillrec/neuralkit/model_file.hpp"
#include "skillrec/rng.hpp"

namespace skillrec {

using nk::Mat;
using nk::RowVec;
using nk::Vec;

// ---------------------------------------------------------------- combinator

std::optional<std::size_t> CombinedCandidates::position(const std::string& skill_id) const {
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].skill_id == skill_id) return i;
  return std::nullopt;
}

CombinedCandidates combine(const CandidateList& model, const CandidateList& rule, std::size_t k_max) {
  CombinedCandidates out;
  out.k1 = model.k;
  out.k2 = rule.k;
  std::unordered_set<std::string> seen;
  auto push = [&](const Candidate& c, CandidateSource source) {
    if (!seen.insert(c.skill_id).second) return;
    Candidate copy = c;
    copy.source = source;
    out.items.push_back(std::move(copy));
  };
  for (const auto& c : model.items) push(c, CandidateSource::Model);
  for (const auto& c : rule.items) push(c, CandidateSource::Rule);
  if (k_max > 0 && out.items.size() > k_max) out.items.resize(k_max);
  return out;
}

// ---------------------------------------------------------------- bins

int bin_score(double score, const BinEdges& edges) {
  if (score < edges[0]) return 0;
  if (score < edges[1]) return 1;
  return 2;
}

BinEdges fit_tertile_edges(std::vector<double> scores) {
  if (scores.empty()) return {0.0, 0.0};
  std::sort(scores.begin(), scores.end());
  const std::size_t n = scores.size();
  return {scores[n / 3], scores[(2 * n) / 3]};
}

SourceBinEdges fit_bin_edges(const std::vector<RerankExample>& examples) {
  std::vector<double> rule, model;
  for (const auto& e : examples)
    for (const auto& c : e.candidates.items)
      (c.source == CandidateSource::Rule ? rule : model).push_back(c.score);
  return {fit_tertile_edges(std::move(rule)), fit_tertile_edges(std::move(model))};
}

// ---------------------------------------------------------------- examples

std::optional<std::size_t> RerankExample::observed_position() const {
  for (std::size_t i = 0; i < sources.size(); ++i)
    if (sources[i] == LabelSource::Observed) return i;
  return std::nullopt;
}

std::size_t RerankExample::positives() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](double y) { return y >= 0.5; }));
}

CombinedCandidates shortlist(std::string_view text, const SLModel* sl, const InvertedIndex& index,
                             const CandidateConfig& config) {
  CandidateList model;
  if (sl) model = sl->retrieve(text, config.k1);
  return combine(model, retrieve(index, text, config.k2), config.k_max);
}

std::vector<RerankExample> make_examples(const std::vector<LoggedInteraction>& interactions,
                                         const SLModel* sl, const InvertedIndex& index,
                                         const CandidateConfig& config, ExampleStats* stats) {
  ExampleStats s;
  std::vector<RerankExample> out;
  for (const auto& x : interactions) {
    ++s.interactions;
    if (!x.has_feedback()) continue;
    RerankExample e;
    e.candidates = shortlist(x.utterance.text, sl, index, config);
    if (e.candidates.empty()) {
      ++s.empty_lists;
      continue;
    }
    e.utterance_id = x.utterance.utterance_id;
    e.text = x.utterance.text;
    e.logged_skill = x.suggested_skill;
    e.logged_accepted = x.accepted;
    e.labels.assign(e.candidates.size(), 0.0);
    e.sources.assign(e.candidates.size(), LabelSource::Unobserved);
    if (auto pos = e.candidates.position(*x.suggested_skill)) {
      e.labels[*pos] = static_cast<double>(*x.accepted);
      e.sources[*pos] = LabelSource::Observed;
    } else {
      ++s.missing_observed;
    }
    out.push_back(std::move(e));
    ++s.examples;
  }
  if (stats) *stats = s;
  return out;
}

namespace {

const char* source_name(LabelSource s) {
  switch (s) {
    case LabelSource::Observed:
      return "observed";
    case LabelSource::Imputed:
      return "imputed";
    default:
      return "unobserved";
  }
}

LabelSource parse_label_source(const std::string& s) {
  if (s == "observed") return LabelSource::Observed;
  if (s == "imputed") return LabelSource::Imputed;
  if (s == "unobserved") return LabelSource::Unobserved;
  throw InvalidArgument("unknown label source '" + s + "'");
}

}  // namespace

void save_examples(const std::vector<RerankExample>& examples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& e : examples) {
    nlohmann::json cands = nlohmann::json::array(), srcs = nlohmann::json::array();
    for (const auto& c : e.candidates.items)
      cands.push_back({{"skill_id", c.skill_id}, {"source", to_string(c.source)}, {"score", c.score}});
    for (auto s : e.sources) srcs.push_back(source_name(s));
    nlohmann::json j{{"utterance_id", e.utterance_id},
                     {"text", e.text},
                     {"candidates", cands},
                     {"k1", e.candidates.k1},
                     {"k2", e.candidates.k2},
                     {"labels", e.labels},
                     {"label_sources", srcs},
                     {"logged_skill", e.logged_skill ? nlohmann::json(*e.logged_skill) : nlohmann::json(nullptr)},
                     {"logged_accepted", e.logged_accepted ? nlohmann::json(*e.logged_accepted) : nlohmann::json(nullptr)}};
    out << j.dump() << '\n';
  }
}

std::vector<RerankExample> load_examples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<RerankExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RerankExample e;
      e.utterance_id = j.at("utterance_id");
      e.text = j.at("text");
      for (const auto& c : j.at("candidates"))
        e.candidates.items.push_back({c.at("skill_id"), c.at("score"), parse_source(c.at("source")), -1});
      e.candidates.k1 = j.value("k1", std::size_t{0});
      e.candidates.k2 = j.value("k2", std::size_t{0});
      e.labels = j.at("labels").get<std::vector<double>>();
      for (const auto& s : j.at("label_sources")) e.sources.push_back(parse_label_source(s));
      if (!j.at("logged_skill").is_null()) e.logged_skill = j["logged_skill"].get<std::string>();
      if (!j.at("logged_accepted").is_null()) e.logged_accepted = j["logged_accepted"].get<int>();
      if (e.labels.size() != e.candidates.size() || e.sources.size() != e.candidates.size())
        throw ValidationError("label count differs from candidate count");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(path.string(), lineno, ex.what());
    } catch (const ValidationError& ex) {
      throw ParseError(path.string(), lineno, ex.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------- config

const char* to_string(RerankMode mode) { return mode == RerankMode::Pointwise ? "pointwise" : "listwise"; }

RerankMode parse_mode(const std::string& text) {
  if (text == "pointwise") return RerankMode::Pointwise;
  if (text == "listwise") return RerankMode::Listwise;
  throw InvalidArgument("unknown reranker mode '" + text + "' (expected pointwise|listwise)");
}

const std::vector<std::string>& FeatureMask::names() {
  static const std::vector<std::string> n{"skill_id", "skill_name", "score_bin", "category", "popularity", "flag"};
  return n;
}

FeatureMask FeatureMask::ablating(const std::string& csv) {
  FeatureMask m;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "skill_id") m.skill_id = false;
    else if (item == "skill_name") m.skill_name = false;
    else if (item == "score_bin") m.score_bin = false;
    else if (item == "category") m.category = false;
    else if (item == "popularity") m.popularity = false;
    else if (item == "flag") m.flag = false;
    else throw InvalidArgument("unknown reranker feature '" + item + "'");
  }
  return m;
}

std::string FeatureMask::ablated_csv() const {
  const bool on[] = {skill_id, skill_name, score_bin, category, popularity, flag};
  std::string out;
  for (std::size_t i = 0; i < names().size(); ++i)
    if (!on[i]) out += (out.empty() ? "" : ",") + names()[i];
  return out;
}

void RrConfig::validate() const {
  train.validate();
  for (int d : {text_dim, utt_dim, id_dim, bin_dim, category_dim, popularity_dim, flag_dim, fused_dim, rnn_hidden})
    if (d < 1) throw InvalidArgument("reranker dimensions must be positive");
  if (utt_dim != fused_dim) throw InvalidArgument("reranker utt_dim must equal fused_dim");
  if (mode == RerankMode::Listwise && 2 * rnn_hidden != fused_dim)
    throw InvalidArgument("reranker 2 * rnn_hidden must equal fused_dim");
}

SkillFeatureTable SkillFeatureTable::from_catalog(const Catalog& catalog) {
  SkillFeatureTable t;
  t.categories = catalog.categories();
  for (const auto& s : catalog) {
    t.skill_ids.push_back(s.skill_id);
    t.names.push_back(s.name);
    const auto it = std::lower_bound(t.categories.begin(), t.categories.end(), s.category);
    t.category_of.push_back(static_cast<int>(it - t.categories.begin()));
    t.popularity.push_back(s.popularity);
  }
  return t;
}

// ---------------------------------------------------------------- model

struct RrBatchCache {
  std::vector<const nk::SparseFeatures*> utt_features;
  std::vector<nk::SparseFeatures> owned_features;
  Mat utt_encoded;  // B x E
  Mat utt;          // B x U, post relu
  // Distinct skills referenced by the batch.
  std::vector<int> uniq_id_row, uniq_table_row;
  std::vector<int> cand_uniq, cand_bin, cand_flag, cand_example;
  std::vector<Eigen::Index> offsets;  // B + 1
  Mat fusion_in;  // R x Din
  Mat fused;      // R x F, post relu
  std::vector<nk::BiGruCache> rnn;
  Mat context;    // R x F
  Mat score_in;   // R x 3F
  nk::MlpCache mlp;
};

RRModel::RRModel(RrConfig config, SkillFeatureTable skills, std::vector<std::string> id_vocab,
                 SourceBinEdges edges)
    : config_(std::move(config)), skills_(std::move(skills)), id_vocab_(std::move(id_vocab)), edges_(edges) {
  config_.validate();
  for (std::size_t i = 0; i < id_vocab_.size(); ++i)
    if (!id_lookup_.emplace(id_vocab_[i], static_cast<int>(i)).second)
      throw InvalidArgument("duplicate skill in reranker id vocabulary: " + id_vocab_[i]);
  for (std::size_t i = 0; i < skills_.skill_ids.size(); ++i) {
    table_lookup_.emplace(skills_.skill_ids[i], static_cast<int>(i));
    name_features_.push_back(nk::featurize(skills_.names[i], config_.featurizer));
  }
  build(config_.train.seed);
}

int RRModel::fusion_input_dim() const {
  return config_.id_dim + config_.text_dim + config_.bin_dim + config_.category_dim +
         config_.popularity_dim + config_.flag_dim;
}

void RRModel::build(std::uint64_t seed) {
  Rng rng(seed);
  const auto& c = config_;
  encoder_ = params_.add("encoder.embedding",
                         nk::normal_fill(static_cast<Eigen::Index>(c.featurizer.dim()), c.text_dim, 0.05, rng), true);
  utt_dense_ = nk::make_dense(params_, "utterance.dense", c.text_dim, c.utt_dim, rng);
  const auto ids = static_cast<Eigen::Index>(id_vocab_.size()) + 1;  // last row is UNK
  id_table_ = params_.add("feature.skill_id", nk::normal_fill(ids, c.id_dim, 0.05, rng));
  bin_table_ = params_.add("feature.score_bin", nk::normal_fill(3, c.bin_dim, 0.05, rng));
  category_table_ = params_.add(
      "feature.category",
      nk::normal_fill(static_cast<Eigen::Index>(skills_.categories.size()) + 1, c.category_dim, 0.05, rng));
  popularity_table_ = params_.add("feature.popularity", nk::normal_fill(2, c.popularity_dim, 0.05, rng));
  flag_table_ = params_.add("feature.flag", nk::normal_fill(2, c.flag_dim, 0.05, rng));
  fusion_ = nk::make_dense(params_, "fusion", fusion_input_dim(), c.fused_dim, rng);
  if (c.mode == RerankMode::Listwise) rnn_ = nk::make_bigru(params_, "context", c.fused_dim, c.rnn_hidden, rng);
  std::vector<int> sizes = c.score_hidden;
  sizes.push_back(1);
  scorer_ = nk::make_mlp(params_, "scorer", 3 * c.fused_dim, sizes, nk::Activation::Relu, false, c.train.dropout, rng);
}

RRModel::SkillRef RRModel::resolve(const std::string& skill_id) const {
  SkillRef r{static_cast<int>(id_vocab_.size()), -1};
  if (auto it = id_lookup_.find(skill_id); it != id_lookup_.end()) r.id_row = it->second;
  if (auto it = table_lookup_.find(skill_id); it != table_lookup_.end()) r.table_row = it->second;
  return r;
}

Vec RRModel::forward_batch(const std::vector<const RerankExample*>& batch, bool train, Rng* rng,
                           RrBatchCache* cache_out) const {
  RrBatchCache local;
  RrBatchCache& k = cache_out ? *cache_out : local;
  k = RrBatchCache{};
  const auto& c = config_;
  const auto& f = c.features;
  const auto B = static_cast<Eigen::Index>(batch.size());
  const Mat& enc = params_.value(encoder_);

  // Utterance tower.
  k.owned_features.reserve(batch.size());
  for (const auto* e : batch) {
    if (e->candidates.empty()) throw InvalidArgument("rr_forward: empty candidate list");
    k.owned_features.push_back(nk::featurize(e->text, c.featurizer));
  }
  k.utt_encoded.resize(B, c.text_dim);
  for (Eigen::Index b = 0; b < B; ++b)
    k.utt_encoded.row(b) = nk::embed_bag_forward(enc, k.owned_features[static_cast<std::size_t>(b)]);
  k.utt = nk::dense_forward(params_, utt_dense_, k.utt_encoded).cwiseMax(0.0);

  // Candidate rows.
  k.offsets.assign(1, 0);
  std::unordered_map<std::string, int> uniq;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (const auto& cand : batch[b]->candidates.items) {
      auto [it, fresh] = uniq.emplace(cand.skill_id, static_cast<int>(k.uniq_id_row.size()));
      if (fresh) {
        const SkillRef ref = resolve(cand.skill_id);
        k.uniq_id_row.push_back(ref.id_row);
        k.uniq_table_row.push_back(ref.table_row);
      }
      k.cand_uniq.push_back(it->second);
      k.cand_bin.push_back(bin_score(cand.score, edges_.of(cand.source)));
      k.cand_flag.push_back(cand.source == CandidateSource::Model ? 1 : 0);
      k.cand_example.push_back(static_cast<int>(b));
    }
    k.offsets.push_back(static_cast<Eigen::Index>(k.cand_uniq.size()));
  }
  const auto R = static_cast<Eigen::Index>(k.cand_uniq.size());
  const auto Q = static_cast<Eigen::Index>(k.uniq_id_row.size());

  // Static skill block per distinct skill: [id | name | (bin) | category | popularity | (flag)].
  const Eigen::Index o_id = 0, o_name = c.id_dim, o_bin = o_name + c.text_dim, o_cat = o_bin + c.bin_dim,
                     o_pop = o_cat + c.category_dim, o_flag = o_pop + c.popularity_dim;
  Mat uniq_rows = Mat::Zero(Q, fusion_input_dim());
  const Mat& ids = params_.value(id_table_);
  const Mat& cats = params_.value(category_table_);
  const Mat& pops = params_.value(popularity_table_);
  const auto unk_cat = static_cast<Eigen::Index>(skills_.categories.size());
  for (Eigen::Index q = 0; q < Q; ++q) {
    const int row = k.uniq_table_row[static_cast<std::size_t>(q)];
    if (f.skill_id) uniq_rows.row(q).segment(o_id, c.id_dim) = ids.row(k.uniq_id_row[static_cast<std::size_t>(q)]);
    if (row >= 0) {
      const auto r = static_cast<std::size_t>(row);
      if (f.skill_name) uniq_rows.row(q).segment(o_name, c.text_dim) = nk::embed_bag_forward(enc, name_features_[r]);
      if (f.category) uniq_rows.row(q).segment(o_cat, c.category_dim) = cats.row(skills_.category_of[r]);
      if (f.popularity) uniq_rows.row(q).segment(o_pop, c.popularity_dim) = pops.row(skills_.popularity[r]);
    } else {
      if (f.category) uniq_rows.row(q).segment(o_cat, c.category_dim) = cats.row(unk_cat);
      if (f.popularity) uniq_rows.row(q).segment(o_pop, c.popularity_dim) = pops.row(0);
    }
  }
  const Mat& bins = params_.value(bin_table_);
  const Mat& flags = params_.value(flag_table_);
  k.fusion_in.resize(R, fusion_input_dim());
  for (Eigen::Index i = 0; i < R; ++i) {
    const auto s = static_cast<std::size_t>(i);
    k.fusion_in.row(i) = uniq_rows.row(k.cand_uniq[s]);
    if (f.score_bin) k.fusion_in.row(i).segment(o_bin, c.bin_dim) = bins.row(k.cand_bin[s]);
    if (f.flag) k.fusion_in.row(i).segment(o_flag, c.flag_dim) = flags.row(k.cand_flag[s]);
  }
  k.fused = nk::dense_forward(params_, fusion_, k.fusion_in).cwiseMax(0.0);

  // Context layer.
  if (c.mode == RerankMode::Listwise) {
    k.context.resize(R, c.fused_dim);
    k.rnn.resize(batch.size());
    for (Eigen::Index b = 0; b < B; ++b) {
      const Eigen::Index lo = k.offsets[static_cast<std::size_t>(b)];
      const Eigen::Index len = k.offsets[static_cast<std::size_t>(b) + 1] - lo;
      k.context.middleRows(lo, len) =
          nk::bigru_forward(params_, rnn_, k.fused.middleRows(lo, len), &k.rnn[static_cast<std::size_t>(b)]);
    }
  } else {
    k.context = k.fused;
  }

  // Scorer over [u ; c ; u * c].
  const Eigen::Index F = c.fused_dim;
  k.score_in.resize(R, 3 * F);
  for (Eigen::Index i = 0; i < R; ++i) {
    const auto u = k.utt.row(k.cand_example[static_cast<std::size_t>(i)]);
    k.score_in.row(i).segment(0, F) = u;
    k.score_in.row(i).segment(F, F) = k.context.row(i);
    k.score_in.row(i).segment(2 * F, F) = u.cwiseProduct(k.context.row(i));
  }
  Mat logits = nk::mlp_forward(params_, scorer_, k.score_in, train, rng, &k.mlp);
  return logits.col(0);
}

void RRModel::backward_batch(const RrBatchCache& k, const Vec& d_logits, nk::Gradients& grads) const {
  const auto& c = config_;
  const auto& f = c.features;
  const Eigen::Index F = c.fused_dim;
  const auto R = static_cast<Eigen::Index>(k.cand_uniq.size());
  Mat d_out = d_logits;
  Mat d_in = nk::mlp_backward(params_, scorer_, k.mlp, d_out, grads);

  Mat d_utt = Mat::Zero(k.utt.rows(), k.utt.cols());
  Mat d_ctx(R, F);
  for (Eigen::Index i = 0; i < R; ++i) {
    const int b = k.cand_example[static_cast<std::size_t>(i)];
    const auto prod = d_in.row(i).segment(2 * F, F);
    d_utt.row(b) += d_in.row(i).segment(0, F) + prod.cwiseProduct(k.context.row(i));
    d_ctx.row(i) = d_in.row(i).segment(F, F) + prod.cwiseProduct(k.utt.row(b));
  }

  Mat d_fused;
  if (c.mode == RerankMode::Listwise) {
    d_fused.resize(R, F);
    for (std::size_t b = 0; b + 1 < k.offsets.size(); ++b) {
      const Eigen::Index lo = k.offsets[b];
      const Eigen::Index len = k.offsets[b + 1] - lo;
      d_fused.middleRows(lo, len) = nk::bigru_backward(params_, rnn_, k.rnn[b], d_ctx.middleRows(lo, len), grads);
    }
  } else {
    d_fused = std::move(d_ctx);
  }
  d_fused.array() *= (k.fused.array() > 0.0).cast<double>();
  const Mat d_fin = nk::dense_backward(params_, fusion_, k.fusion_in, d_fused, grads);

  const Eigen::Index o_id = 0, o_name = c.id_dim, o_bin = o_name + c.text_dim, o_cat = o_bin + c.bin_dim,
                     o_pop = o_cat + c.category_dim, o_flag = o_pop + c.popularity_dim;
  const auto Q = static_cast<Eigen::Index>(k.uniq_id_row.size());
  Mat d_uniq = Mat::Zero(Q, d_fin.cols());
  for (Eigen::Index i = 0; i < R; ++i) {
    const auto s = static_cast<std::size_t>(i);
    d_uniq.row(k.cand_uniq[s]) += d_fin.row(i);
    if (f.score_bin) grads[bin_table_].row(k.cand_bin[s]) += d_fin.row(i).segment(o_bin, c.bin_dim);
    if (f.flag) grads[flag_table_].row(k.cand_flag[s]) += d_fin.row(i).segment(o_flag, c.flag_dim);
  }
  const auto unk_cat = static_cast<Eigen::Index>(skills_.categories.size());
  for (Eigen::Index q = 0; q < Q; ++q) {
    const int row = k.uniq_table_row[static_cast<std::size_t>(q)];
    if (f.skill_id) grads[id_table_].row(k.uniq_id_row[static_cast<std::size_t>(q)]) += d_uniq.row(q).segment(o_id, c.id_dim);
    if (row >= 0) {
      const auto r = static_cast<std::size_t>(row);
      if (f.skill_name) nk::embed_bag_backward(encoder_, name_features_[r], d_uniq.row(q).segment(o_name, c.text_dim), grads);
      if (f.category) grads[category_table_].row(skills_.category_of[r]) += d_uniq.row(q).segment(o_cat, c.category_dim);
      if (f.popularity) grads[popularity_table_].row(skills_.popularity[r]) += d_uniq.row(q).segment(o_pop, c.popularity_dim);
    } else {
      if (f.category) grads[category_table_].row(unk_cat) += d_uniq.row(q).segment(o_cat, c.category_dim);
      if (f.popularity) grads[popularity_table_].row(0) += d_uniq.row(q).segment(o_pop, c.popularity_dim);
    }
  }

  d_utt.array() *= (k.utt.array() > 0.0).cast<double>();
  const Mat d_enc = nk::dense_backward(params_, utt_dense_, k.utt_encoded, d_utt, grads);
  for (Eigen::Index b = 0; b < d_enc.rows(); ++b)
    nk::embed_bag_backward(encoder_, k.owned_features[static_cast<std::size_t>(b)], d_enc.row(b), grads);
}

std::vector<double> RRModel::score(std::string_view text, const CombinedCandidates& candidates) const {
  RerankExample e;
  e.text = std::string(text);
  e.candidates = candidates;
  const Vec logits = forward_batch({&e}, false, nullptr, nullptr);
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index i = 0; i < logits.size(); ++i) out[static_cast<std::size_t>(i)] = nk::sigmoid(logits[i]);
  return out;
}

namespace {

nlohmann::json mask_json(const FeatureMask& m) {
  return {{"skill_id", m.skill_id}, {"skill_name", m.skill_name}, {"score_bin", m.score_bin},
          {"category", m.category}, {"popularity", m.popularity}, {"flag", m.flag}};
}

FeatureMask mask_from_json(const nlohmann::json& j) {
  FeatureMask m;
  m.skill_id = j.at("skill_id");
  m.skill_name = j.at("skill_name");
  m.score_bin = j.at("score_bin");
  m.category = j.at("category");
  m.popularity = j.at("popularity");
  m.flag = j.at("flag");
  return m;
}

}  // namespace

void RRModel::save(const std::filesystem::path& path) const {
  const auto& c = config_;
  nlohmann::json j{
      {"kind", "reranker"},
      {"version", 1},
      {"mode", to_string(c.mode)},
      {"featurizer", c.featurizer},
      {"dims",
       {{"text", c.text_dim}, {"utterance", c.utt_dim}, {"skill_id", c.id_dim}, {"score_bin", c.bin_dim},
        {"category", c.category_dim}, {"popularity", c.popularity_dim}, {"flag", c.flag_dim},
        {"fused", c.fused_dim}, {"rnn_hidden", c.rnn_hidden}}},
      {"score_hidden", c.score_hidden},
      {"features", mask_json(c.features)},
      {"train", c.train},
      {"bin_edges", {{"rule", edges_.rule}, {"model", edges_.model}}},
      {"id_vocab", id_vocab_},
      {"skills",
       {{"skill_ids", skills_.skill_ids}, {"names", skills_.names}, {"categories", skills_.categories},
        {"category_of", skills_.category_of}, {"popularity", skills_.popularity}}}};
  nk::save_model(path, params_, j);
}

RRModel RRModel::load(const std::filesystem::path& path) {
  const auto j = nk::load_sidecar(path);
  if (j.value("kind", "") != "reranker") throw Error(path.string() + ": not a reranker model");
  RrConfig c;
  c.mode = parse_mode(j.at("mode"));
  c.featurizer = j.at("featurizer").get<nk::FeaturizerConfig>();
  const auto& d = j.at("dims");
  c.text_dim = d.at("text");
  c.utt_dim = d.at("utterance");
  c.id_dim = d.at("skill_id");
  c.bin_dim = d.at("score_bin");
  c.category_dim = d.at("category");
  c.popularity_dim = d.at("popularity");
  c.flag_dim = d.at("flag");
  c.fused_dim = d.at("fused");
  c.rnn_hidden = d.at("rnn_hidden");
  c.score_hidden = j.at("score_hidden").get<std::vector<int>>();
  c.features = mask_from_json(j.at("features"));
  c.train = j.at("train").get<nk::TrainConfig>();
  SourceBinEdges edges{j.at("bin_edges").at("rule").get<BinEdges>(), j.at("bin_edges").at("model").get<BinEdges>()};
  const auto& s = j.at("skills");
  SkillFeatureTable table{s.at("skill_ids"), s.at("names"), s.at("categories"), s.at("category_of"), s.at("popularity")};
  RRModel model(c, std::move(table), j.at("id_vocab").get<std::vector<std::string>>(), edges);
  nk::load_tensors(path, model.params_);
  return model;
}

// ---------------------------------------------------------------- losses and training

double rr_loss(const std::vector<double>& scores, const std::vector<double>& labels, const std::vector<int>& mask) {
  if (scores.size() != labels.size() || scores.size() != mask.size())
    throw InvalidArgument("rr_loss: scores, labels and mask must have equal length");
  Vec s(static_cast<Eigen::Index>(scores.size())), y(s.size()), m(s.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    s[k] = scores[i];
    y[k] = labels[i];
    m[k] = mask[i] ? 1.0 : 0.0;
  }
  return nk::binary_cross_entropy(s, y, m);
}

double rr_batch_loss(const RRModel& model, const std::vector<const RerankExample*>& batch, nk::Gradients* grads,
                     bool train, Rng* rng, bool observed_only) {
  if (batch.empty()) return 0.0;
  RrBatchCache cache;
  const Vec logits = model.forward_batch(batch, train, rng, grads ? &cache : nullptr);
  Vec d = Vec::Zero(logits.size());
  double total = 0.0;
  Eigen::Index row = 0;
  for (const auto* e : batch) {
    if (e->labels.size() != e->candidates.size() || e->sources.size() != e->candidates.size())
      throw InvalidArgument("rr_batch_loss: label vector length differs from candidate count");
    for (std::size_t i = 0; i < e->labels.size(); ++i, ++row) {
      if (observed_only && e->sources[i] != LabelSource::Observed) continue;
      const double o = logits[row];
      const double y = e->labels[i];
      total += nk::softplus(o) - y * o;
      d[row] = nk::sigmoid(o) - y;
    }
  }
  if (grads) model.backward_batch(cache, d, *grads);
  return total;
}

double rr_observed_loss(const RRModel& model, const std::vector<RerankExample>& examples) {
  double total = 0.0;
  std::size_t count = 0;
  std::vector<const RerankExample*> batch;
  auto flush = [&] {
    total += rr_batch_loss(model, batch, nullptr, false, nullptr, true);
    batch.clear();
  };
  for (const auto& e : examples) {
    if (!e.observed_position()) continue;
    ++count;
    batch.push_back(&e);
    if (batch.size() == 128) flush();
  }
  flush();
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

std::vector<std::string> build_rr_id_vocab(const std::vector<RerankExample>& examples) {
  std::set<std::string> ids;
  for (const auto& e : examples)
    for (const auto& c : e.candidates.items) ids.insert(c.skill_id);
  return {ids.begin(), ids.end()};
}

RRModel train_rr(const std::vector<RerankExample>& train, const std::vector<RerankExample>& validation,
                 const Catalog& catalog, const RrConfig& config, const RRModel* warm_start,
                 nk::TrainReport* report) {
  if (train.empty()) throw InvalidArgument("train_rr: empty training set");
  config.validate();
  RRModel model = warm_start ? *warm_start
                             : RRModel(config, SkillFeatureTable::from_catalog(catalog), build_rr_id_vocab(train),
                                       fit_bin_edges(train));
  auto batch_loss = [&](std::span<const std::size_t> idx, nk::Gradients& g, Rng& rng) {
    std::vector<const RerankExample*> batch;
    batch.reserve(idx.size());
    for (auto i : idx) batch.push_back(&train[i]);
    return rr_batch_loss(model, batch, &g, true, &rng, false);
  };
  nk::ValidationLoss val_loss;
  const bool has_val = std::any_of(validation.begin(), validation.end(),
                                   [](const RerankExample& e) { return e.observed_position().has_value(); });
  if (has_val) val_loss = [&] { return rr_observed_loss(model, validation); };
  auto r = nk::fit(model.parameters(), train.size(), batch_loss, val_loss, config.train);
  if (report) *report = std::move(r);
  return model;
}

std::vector<std::vector<double>> score_examples(const RRModel& model, const std::vector<RerankExample>& examples) {
  std::vector<std::vector<double>> out;
  out.reserve(examples.size());
  std::vector<const RerankExample*> batch;
  auto flush = [&] {
    if (batch.empty()) return;
    const Vec logits = model.forward_batch(batch, false, nullptr, nullptr);
    Eigen::Index row = 0;
    for (const auto* e : batch) {
      std::vector<double> s(e->candidates.size());
      for (auto& v : s) v = nk::sigmoid(logits[row++]);
      out.push_back(std::move(s));
    }
    batch.clear();
  };
  for (const auto& e : examples) {
    batch.push_back(&e);
    if (batch.size() == 128) flush();
  }
  flush();
  return out;
}

std::optional<Suggestion> suggest(const CombinedCandidates& candidates, const std::vector<double>& scores,
                                  double cutoff) {
  if (scores.size() != candidates.size()) throw InvalidArgument("suggest: one score per candidate required");
  if (!std::isfinite(cutoff)) throw InvalidArgument("suggest: cutoff must be finite");
  if (scores.empty()) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  if (!(scores[best] > cutoff)) return std::nullopt;
  return Suggestion{candidates.items[best].skill_id, scores[best]};
}

double cutoff_for_rate(const std::vector<double>& top_scores, double rate) {
  if (top_scores.empty()) throw InvalidArgument("cutoff_for_rate: no scores");
  if (!(rate > 0.0 && rate <= 1.0)) throw InvalidArgument("cutoff_for_rate: rate must be in (0, 1]");
  std::vector<double> s = top_scores;
  std::sort(s.begin(), s.end(), std::greater<>());
  const auto n = static_cast<double>(s.size());
  auto need = static_cast<std::size_t>(std::ceil(rate * n - 1e-9));
  need = std::clamp<std::size_t>(need, 1, s.size());
  return std::nextafter(s[need - 1], -std::numeric_limits<double>::infinity());
}

}  // namespace skillrec
