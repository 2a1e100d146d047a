#include "skillrec/relabel.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "skillrec/error.hpp"
#include "skillrec/rng.hpp"

namespace skillrec {

// ---------------------------------------------------------------- embeddings

const std::size_t* UtteranceEmbeddings::find(const std::string& id) const {
  auto it = index.find(id);
  return it == index.end() ? nullptr : &it->second;
}

UtteranceEmbeddings utterance_embeddings(const std::vector<Utterance>& utterances, const EmbedConfig& config) {
  if (config.dim < 1) throw InvalidArgument("utterance_embeddings: dim must be >= 1");
  UtteranceEmbeddings out;
  const auto n = utterances.size();
  std::vector<nk::SparseFeatures> features;
  features.reserve(n);
  std::unordered_map<std::uint32_t, std::size_t> df;
  for (const auto& u : utterances) {
    features.push_back(nk::featurize(u.text, config.featurizer));
    for (const auto& e : features.back().entries) ++df[e.index];
  }
  std::unordered_map<std::uint32_t, std::vector<float>> rows;
  const float scale = 1.0f / std::sqrt(static_cast<float>(config.dim));
  auto projection = [&](std::uint32_t index) -> const std::vector<float>& {
    auto [it, fresh] = rows.try_emplace(index);
    if (fresh) {
      Rng rng(Rng::splitmix(config.seed ^ Rng::splitmix(index)));
      it->second.resize(static_cast<std::size_t>(config.dim));
      for (auto& v : it->second) v = static_cast<float>(rng.normal()) * scale;
    }
    return it->second;
  };

  out.vectors = Eigen::MatrixXf::Zero(static_cast<Eigen::Index>(n), config.dim);
  const double docs = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.ids.push_back(utterances[i].utterance_id);
    if (!out.index.emplace(utterances[i].utterance_id, i).second)
      throw InvalidArgument("utterance_embeddings: duplicate utterance id " + utterances[i].utterance_id);
    auto row = out.vectors.row(static_cast<Eigen::Index>(i));
    for (const auto& e : features[i].entries) {
      const double idf = std::log((1.0 + docs) / (1.0 + static_cast<double>(df[e.index]))) + 1.0;
      const auto w = static_cast<float>(e.weight * idf);
      const auto& p = projection(e.index);
      for (int k = 0; k < config.dim; ++k) row[k] += w * p[static_cast<std::size_t>(k)];
    }
    const float norm = row.norm();
    if (norm > 0.0f) row /= norm;
  }
  return out;
}

// ---------------------------------------------------------------- neighbors

std::vector<std::vector<Neighbor>> nearest_neighbors(const UtteranceEmbeddings& queries,
                                                     const UtteranceEmbeddings& pool, std::size_t m, double r) {
  const auto nq = static_cast<Eigen::Index>(queries.ids.size());
  const auto np = static_cast<Eigen::Index>(pool.ids.size());
  std::vector<std::vector<Neighbor>> out(static_cast<std::size_t>(nq));
  if (m == 0 || np == 0) return out;
  constexpr Eigen::Index kBlock = 256;
  Eigen::MatrixXf sims;
  std::vector<Neighbor> cand;
  for (Eigen::Index lo = 0; lo < nq; lo += kBlock) {
    const Eigen::Index len = std::min(kBlock, nq - lo);
    sims.noalias() = queries.vectors.middleRows(lo, len) * pool.vectors.transpose();
    for (Eigen::Index q = 0; q < len; ++q) {
      const auto& qid = queries.ids[static_cast<std::size_t>(lo + q)];
      cand.clear();
      for (Eigen::Index p = 0; p < np; ++p) {
        const float s = sims(q, p);
        if (s >= r && pool.ids[static_cast<std::size_t>(p)] != qid) cand.push_back({static_cast<std::size_t>(p), s});
      }
      auto better = [](const Neighbor& a, const Neighbor& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.index < b.index;
      };
      const std::size_t keep = std::min(m, cand.size());
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), better);
      cand.resize(keep);
      out[static_cast<std::size_t>(lo + q)] = cand;
    }
  }
  return out;
}

NeighborAggregate aggregate_neighbors(const std::vector<Neighbor>& neighbors,
                                      const std::vector<LoggedInteraction>& pool) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& nb : neighbors) {
    const auto& x = pool.at(nb.index);
    if (!x.has_feedback()) continue;
    auto& slot = acc[*x.suggested_skill];
    slot.first += *x.accepted;
    ++slot.second;
  }
  NeighborAggregate out;
  for (const auto& [skill, s] : acc) out.entries.push_back({skill, s.first / static_cast<double>(s.second), s.second});
  return out;
}

std::vector<NeighborAggregate::Entry> filter_aggregate(const NeighborAggregate& aggregate, std::size_t n_c,
                                                       double p_c) {
  std::vector<NeighborAggregate::Entry> out;
  for (const auto& e : aggregate.entries)
    if (e.n >= n_c && e.p >= p_c) out.push_back(e);
  return out;
}

// ---------------------------------------------------------------- collaborative

void CollabConfig::validate() const {
  if (!(r > -1.0)) throw InvalidArgument("collaborative relabel: r must be > -1");
  if (n_c < 1) throw InvalidArgument("collaborative relabel: n_c must be >= 1");
  if (p_c < 0.0 || p_c > 1.0) throw InvalidArgument("collaborative relabel: p_c must be in [0, 1]");
}

AggregateMap neighbor_aggregates(const std::vector<LoggedInteraction>& pool, const EmbedConfig& embed,
                                 const CollabConfig& config) {
  config.validate();
  std::vector<LoggedInteraction> labeled;
  std::vector<Utterance> utts;
  for (const auto& x : pool)
    if (x.has_feedback()) {
      labeled.push_back(x);
      utts.push_back(x.utterance);
    }
  const auto emb = utterance_embeddings(utts, embed);
  const auto nbrs = nearest_neighbors(emb, emb, config.m, config.r);
  AggregateMap out;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    out.emplace(labeled[i].utterance.utterance_id, aggregate_neighbors(nbrs[i], labeled));
  return out;
}

RelabelReport collaborative_relabel(std::vector<RerankExample>& examples, const AggregateMap& aggregates,
                                    const CollabConfig& config) {
  config.validate();
  Rng rng(config.seed);
  RelabelReport report;
  for (auto& e : examples) {
    auto it = aggregates.find(e.utterance_id);
    if (it == aggregates.end()) continue;
    bool touched = false;
    for (const auto& q : filter_aggregate(it->second, config.n_c, config.p_c)) {
      const auto pos = e.candidates.position(q.skill_id);
      if (!pos || e.sources[*pos] != LabelSource::Unobserved) continue;
      const double label = config.fractional ? q.p : (rng.uniform() < q.p ? 1.0 : 0.0);
      e.labels[*pos] = label;
      e.sources[*pos] = LabelSource::Imputed;
      touched = true;
      if (label > 0.0) ++report.added_positives;
      else ++report.imputed_negatives;
    }
    if (touched) ++report.targets_touched;
  }
  return report;
}

// ---------------------------------------------------------------- self-training

const char* to_string(Schedule s) { return s == Schedule::Adaptive ? "adaptive" : "constant"; }

Schedule parse_schedule(const std::string& text) {
  if (text == "adaptive") return Schedule::Adaptive;
  if (text == "constant") return Schedule::Constant;
  throw InvalidArgument("unknown schedule '" + text + "' (expected adaptive|constant)");
}

void SelfTrainConfig::validate() const {
  if (iterations < 1) throw InvalidArgument("self-training: N must be >= 1");
  if (!(c > 0.0)) throw InvalidArgument("self-training: c must be positive");
  if (epochs_per_iteration < 1) throw InvalidArgument("self-training: epochs per iteration must be >= 1");
}

std::size_t self_train_step(std::vector<RerankExample>& examples, const std::vector<std::vector<double>>& scores,
                            double cutoff) {
  if (scores.size() != examples.size()) throw InvalidArgument("self_train_step: one score list per example");
  std::size_t changed = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto& e = examples[i];
    if (scores[i].size() != e.labels.size()) throw InvalidArgument("self_train_step: score/label length mismatch");
    for (std::size_t j = 0; j < e.labels.size(); ++j) {
      if (e.sources[j] != LabelSource::Unobserved || !(scores[i][j] > cutoff)) continue;
      e.labels[j] = 1.0;
      e.sources[j] = LabelSource::Imputed;
      ++changed;
    }
  }
  return changed;
}

SelfTrainResult self_train_relabel(const std::vector<RerankExample>& train,
                                   const std::vector<RerankExample>& validation, const RRModel& base,
                                   const Catalog& catalog, const SelfTrainConfig& config) {
  config.validate();
  RrConfig rr = base.config();
  rr.train.max_epochs = config.epochs_per_iteration;

  std::vector<RerankExample> current = train;
  RRModel model = base;
  SelfTrainResult best{current, base, 0, {}, {}, {}};
  double best_loss = std::numeric_limits<double>::infinity();
  for (int i = 0; i < config.iterations; ++i) {
    const std::size_t changed = self_train_step(current, score_examples(model, current), config.threshold(i));
    best.added.push_back(changed);
    if (changed == 0 && config.stop_when_unchanged && i > 0) break;
    model = train_rr(current, validation, catalog, rr, &model);
    const double loss = rr_observed_loss(model, validation);
    best.validation_loss.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best.examples = current;
      best.model = model;
      best.i_star = i + 1;
    }
  }
  std::size_t positives = 0, touched = 0;
  for (const auto& e : best.examples) {
    bool t = false;
    for (std::size_t j = 0; j < e.sources.size(); ++j)
      if (e.sources[j] == LabelSource::Imputed) {
        ++positives;
        t = true;
      }
    touched += t ? 1 : 0;
  }
  best.report.added_positives = positives;
  best.report.targets_touched = touched;
  best.report.i_star = best.i_star;
  return best;
}

}  // namespace skillrec
