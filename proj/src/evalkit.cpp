#include "skillrec/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "skillrec/error.hpp"
#include "skillrec/reranker.hpp"

namespace skillrec {

namespace {

void check_ranking_args(const std::vector<std::string>& relevant, std::size_t k) {
  if (k == 0) throw InvalidArgument("ranking metric: K must be >= 1");
  if (relevant.empty()) throw InvalidArgument("ranking metric: empty relevant set");
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double precision_at_k(const std::vector<std::string>& ranked, const std::vector<std::string>& relevant,
                      std::size_t k) {
  check_ranking_args(relevant, k);
  const std::unordered_set<std::string> rel(relevant.begin(), relevant.end());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) hits += rel.count(ranked[i]);
  return static_cast<double>(hits) / static_cast<double>(k);
}

double ndcg_at_k(const std::vector<std::string>& ranked, const std::vector<std::string>& relevant, std::size_t k) {
  check_ranking_args(relevant, k);
  const std::unordered_set<std::string> rel(relevant.begin(), relevant.end());
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
    if (rel.count(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  for (std::size_t i = 0; i < std::min(k, rel.size()); ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / idcg;
}

const char* to_string(LabelMode mode) { return mode == LabelMode::Logged ? "logged" : "oracle"; }

LabelMode parse_label_mode(const std::string& text) {
  if (text == "logged") return LabelMode::Logged;
  if (text == "oracle") return LabelMode::Oracle;
  throw InvalidArgument("unknown label mode '" + text + "' (expected logged|oracle)");
}

EvalContext EvalContext::from_interactions(const std::vector<LoggedInteraction>& interactions,
                                           const RelevanceOracle* oracle) {
  EvalContext c;
  c.oracle = oracle;
  for (const auto& x : interactions) c.logged[x.utterance.utterance_id] = {x.suggested_skill, x.accepted};
  return c;
}

bool EvalContext::correct(LabelMode mode, const std::string& utterance_id, const std::string& skill) const {
  if (mode == LabelMode::Oracle) {
    if (!oracle) throw InvalidArgument("oracle evaluation without an oracle");
    return oracle->is_relevant(utterance_id, skill);
  }
  auto it = logged.find(utterance_id);
  if (it == logged.end()) return false;
  return it->second.skill && *it->second.skill == skill && it->second.accepted && *it->second.accepted == 1;
}

bool EvalContext::opportunity(LabelMode mode, const std::string& utterance_id) const {
  if (mode == LabelMode::Oracle) {
    if (!oracle) throw InvalidArgument("oracle evaluation without an oracle");
    const auto* rel = oracle->find(utterance_id);
    return rel && !rel->empty();
  }
  auto it = logged.find(utterance_id);
  return it != logged.end() && it->second.accepted && *it->second.accepted == 1;
}

Decisions decide(const std::vector<SystemOutput>& outputs, double cutoff) {
  Decisions d;
  d.reserve(outputs.size());
  for (const auto& o : outputs) {
    std::optional<std::string> s;
    if (!o.ranked.empty() && o.top_score > cutoff) s = o.ranked.front();
    d.emplace_back(o.utterance_id, std::move(s));
  }
  return d;
}

DecisionMetrics decision_metrics(const Decisions& decisions, const EvalContext& context, LabelMode mode) {
  DecisionMetrics m;
  m.utterances = decisions.size();
  for (const auto& [id, s] : decisions) {
    const bool opp = context.opportunity(mode, id);
    m.opportunities += opp ? 1 : 0;
    if (!s) continue;
    ++m.suggestions;
    if (context.correct(mode, id, *s)) ++m.correct;
  }
  m.precision = ratio(m.correct, m.suggestions);
  m.recall = ratio(m.correct, m.opportunities).value_or(0.0);
  m.suggestion_rate = ratio(m.suggestions, m.utterances).value_or(0.0);
  if (m.precision) {
    const double p = *m.precision, r = m.recall;
    m.f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return m;
}

std::optional<double> overlap_at_1(const Decisions& system, const EvalContext& context) {
  std::size_t both = 0, agree = 0;
  for (const auto& [id, s] : system) {
    if (!s) continue;
    auto it = context.logged.find(id);
    if (it == context.logged.end() || !it->second.skill) continue;
    ++both;
    agree += *it->second.skill == *s ? 1 : 0;
  }
  return ratio(agree, both);
}

std::vector<CurvePoint> sweep_curves(const std::vector<SystemOutput>& outputs, const EvalContext& context,
                                     LabelMode mode) {
  std::vector<std::size_t> order;
  std::size_t opportunities = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (!std::isfinite(outputs[i].top_score)) throw InvalidArgument("sweep_curves: non-finite score");
    opportunities += context.opportunity(mode, outputs[i].utterance_id) ? 1 : 0;
    if (!outputs[i].ranked.empty()) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return outputs[a].top_score > outputs[b].top_score; });
  std::vector<CurvePoint> curve;
  std::size_t made = 0, correct = 0;
  const auto n = static_cast<double>(outputs.size());
  for (std::size_t i = 0; i < order.size();) {
    const double t = outputs[order[i]].top_score;
    while (i < order.size() && outputs[order[i]].top_score == t) {
      const auto& o = outputs[order[i]];
      ++made;
      correct += context.correct(mode, o.utterance_id, o.ranked.front()) ? 1 : 0;
      ++i;
    }
    curve.push_back({t, static_cast<double>(correct) / static_cast<double>(made),
                     opportunities ? static_cast<double>(correct) / static_cast<double>(opportunities) : 0.0,
                     static_cast<double>(made) / n});
  }
  return curve;
}

double curve_area(const std::vector<CurvePoint>& curve) {
  if (curve.empty()) return 0.0;
  double area = curve.front().recall * curve.front().precision;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].recall - curve[i - 1].recall) * 0.5 * (curve[i].precision + curve[i - 1].precision);
  return area;
}

void write_curve_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "cutoff,precision,recall,suggestion_rate\n";
  out.precision(10);
  for (const auto& p : curve) out << p.cutoff << ',' << p.precision << ',' << p.recall << ',' << p.suggestion_rate << '\n';
}

std::optional<double> MetricsReport::pre_at(double rate) const {
  for (const auto& [r, v] : precision_at_rate)
    if (std::abs(r - rate) < 1e-12) return v;
  return std::nullopt;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::vector<double> top_scores(const std::vector<SystemOutput>& outputs) {
  std::vector<double> s;
  for (const auto& o : outputs) s.push_back(o.ranked.empty() ? -std::numeric_limits<double>::infinity() : o.top_score);
  return s;
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json rates = nlohmann::json::object();
  for (const auto& [r, v] : precision_at_rate) {
    char key[16];
    std::snprintf(key, sizeof key, "%.2f", r);
    rates[key] = opt(v);
  }
  return {{"mode", skillrec::to_string(mode)},
          {"system", system},
          {"config_hash", config_hash},
          {"utterances", utterances},
          {"precision_at_rate", rates},
          {"cutoff", cutoff},
          {"precision", opt(at_cutoff.precision)},
          {"recall", at_cutoff.recall},
          {"f1", opt(at_cutoff.f1)},
          {"suggestion_rate", at_cutoff.suggestion_rate},
          {"suggestions", at_cutoff.suggestions},
          {"correct", at_cutoff.correct},
          {"opportunities", at_cutoff.opportunities},
          {"overlap_at_1", opt(overlap_at_1)},
          {"overlap_at_1_cutoff", opt(overlap_at_cutoff)}};
}

MetricsReport evaluate_outputs(const std::vector<SystemOutput>& outputs, const EvalContext& context, LabelMode mode,
                               double cutoff) {
  MetricsReport r;
  r.mode = mode;
  r.cutoff = cutoff;
  r.utterances = outputs.size();
  if (outputs.empty()) return r;
  const auto scores = top_scores(outputs);
  for (double rate : kReportRates) {
    const auto d = decide(outputs, cutoff_for_rate(scores, rate));
    r.precision_at_rate.emplace_back(rate, decision_metrics(d, context, mode).precision);
    if (rate == 0.50) r.overlap_at_1 = overlap_at_1(d, context);
  }
  const auto d = decide(outputs, cutoff);
  r.at_cutoff = decision_metrics(d, context, mode);
  r.overlap_at_cutoff = overlap_at_1(d, context);
  return r;
}

double ShortlistMetrics::value(const std::vector<std::pair<std::size_t, double>>& v, std::size_t k) const {
  for (const auto& [kk, x] : v)
    if (kk == k) return x;
  throw InvalidArgument("shortlist metric not computed for K=" + std::to_string(k));
}

ShortlistMetrics shortlist_metrics(const std::vector<std::pair<std::string, std::vector<std::string>>>& lists,
                                   const RelevanceOracle& oracle, const std::vector<std::size_t>& ks) {
  ShortlistMetrics m;
  std::vector<double> p(ks.size(), 0.0), g(ks.size(), 0.0);
  for (const auto& [id, ranked] : lists) {
    const auto* rel = oracle.find(id);
    if (!rel || rel->empty()) continue;
    ++m.utterances;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      p[i] += precision_at_k(ranked, *rel, ks[i]);
      g[i] += ndcg_at_k(ranked, *rel, ks[i]);
    }
  }
  const double n = m.utterances ? static_cast<double>(m.utterances) : 1.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    m.precision.emplace_back(ks[i], p[i] / n);
    m.ndcg.emplace_back(ks[i], g[i] / n);
  }
  return m;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InvalidArgument("spearman: length mismatch");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

void save_suggestions(const std::vector<SystemOutput>& outputs, double cutoff, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& o : outputs) {
    const bool suggest = !o.ranked.empty() && o.top_score > cutoff;
    nlohmann::json j{{"utterance_id", o.utterance_id},
                     {"suggested", suggest ? nlohmann::json(o.ranked.front()) : nlohmann::json(nullptr)},
                     {"score", o.top_score},
                     {"top_skill", o.ranked.empty() ? nlohmann::json(nullptr) : nlohmann::json(o.ranked.front())},
                     {"ranked", o.ranked}};
    out << j.dump() << '\n';
  }
}

std::vector<SystemOutput> load_suggestions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<SystemOutput> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SystemOutput o;
      o.utterance_id = j.at("utterance_id").get<std::string>();
      o.top_score = j.at("score").get<double>();
      if (j.contains("ranked") && !j["ranked"].is_null()) {
        o.ranked = j["ranked"].get<std::vector<std::string>>();
      } else if (j.contains("top_skill") && !j["top_skill"].is_null()) {
        o.ranked.push_back(j["top_skill"].get<std::string>());
      } else if (!j.at("suggested").is_null()) {
        o.ranked.push_back(j["suggested"].get<std::string>());
      }
      out.push_back(std::move(o));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return out;
}

}  // namespace skillrec
