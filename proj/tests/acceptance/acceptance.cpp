// Acceptance suite: one PASS/FAIL line per criterion.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "skillrec/catalog.hpp"
#include "skillrec/evalkit.hpp"
#include "skillrec/keyword_sl.hpp"
#include "skillrec/model_sl.hpp"
#include "skillrec/neuralkit/gradcheck.hpp"
#include "skillrec/neuralkit/losses.hpp"
#include "skillrec/pipeline.hpp"
#include "skillrec/relabel.hpp"
#include "skillrec/reranker.hpp"
#include "skillrec/rng.hpp"
#include "skillrec/simulate.hpp"
#include "skillrec/text.hpp"

using namespace skillrec;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  int id;
  std::string title;
  bool pass;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.setf(std::ios::scientific);
  s.precision(2);
  s << v;
  return s.str();
}

bool near(double got, double want, double tol) { return std::abs(got - want) <= tol; }

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

// ---------------------------------------------------------------- closed forms

Verdict closed_forms() {
  const double ln2 = std::log(2.0);
  const double ova = nk::loss_ova(nk::Vec::Zero(3), nk::Vec{{1.0, 0.0, 0.0}});
  const double mc = nk::loss_multiclass(nk::Vec::Zero(4), nk::Vec{{0.0, 1.0, 0.0, 0.0}});
  const double ndcg = ndcg_at_k({"x", "y", "r", "z"}, {"r"}, 4);
  const double bce = rr_loss({0.5, 0.5}, {1.0, 0.0}, {1, 1});
  const bool pass = near(ova, 3.0 * ln2, 1e-9) && near(mc, std::log(4.0), 1e-9) && near(ndcg, 0.5, 1e-12) &&
                    near(bce, 2.0 * ln2, 1e-9);
  return {1, "closed-form losses and NDCG", pass,
          "ova " + fmt(ova, 12) + " multiclass " + fmt(mc, 12) + " ndcg " + fmt(ndcg, 12) + " bce " + fmt(bce, 12)};
}

// ---------------------------------------------------------------- gradient checks

LoggedInteraction accepted(const std::string& id, const std::string& text, const std::string& skill) {
  LoggedInteraction x;
  x.utterance = {id, text, 0};
  x.suggested_skill = skill;
  x.accepted = 1;
  return x;
}

CandidateList rule_list(const std::vector<std::string>& ids) {
  CandidateList l;
  double s = 10.0;
  for (const auto& id : ids) l.items.push_back({id, s -= 1.3, CandidateSource::Rule, -1});
  l.k = ids.size();
  return l;
}

Verdict gradient_checks() {
  const std::vector<std::vector<std::string>> words{
      {"rain", "storm"}, {"chess", "pawn"}, {"pizza", "pasta"}, {"jazz", "drums"}, {"stock", "shares"}};
  std::vector<Skill> skills;
  for (int k = 0; k < 5; ++k)
    skills.push_back({"s" + std::to_string(k), words[k][0] + " " + words[k][1], "", {}, "c" + std::to_string(k % 2),
                      "c" + std::to_string(k % 2) + "-" + std::to_string(k), k % 2});
  const Catalog catalog{skills};
  std::vector<LoggedInteraction> logs;
  for (int k = 0; k < 5; ++k)
    logs.push_back(accepted("u" + std::to_string(k), "play " + words[k][0] + " " + words[(k + 1) % 5][1],
                            "s" + std::to_string(k)));

  std::ostringstream detail;
  bool pass = true;
  for (auto loss : {SkillLoss::MultiClass, SkillLoss::OneVsAll}) {
    SlConfig cfg;
    cfg.featurizer = {{1}, {3}, 12, 5};
    cfg.embed_dim = 8;
    cfg.hidden = {12};
    cfg.skill_loss = loss;
    cfg.train.dropout = 0.0;
    SLModel model(cfg, {"s0", "s1", "s2", "s3", "s4"}, catalog.categories(), catalog.subcategories());
    const auto examples = make_sl_examples(model, logs, catalog);
    std::vector<const SlExample*> batch;
    for (const auto& e : examples) batch.push_back(&e);
    const nk::LossFunction f = [&](const nk::Parameters&, nk::Gradients* g) {
      return sl_loss(model, batch, g, false, nullptr);
    };
    const auto r = nk::grad_check(f, model.parameters(), 1e-3);
    pass = pass && r.passed() && r.entries_checked > 0;
    detail << "sl/" << (loss == SkillLoss::MultiClass ? "multiclass" : "ova") << " max rel "
           << sci(r.max_relative_error) << " over " << r.entries_checked << "; ";
  }

  std::vector<RerankExample> examples;
  for (int n = 0; n < 3; ++n) {
    RerankExample e;
    e.utterance_id = "r" + std::to_string(n);
    e.text = "open " + words[n][0] + " " + words[n + 1][1];
    std::vector<std::string> ids{"s" + std::to_string(n), "s" + std::to_string(n + 1), "s" + std::to_string((n + 3) % 5),
                                 "s" + std::to_string((n + 4) % 5)};
    e.candidates = combine({}, rule_list(ids));
    e.labels = {1.0, 0.0, n == 1 ? 0.7 : 0.0, 0.0};
    e.sources.assign(4, LabelSource::Observed);
    examples.push_back(std::move(e));
  }
  RrConfig rc;
  rc.mode = RerankMode::Listwise;
  rc.featurizer = {{1}, {3}, 12, 3};
  rc.text_dim = 8;
  rc.utt_dim = 8;
  rc.id_dim = 4;
  rc.bin_dim = 2;
  rc.category_dim = 3;
  rc.fused_dim = 8;
  rc.rnn_hidden = 4;
  rc.score_hidden = {8};
  rc.train.dropout = 0.0;
  RRModel rr(rc, SkillFeatureTable::from_catalog(catalog), build_rr_id_vocab(examples), fit_bin_edges(examples));
  std::vector<const RerankExample*> batch;
  for (const auto& e : examples) batch.push_back(&e);
  const nk::LossFunction f = [&](const nk::Parameters&, nk::Gradients* g) {
    return rr_batch_loss(rr, batch, g, false, nullptr);
  };
  // Wide enough to stay above round-off on tiny recurrent gradients, narrow enough to miss relu kinks.
  nk::GradCheckOptions opt;
  opt.step = 1e-5;
  const auto r = nk::grad_check(f, rr.parameters(), 1e-3, opt);
  pass = pass && r.passed() && r.entries_checked > 0;
  detail << "listwise reranker max rel " << sci(r.max_relative_error) << " over " << r.entries_checked
         << " (worst " << r.worst_tensor << ")";
  return {2, "analytic gradients match central differences", pass, detail.str()};
}

// ---------------------------------------------------------------- per-seed directional checks

struct SeedChecks {
  std::uint64_t seed = 0;
  bool c3 = false, c4 = false, c5 = false, c6 = false, c7 = false, c8 = false;
  bool coverage_exact = false;
};

double oracle_pre(const SystemResult& s, double rate) { return s.oracle.pre_at(rate).value_or(0.0); }
double logged_pre(const SystemResult& s, double rate) { return s.logged.pre_at(rate).value_or(0.0); }

SeedChecks check_seed(const PipelineResult& res, std::uint64_t seed, std::ostream& log) {
  SeedChecks c;
  c.seed = seed;
  log << "seed " << seed << ": " << res.test_utterances << " test utterances, " << res.oracle_utterances
      << " oracle, logging rate " << fmt(res.logging_suggestion_rate) << "\n";
  log << format_table(res.systems);

  // Bias structure.
  std::vector<double> overlap, lpre;
  for (const auto& s : res.systems) {
    overlap.push_back(s.logged.overlap_at_1.value_or(0.0));
    lpre.push_back(logged_pre(s, 0.5));
  }
  const double rho = spearman(overlap, lpre);
  std::vector<std::string> swaps;
  for (std::size_t i = 0; i < res.systems.size(); ++i)
    for (std::size_t j = i + 1; j < res.systems.size(); ++j) {
      const auto& a = res.systems[i];
      const auto& b = res.systems[j];
      const double df1 = a.logged.at_cutoff.f1.value_or(0.0) - b.logged.at_cutoff.f1.value_or(0.0);
      const double dpre = oracle_pre(a, 0.5) - oracle_pre(b, 0.5);
      if (df1 * dpre < 0.0) swaps.push_back(a.spec.name + "/" + b.spec.name);
    }
  c.c3 = rho > 0.0 && !swaps.empty();
  log << "  bias: spearman(overlap@1, logged Pre@50%) " << fmt(rho) << ", " << swaps.size() << " swapped pairs"
      << (swaps.empty() ? "" : " e.g. " + swaps.front()) << "\n";

  // Relabeling direction, per shortlister.
  bool relabel_ok = true;
  for (const std::string sl : {"rule", "model"}) {
    const auto& base = res.system("listwise+" + sl);
    const auto& col = res.system("collab+" + sl);
    const auto& st = res.system("selftrain+" + sl);
    const bool col_ok = oracle_pre(col, 0.4) >= oracle_pre(base, 0.4);
    const bool st_ok = oracle_pre(st, 0.4) >= oracle_pre(base, 0.4);
    const double base_recall = base.logged.at_cutoff.recall;
    const double gain = base_recall > 0.0 ? st.logged.at_cutoff.recall / base_recall - 1.0 : 0.0;
    const bool recall_ok = base_recall > 0.0 ? gain >= 0.5 : st.logged.at_cutoff.recall > 0.0;
    relabel_ok = relabel_ok && col_ok && st_ok && recall_ok;
    log << "  relabel/" << sl << ": oracle Pre@40% listwise " << fmt(oracle_pre(base, 0.4)) << " collab "
        << fmt(oracle_pre(col, 0.4)) << (col_ok ? " ok" : " LOW") << " selftrain " << fmt(oracle_pre(st, 0.4))
        << (st_ok ? " ok" : " LOW") << "; selftrain logged recall gain " << fmt(100.0 * gain, 1) << "%"
        << (recall_ok ? " ok" : " LOW") << "\n";
  }
  c.c4 = relabel_ok;

  // Architecture direction.
  {
    const auto& p = res.system("pointwise+rule");
    const auto& l = res.system("listwise+rule");
    c.c5 = oracle_pre(l, 0.25) > oracle_pre(p, 0.25) && oracle_pre(l, 0.5) > oracle_pre(p, 0.5);
    log << "  architecture: oracle Pre@25% listwise " << fmt(oracle_pre(l, 0.25)) << " pointwise "
        << fmt(oracle_pre(p, 0.25)) << "; Pre@50% listwise " << fmt(oracle_pre(l, 0.5)) << " pointwise "
        << fmt(oracle_pre(p, 0.5)) << "\n";
  }

  // Shortlister direction.
  {
    const double kp = res.keyword_sl.value(res.keyword_sl.precision, 5);
    const double kn = res.keyword_sl.value(res.keyword_sl.ndcg, 5);
    const double mp = res.model_sl.value(res.model_sl.precision, 5);
    const double mn = res.model_sl.value(res.model_sl.ndcg, 5);
    c.coverage_exact = res.keyword_logged_coverage == 1.0;
    c.c6 = mp > kp && mn > kn;
    log << "  shortlisters: P@5 model " << fmt(mp) << " keyword " << fmt(kp) << "; NDCG@5 model " << fmt(mn)
        << " keyword " << fmt(kn) << "; keyword logged coverage " << fmt(res.keyword_logged_coverage, 6) << "\n";
  }

  // Sensitivity and ablations around the reference system.
  if (res.ablation_reference && res.sensitivity) {
    const double ref = oracle_pre(*res.ablation_reference, 0.5);
    const double k10 = oracle_pre(*res.sensitivity, 0.5);
    const double rel = ref > 0.0 ? std::abs(k10 - ref) / ref : 1.0;
    c.c7 = rel <= 0.05;
    log << "  sensitivity: oracle Pre@50% K1=40 " << fmt(ref) << " K1=10 " << fmt(k10) << " rel diff "
        << fmt(100.0 * rel, 2) << "%\n";

    std::map<std::string, double> drop;
    for (const auto& a : res.ablations) drop[a.spec.features.ablated_csv()] = ref - oracle_pre(a, 0.5);
    auto mean_drop = [&](std::initializer_list<const char*> names) {
      double s = 0.0;
      for (const char* n : names) s += drop.at(n);
      return s / static_cast<double>(names.size());
    };
    const double strong = mean_drop({"skill_id", "skill_name", "score_bin"});
    const double weak = mean_drop({"category", "popularity", "flag"});
    const bool no_gain = -drop.at("score_bin") <= 0.01 * ref && -drop.at("skill_id") <= 0.01 * ref;
    c.c8 = no_gain && strong > weak;
    log << "  ablation drops in oracle Pre@50%:";
    for (const auto& [name, d] : drop) log << " " << name << " " << fmt(d);
    log << "; mean strong " << fmt(strong) << " weak " << fmt(weak) << "\n";
  } else {
    log << "  sensitivity and ablations were not run\n";
  }
  log.flush();
  return c;
}

// ---------------------------------------------------------------- invariants

using ObservedSet = std::set<std::tuple<std::string, std::string, double>>;

ObservedSet observed_labels(const std::vector<RerankExample>& examples) {
  ObservedSet out;
  for (const auto& e : examples)
    for (std::size_t i = 0; i < e.candidates.size(); ++i)
      if (e.sources[i] == LabelSource::Observed) out.insert({e.utterance_id, e.candidates.items[i].skill_id, e.labels[i]});
  return out;
}

bool immutability(std::ostream& log) {
  WorldConfig world;
  const auto sim = simulate_log(world, 20000);
  const auto split = split_by_time(sim.interactions, SplitFractions{});
  const auto index = build_index(sim.world.catalog);
  const auto train = make_examples(split.train, nullptr, index, CandidateConfig{});
  const auto validation = make_examples(split.validation, nullptr, index, CandidateConfig{});
  const auto before = observed_labels(train);

  auto collab = train;
  const CollabConfig cc;
  const auto report = collaborative_relabel(collab, neighbor_aggregates(split.train, EmbedConfig{}, cc), cc);
  const bool collab_ok = observed_labels(collab) == before;

  RrConfig rc;
  rc.train.max_epochs = 1;
  const RRModel base = train_rr(train, validation, sim.world.catalog, rc);
  SelfTrainConfig sc;
  sc.iterations = 3;
  sc.epochs_per_iteration = 1;
  const auto st = self_train_relabel(train, validation, base, sim.world.catalog, sc);
  const bool st_ok = observed_labels(st.examples) == before;
  std::size_t added = 0;
  for (auto a : st.added) added += a;
  log << "  immutability: " << before.size() << " observed labels over " << train.size() << " examples; collab "
      << report.added_positives << " positives imputed, self-training " << added << " labels changed\n";
  return collab_ok && st_ok && report.targets_touched > 0 && added > 0;
}

bool combinator_property(std::ostream& log) {
  Rng rng(2024);
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::string> pool;
    for (int i = 0; i < 90; ++i) pool.push_back("k" + std::to_string(i));
    rng.shuffle(pool);
    const auto n1 = rng.below(41), n2 = rng.below(41);
    CandidateList m, r;
    for (std::size_t i = 0; i < n1; ++i) m.items.push_back({pool[i], 1.0 - 0.01 * i, CandidateSource::Model, -1});
    std::set<std::string> used;
    while (r.items.size() < n2) {
      const auto& id = pool[rng.below(pool.size())];
      if (used.insert(id).second) r.items.push_back({id, 5.0 - 0.1 * r.items.size(), CandidateSource::Rule, -1});
    }
    const auto c = combine(m, r);
    std::vector<std::string> want;
    std::set<std::string> seen;
    for (const auto& x : m.items)
      if (seen.insert(x.skill_id).second) want.push_back(x.skill_id);
    for (const auto& x : r.items)
      if (seen.insert(x.skill_id).second) want.push_back(x.skill_id);
    std::vector<std::string> got;
    for (const auto& x : c.items) got.push_back(x.skill_id);
    if (got != want) {
      log << "  combinator mismatch on trial " << t << "\n";
      return false;
    }
    for (std::size_t i = 0; i < c.items.size(); ++i) {
      const auto expect = i < m.items.size() ? CandidateSource::Model : CandidateSource::Rule;
      if (c.items[i].source != expect) return false;
    }
  }
  log << "  combinator: 1000 random pairs match the dedup oracle\n";
  return true;
}

bool retrieval_oracle(std::ostream& log) {
  const auto world = gen_world(WorldConfig{});
  const auto& catalog = world.catalog;
  const double n = static_cast<double>(catalog.size());
  std::vector<std::map<std::string, int>> tf(catalog.size());
  std::map<std::string, int> df;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    for (const auto& t : tokenize_words(skill_document(catalog[i]))) tf[i][t]++;
    for (const auto& kv : tf[i]) df[kv.first]++;
  }
  const auto index = build_index(catalog);
  Rng rng(77);
  for (std::size_t u = 0; u < 100; ++u) {
    const auto text = gen_utterance(world, rng, u).utterance.text;
    struct Row {
      double score;
      int pop;
      std::string id;
    };
    std::vector<Row> rows;
    for (std::size_t i = 0; i < catalog.size(); ++i) {
      double s = 0.0;
      for (const auto& t : tokenize_words(text)) {
        const auto it = tf[i].find(t);
        if (it == tf[i].end()) continue;
        const double idf = std::log((1.0 + n) / (1.0 + df[t])) + 1.0;
        s += it->second * (idf * idf);
      }
      if (s > 0.0) rows.push_back({s, catalog[i].popularity, catalog[i].skill_id});
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.pop != b.pop) return a.pop > b.pop;
      return a.id < b.id;
    });
    if (rows.size() > 40) rows.resize(40);
    const auto got = retrieve(index, text, 40);
    if (got.size() != rows.size()) return false;
    for (std::size_t j = 0; j < rows.size(); ++j)
      if (got.items[j].skill_id != rows[j].id || std::abs(got.items[j].score - rows[j].score) > 1e-9) {
        log << "  retrieval mismatch on \"" << text << "\" rank " << j << "\n";
        return false;
      }
  }
  log << "  retrieval: 100 utterances match brute-force TF-IDF\n";
  return true;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = ss.str();
  }
  return out;
}

bool repeatable(const fs::path& dir, std::ostream& log) {
  ExperimentConfig cfg;
  cfg.apply_seed(5);
  cfg.n_utterances = 4000;
  cfg.oracle_sample = 300;
  cfg.ablations = false;
  cfg.sensitivity = false;
  cfg.save_models = true;
  cfg.selftrain.iterations = 2;
  cfg.rr.train.max_epochs = 3;
  cfg.sl.train.max_epochs = 3;
  cfg.systems.clear();
  for (const auto& s : default_systems())
    if (s.name == "pointwise+rule" || s.name == "collab+model" || s.name == "selftrain+model") cfg.systems.push_back(s);
  fs::remove_all(dir / "a");
  fs::remove_all(dir / "b");
  run_pipeline(cfg, dir / "a");
  run_pipeline(cfg, dir / "b");
  const auto a = read_tree(dir / "a");
  const auto b = read_tree(dir / "b");
  log << "  repeatability: " << a.size() << " files per run, " << (a == b ? "byte-identical" : "DIFFERENT") << "\n";
  return !a.empty() && a == b;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  fs::path out_dir = fs::temp_directory_path() / "skillrec_acceptance";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t n = 20000;
  app.add_option("--out-dir", out_dir, "artifact directory");
  app.add_option("--seeds", seeds, "pipeline seeds");
  app.add_option("--n", n, "utterances per pipeline run");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(out_dir);

  std::vector<Verdict> verdicts;
  std::ostream& log = std::cout;
  verdicts.push_back(closed_forms());
  verdicts.push_back(gradient_checks());
  log << verdicts[0].detail << "\n" << verdicts[1].detail << "\n";

  std::vector<SeedChecks> checks;
  double pipeline_seconds = 0.0;
  for (auto seed : seeds) {
    ExperimentConfig cfg;
    cfg.apply_seed(seed);
    cfg.n_utterances = n;
    const auto t0 = Clock::now();
    const auto res = run_pipeline(cfg, out_dir / ("seed_" + std::to_string(seed)));
    const double secs = seconds_since(t0);
    pipeline_seconds += secs;
    log << "pipeline seed " << seed << " finished in " << fmt(secs, 1) << " s\n";
    checks.push_back(check_seed(res, seed, log));
  }
  auto majority = [&](bool SeedChecks::*field, std::string& detail) {
    std::size_t passes = 0;
    for (const auto& c : checks) {
      passes += c.*field;
      detail += "seed " + std::to_string(c.seed) + (c.*field ? " pass; " : " fail; ");
    }
    return 2 * passes > checks.size();
  };
  const std::vector<std::tuple<int, std::string, bool SeedChecks::*>> directional{
      {3, "logged metrics favor overlap with the logging policy", &SeedChecks::c3},
      {4, "relabeling improves oracle precision and self-training raises logged recall", &SeedChecks::c4},
      {5, "listwise beats pointwise on the keyword list", &SeedChecks::c5},
      {6, "model shortlister beats keyword shortlister", &SeedChecks::c6},
      {7, "K1=10 and K1=40 perform alike", &SeedChecks::c7},
      {8, "identity, name and score-bin features matter most", &SeedChecks::c8}};
  for (const auto& [id, title, field] : directional) {
    std::string detail;
    bool pass = !checks.empty() && majority(field, detail);
    if (id == 6) {
      const bool exact = std::all_of(checks.begin(), checks.end(), [](const SeedChecks& c) { return c.coverage_exact; });
      pass = pass && exact;
      detail += exact ? "keyword coverage of logged positives exact" : "keyword coverage of logged positives below 1";
    }
    verdicts.push_back({id, title, pass, detail});
  }

  const auto t9 = Clock::now();
  const bool imm = immutability(log);
  const bool comb = combinator_property(log);
  const bool retr = retrieval_oracle(log);
  const bool rep = repeatable(out_dir / "repeat", log);
  verdicts.push_back({9, "invariant suites", imm && comb && retr && rep,
                      std::string("immutability ") + (imm ? "ok" : "BROKEN") + ", combinator " + (comb ? "ok" : "BROKEN") +
                          ", retrieval " + (retr ? "ok" : "BROKEN") + ", repeatability " + (rep ? "ok" : "BROKEN")});
  log << "invariants took " << fmt(seconds_since(t9), 1) << " s\n";
  log << "pipeline runtime " << fmt(pipeline_seconds, 1) << " s over " << seeds.size() << " seeds ("
      << fmt(seeds.empty() ? 0.0 : pipeline_seconds / static_cast<double>(seeds.size()) / 60.0, 1)
      << " min per seed)\n\n";

  bool all = true;
  for (const auto& v : verdicts) {
    std::printf("criterion %d %s: %s [%s]\n", v.id, v.pass ? "PASS" : "FAIL", v.title.c_str(), v.detail.c_str());
    all = all && v.pass;
  }
  return all ? 0 : 1;
}

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance aborted: %s\n", e.what());
    return 2;
  }
}
