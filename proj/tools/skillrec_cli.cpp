// Command-line entry point: simulation, indexing, training, relabeling,
// suggestion, evaluation and full experiment pipelines.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "skillrec/error.hpp"
#include "skillrec/evalkit.hpp"
#include "skillrec/keyword_sl.hpp"
#include "skillrec/model_sl.hpp"
#include "skillrec/pipeline.hpp"
#include "skillrec/relabel.hpp"
#include "skillrec/reranker.hpp"
#include "skillrec/simulate.hpp"

using namespace skillrec;
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

// Shared shortlist options.
struct ShortlistOpts {
  std::string skills, index, sl_model;
  std::size_t k1 = 40, k2 = 40, k_max = 80;

  void add(CLI::App* app) {
    app->add_option("--skills", skills, "skills.jsonl")->required();
    app->add_option("--index", index, "keyword index built by `index` (rebuilt from skills when omitted)");
    app->add_option("--sl-model", sl_model, "model-based shortlister; omit for keyword-only lists");
    app->add_option("--k1", k1, "model shortlist length");
    app->add_option("--k2", k2, "keyword shortlist length");
    app->add_option("--k-max", k_max, "combined list cap");
  }
  CandidateConfig candidates() const { return {k1, k2, k_max}; }
};

struct Loaded {
  Catalog catalog;
  InvertedIndex index;
  std::optional<SLModel> sl;
};

Loaded load_shortlisters(const ShortlistOpts& o) {
  Loaded l{load_catalog(o.skills), {}, std::nullopt};
  l.index = o.index.empty() ? build_index(l.catalog) : load_index(o.index);
  if (!o.sl_model.empty()) l.sl = SLModel::load(o.sl_model);
  return l;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"skillrec: two-stage skill recommendation with relabeling and a logging-policy simulator"};
  app.require_subcommand(1);

  // ------------------------------------------------------------ simulate
  auto* sim = app.add_subcommand("simulate", "generate a world, a biased interaction log and the oracle");
  std::string sim_config, sim_out = "data";
  std::size_t sim_n = 20000;
  std::optional<std::uint64_t> sim_seed;
  double sim_calibrate = 0.0;
  sim->add_option("--config", sim_config, "world config JSON (missing keys use defaults)");
  sim->add_option("--n", sim_n, "number of utterances");
  sim->add_option("--out-dir", sim_out, "output directory");
  sim->add_option("--seed", sim_seed, "override the world seed");
  sim->add_option("--calibrate", sim_calibrate, "print tau_log for this suggestion rate instead of simulating");
  sim->callback([&] {
    WorldConfig wc = sim_config.empty() ? WorldConfig{} : world_config_from_json(read_json(sim_config));
    if (sim_seed) wc.seed = *sim_seed;
    if (sim_calibrate > 0.0) {
      std::cout << calibrate_tau_log(wc, 10000, sim_calibrate) << '\n';
      return;
    }
    const auto log = simulate_log(wc, sim_n);
    write_simulation(log, sim_out);
    if (!log.interactions.empty()) {
      const auto split = split_by_time(log.interactions);
      save_interactions(split.train, fs::path(sim_out) / "train.jsonl");
      save_interactions(split.validation, fs::path(sim_out) / "val.jsonl");
      save_interactions(split.test, fs::path(sim_out) / "test.jsonl");
    }
    std::cerr << "wrote " << log.interactions.size() << " interactions to " << sim_out << '\n';
  });

  // ------------------------------------------------------------ index
  auto* idx = app.add_subcommand("index", "build the keyword inverted index");
  std::string idx_skills, idx_out = "index.ski";
  idx->add_option("--skills", idx_skills)->required();
  idx->add_option("--out", idx_out);
  idx->callback([&] {
    const auto index = build_index(load_catalog(idx_skills));
    save_index(index, idx_out);
    std::cerr << "indexed " << index.skill_count() << " skills, " << index.term_count() << " terms\n";
  });

  // ------------------------------------------------------------ train-sl
  auto* tsl = app.add_subcommand("train-sl", "train the model-based shortlister");
  std::string tsl_train, tsl_val, tsl_skills, tsl_out = "sl_model.bin", tsl_loss = "multiclass";
  SlConfig slc;
  tsl->add_option("--train", tsl_train)->required();
  tsl->add_option("--val", tsl_val);
  tsl->add_option("--skills", tsl_skills)->required();
  tsl->add_option("--out", tsl_out);
  tsl->add_option("--w1", slc.weights.w1);
  tsl->add_option("--w2", slc.weights.w2);
  tsl->add_option("--w3", slc.weights.w3);
  tsl->add_option("--min-count", slc.min_count);
  tsl->add_option("--loss", tsl_loss, "multiclass|ova")->check(CLI::IsMember({"multiclass", "ova"}));
  tsl->add_option("--epochs", slc.train.max_epochs);
  tsl->add_option("--lr", slc.train.learning_rate);
  tsl->add_option("--seed", slc.train.seed);
  tsl->callback([&] {
    slc.skill_loss = tsl_loss == "ova" ? SkillLoss::OneVsAll : SkillLoss::MultiClass;
    const auto catalog = load_catalog(tsl_skills);
    const auto train = load_interactions(tsl_train);
    const auto val = tsl_val.empty() ? std::vector<LoggedInteraction>{} : load_interactions(tsl_val);
    nk::TrainReport report;
    const auto model = train_sl(train, val, catalog, slc, &report);
    model.save(tsl_out);
    std::cerr << "vocabulary " << model.vocabulary().size() << ", epochs " << report.epochs_run << ", best "
              << report.best_epoch << '\n';
  });

  // ------------------------------------------------------------ make-examples
  auto* mex = app.add_subcommand("make-examples", "build reranker examples with baseline labels");
  std::string mex_in, mex_out = "examples.jsonl";
  ShortlistOpts mex_sl;
  mex->add_option("--interactions", mex_in)->required();
  mex->add_option("--out", mex_out);
  mex_sl.add(mex);
  mex->callback([&] {
    const auto l = load_shortlisters(mex_sl);
    ExampleStats stats;
    const auto ex = make_examples(load_interactions(mex_in), l.sl ? &*l.sl : nullptr, l.index, mex_sl.candidates(), &stats);
    save_examples(ex, mex_out);
    std::cerr << stats.examples << " examples, observed skill missing in " << stats.missing_observed << '\n';
  });

  // ------------------------------------------------------------ relabel
  auto* rel = app.add_subcommand("relabel", "impute labels on unobserved candidates");
  std::string rel_method = "collab", rel_examples, rel_val_examples, rel_interactions, rel_model, rel_skills,
              rel_out = "relabeled.jsonl", rel_report = "relabel_report.json", rel_schedule = "adaptive",
              rel_model_out;
  CollabConfig cc;
  SelfTrainConfig stc;
  rel->add_option("--method", rel_method)->check(CLI::IsMember({"collab", "selftrain"}));
  rel->add_option("--examples", rel_examples, "training examples")->required();
  rel->add_option("--interactions", rel_interactions, "interactions for neighbor voting (collab)");
  rel->add_option("--val-examples", rel_val_examples, "validation examples (selftrain)");
  rel->add_option("--model", rel_model, "base reranker (selftrain)");
  rel->add_option("--skills", rel_skills, "skills.jsonl (selftrain)");
  rel->add_option("--model-out", rel_model_out, "write the selected self-trained model");
  rel->add_option("--m", cc.m);
  rel->add_option("--r", cc.r);
  rel->add_option("--nc", cc.n_c);
  rel->add_option("--pc", cc.p_c);
  rel->add_option("--seed", cc.seed);
  rel->add_flag("--fractional", cc.fractional, "write p_i instead of sampling");
  rel->add_option("--c", stc.c);
  rel->add_option("--iters", stc.iterations);
  rel->add_option("--schedule", rel_schedule)->check(CLI::IsMember({"adaptive", "constant"}));
  rel->add_option("--epochs-per-iter", stc.epochs_per_iteration);
  rel->add_option("--out", rel_out);
  rel->add_option("--report", rel_report);
  rel->callback([&] {
    auto examples = load_examples(rel_examples);
    RelabelReport report;
    if (rel_method == "collab") {
      if (rel_interactions.empty()) throw InvalidArgument("relabel --method collab needs --interactions");
      const auto agg = neighbor_aggregates(load_interactions(rel_interactions), EmbedConfig{}, cc);
      report = collaborative_relabel(examples, agg, cc);
    } else {
      if (rel_model.empty() || rel_skills.empty() || rel_val_examples.empty())
        throw InvalidArgument("relabel --method selftrain needs --model, --skills and --val-examples");
      stc.schedule = parse_schedule(rel_schedule);
      const auto base = RRModel::load(rel_model);
      auto result = self_train_relabel(examples, load_examples(rel_val_examples), base, load_catalog(rel_skills), stc);
      examples = std::move(result.examples);
      report = result.report;
      if (!rel_model_out.empty()) result.model.save(rel_model_out);
    }
    save_examples(examples, rel_out);
    write_json({{"added_positives", report.added_positives},
                {"imputed_negatives", report.imputed_negatives},
                {"targets_touched", report.targets_touched},
                {"i_star", report.i_star >= 0 ? nlohmann::json(report.i_star) : nlohmann::json(nullptr)}},
               rel_report);
  });

  // ------------------------------------------------------------ train-rr
  auto* trr = app.add_subcommand("train-rr", "train a pointwise or listwise reranker");
  std::string trr_train, trr_val, trr_train_ex, trr_val_ex, trr_mode = "listwise", trr_labels = "baseline",
              trr_ablate, trr_out = "rr_model.bin";
  ShortlistOpts trr_sl;
  RrConfig rrc;
  CollabConfig trr_cc;
  SelfTrainConfig trr_st;
  trr->add_option("--train", trr_train, "training interactions (examples are built on the fly)");
  trr->add_option("--val", trr_val, "validation interactions");
  trr->add_option("--train-examples", trr_train_ex, "prebuilt training examples");
  trr->add_option("--val-examples", trr_val_ex, "prebuilt validation examples");
  trr->add_option("--mode", trr_mode)->check(CLI::IsMember({"pointwise", "listwise"}));
  trr->add_option("--labels", trr_labels)->check(CLI::IsMember({"baseline", "collab", "selftrain"}));
  trr->add_option("--ablate", trr_ablate, "comma-separated features: skill_id,skill_name,score_bin,category,popularity,flag");
  trr->add_option("--epochs", rrc.train.max_epochs);
  trr->add_option("--lr", rrc.train.learning_rate);
  trr->add_option("--seed", rrc.train.seed);
  trr->add_option("--r", trr_cc.r);
  trr->add_option("--c", trr_st.c);
  trr->add_option("--iters", trr_st.iterations);
  trr->add_option("--out", trr_out);
  trr_sl.add(trr);
  trr->callback([&] {
    rrc.mode = parse_mode(trr_mode);
    rrc.features = FeatureMask::ablating(trr_ablate);
    const auto l = load_shortlisters(trr_sl);
    const SLModel* sl = l.sl ? &*l.sl : nullptr;
    std::vector<LoggedInteraction> train_x;
    std::vector<RerankExample> train, val;
    if (!trr_train_ex.empty()) {
      train = load_examples(trr_train_ex);
    } else if (!trr_train.empty()) {
      train_x = load_interactions(trr_train);
      train = make_examples(train_x, sl, l.index, trr_sl.candidates());
    } else {
      throw InvalidArgument("train-rr needs --train or --train-examples");
    }
    if (!trr_val_ex.empty()) val = load_examples(trr_val_ex);
    else if (!trr_val.empty()) val = make_examples(load_interactions(trr_val), sl, l.index, trr_sl.candidates());
    const auto policy = parse_label_policy(trr_labels);
    nk::TrainReport report;
    if (policy == LabelPolicy::Collaborative) {
      if (train_x.empty()) throw InvalidArgument("--labels collab needs --train interactions");
      collaborative_relabel(train, neighbor_aggregates(train_x, EmbedConfig{}, trr_cc), trr_cc);
    }
    RRModel model = train_rr(train, val, l.catalog, rrc, nullptr, &report);
    if (policy == LabelPolicy::SelfTraining) {
      auto st = self_train_relabel(train, val, model, l.catalog, trr_st);
      std::cerr << "self-training selected i* = " << st.i_star << '\n';
      model = std::move(st.model);
    }
    model.save(trr_out);
    std::cerr << "trained " << to_string(rrc.mode) << " reranker on " << train.size() << " examples\n";
  });

  // ------------------------------------------------------------ suggest
  auto* sug = app.add_subcommand("suggest", "rerank shortlists and emit top-1 suggestions");
  std::string sug_model, sug_in, sug_out = "suggestions.jsonl";
  double sug_cutoff = 0.5;
  ShortlistOpts sug_sl;
  sug->add_option("--model", sug_model)->required();
  sug->add_option("--interactions", sug_in)->required();
  sug->add_option("--cutoff", sug_cutoff);
  sug->add_option("--out", sug_out);
  sug_sl.add(sug);
  sug->callback([&] {
    const auto l = load_shortlisters(sug_sl);
    const auto model = RRModel::load(sug_model);
    std::vector<SystemOutput> outputs;
    for (const auto& x : load_interactions(sug_in)) {
      RerankExample e;
      e.utterance_id = x.utterance.utterance_id;
      e.text = x.utterance.text;
      e.candidates = shortlist(e.text, l.sl ? &*l.sl : nullptr, l.index, sug_sl.candidates());
      e.labels.assign(e.candidates.size(), 0.0);
      e.sources.assign(e.candidates.size(), LabelSource::Unobserved);
      if (e.candidates.empty()) {
        outputs.push_back({e.utterance_id, {}, 0.0});
        continue;
      }
      auto out = rerank_outputs(model, {e});
      outputs.push_back(std::move(out.front()));
    }
    save_suggestions(outputs, sug_cutoff, sug_out);
  });

  // ------------------------------------------------------------ evaluate
  auto* ev = app.add_subcommand("evaluate", "score suggestions against logged feedback or the oracle");
  std::string ev_system, ev_mode = "logged", ev_interactions, ev_oracle, ev_out = "report.json", ev_curves;
  double ev_cutoff = 0.5;
  ev->add_option("--system", ev_system, "suggestions.jsonl")->required();
  ev->add_option("--mode", ev_mode)->check(CLI::IsMember({"logged", "oracle"}));
  ev->add_option("--interactions", ev_interactions, "logged interactions of the evaluated utterances")->required();
  ev->add_option("--oracle", ev_oracle, "oracle.jsonl (oracle mode)");
  ev->add_option("--cutoff", ev_cutoff);
  ev->add_option("--out", ev_out);
  ev->add_option("--curves", ev_curves, "precision-recall sweep CSV");
  ev->callback([&] {
    const auto mode = parse_label_mode(ev_mode);
    std::optional<RelevanceOracle> oracle;
    if (mode == LabelMode::Oracle) {
      if (ev_oracle.empty()) throw InvalidArgument("evaluate --mode oracle needs --oracle");
      oracle = load_oracle(ev_oracle);
    }
    const auto interactions = load_interactions(ev_interactions);
    const auto ctx = EvalContext::from_interactions(interactions, oracle ? &*oracle : nullptr);
    const auto outputs = load_suggestions(ev_system);
    auto report = evaluate_outputs(outputs, ctx, mode, ev_cutoff);
    report.system = fs::path(ev_system).stem().string();
    write_json(report.to_json(), ev_out);
    if (!ev_curves.empty()) write_curve_csv(sweep_curves(outputs, ctx, mode), ev_curves);
    std::cout << report.to_json().dump(2) << '\n';
  });

  // ------------------------------------------------------------ compare
  auto* cmp = app.add_subcommand("compare", "print the comparison table of a pipeline run");
  std::string cmp_summary;
  cmp->add_option("--summary", cmp_summary, "summary.json written by `pipeline`")->required();
  cmp->callback([&] {
    const auto j = read_json(cmp_summary);
    std::cout << std::left;
    for (const char* group : {"systems", "ablations"}) {
      for (const auto& s : j.at(group)) {
        const auto& lo = s.at("logged");
        const auto& orc = s.at("oracle");
        auto f = [](const nlohmann::json& v) { return v.is_null() ? std::string("-") : std::to_string(v.get<double>()).substr(0, 5); };
        std::cout << std::setw(30) << s.at("spec").at("name").get<std::string>();
        for (const auto* r : {&lo, &orc})
          std::cout << " | " << f(r->at("precision_at_rate").at("0.25")) << ' ' << f(r->at("precision_at_rate").at("0.40"))
                    << ' ' << f(r->at("precision_at_rate").at("0.50")) << ' ' << f(r->at("precision_at_rate").at("0.75"))
                    << ' ' << f(r->at("precision")) << ' ' << f(r->at("recall")) << ' ' << f(r->at("f1"));
        std::cout << " | " << f(lo.at("overlap_at_1")) << '\n';
      }
    }
  });

  // ------------------------------------------------------------ pipeline
  auto* pipe = app.add_subcommand("pipeline", "run the full experiment and write a report directory");
  std::string pipe_config, pipe_out = "run";
  std::optional<std::uint64_t> pipe_seed;
  std::optional<std::size_t> pipe_n;
  unsigned pipe_threads = 0;
  bool pipe_no_ablations = false, pipe_no_sensitivity = false, pipe_quiet = false, pipe_save_models = false;
  pipe->add_option("--config", pipe_config, "experiment config JSON");
  pipe->add_option("--out-dir", pipe_out);
  pipe->add_option("--seed", pipe_seed);
  pipe->add_option("--n", pipe_n, "number of utterances");
  pipe->add_flag("--no-ablations", pipe_no_ablations);
  pipe->add_flag("--no-sensitivity", pipe_no_sensitivity);
  pipe->add_flag("--save-models", pipe_save_models);
  pipe->add_flag("--quiet", pipe_quiet);
  pipe->add_option("--threads", pipe_threads, "worker threads for independent systems (0 = all cores)");
  pipe->callback([&] {
    ExperimentConfig cfg = pipe_config.empty() ? ExperimentConfig{} : experiment_config_from_json(read_json(pipe_config));
    if (pipe_seed) cfg.apply_seed(*pipe_seed);
    if (pipe_n) cfg.n_utterances = *pipe_n;
    if (pipe_no_ablations) cfg.ablations = false;
    if (pipe_no_sensitivity) cfg.sensitivity = false;
    if (pipe_save_models) cfg.save_models = true;
    cfg.threads = pipe_threads;
    const auto result = run_pipeline(cfg, pipe_out, pipe_quiet ? ProgressFn{} : ProgressFn{log_line});
    std::vector<SystemResult> all = result.systems;
    all.insert(all.end(), result.ablations.begin(), result.ablations.end());
    if (result.sensitivity) all.push_back(*result.sensitivity);
    std::cout << format_table(all);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
