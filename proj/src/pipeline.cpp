#include "skillrec/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <atomic>
#include <exception>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "skillrec/config_json.hpp"
#include "skillrec/error.hpp"
#include "skillrec/rng.hpp"
#include "skillrec/text.hpp"

namespace skillrec {

using nlohmann::json;

const char* to_string(LabelPolicy policy) {
  switch (policy) {
    case LabelPolicy::Baseline:
      return "baseline";
    case LabelPolicy::Collaborative:
      return "collab";
    case LabelPolicy::SelfTraining:
      return "selftrain";
  }
  return "baseline";
}

LabelPolicy parse_label_policy(const std::string& text) {
  if (text == "baseline") return LabelPolicy::Baseline;
  if (text == "collab") return LabelPolicy::Collaborative;
  if (text == "selftrain") return LabelPolicy::SelfTraining;
  throw InvalidArgument("unknown label policy '" + text + "' (expected baseline|collab|selftrain)");
}

std::vector<SystemSpec> default_systems() {
  using M = RerankMode;
  using L = LabelPolicy;
  return {{"pointwise+rule", M::Pointwise, false, L::Baseline, {}, 40},
          {"listwise+rule", M::Listwise, false, L::Baseline, {}, 40},
          {"collab+rule", M::Listwise, false, L::Collaborative, {}, 40},
          {"selftrain+rule", M::Listwise, false, L::SelfTraining, {}, 40},
          {"listwise+model", M::Listwise, true, L::Baseline, {}, 40},
          {"collab+model", M::Listwise, true, L::Collaborative, {}, 40},
          {"selftrain+model", M::Listwise, true, L::SelfTraining, {}, 40}};
}

// ---------------------------------------------------------------- config (de)serialization

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  world.seed = s;
  sl.train.seed = Rng::splitmix(s ^ 0x51ULL);
  rr.train.seed = Rng::splitmix(s ^ 0x52ULL);
  collab.seed = Rng::splitmix(s ^ 0x53ULL);
}

void ExperimentConfig::validate() const {
  world.validate();
  sl.weights.validate();
  sl.train.validate();
  rr.validate();
  collab.validate();
  selftrain.validate();
  if (candidates.k1 < 1 || candidates.k2 < 1) throw InvalidArgument("experiment: K1 and K2 must be >= 1");
  if (!(cutoff > 0.0 && cutoff < 1.0)) throw InvalidArgument("experiment: cutoff must be in (0, 1)");
  std::set<std::string> names;
  for (const auto& s : systems)
    if (!names.insert(s.name).second) throw InvalidArgument("experiment: duplicate system name " + s.name);
  if ((ablations || sensitivity) && !names.count(ablation_base))
    throw InvalidArgument("experiment: ablation base '" + ablation_base + "' is not a configured system");
}

namespace {

json system_json(const SystemSpec& s) {
  return {{"name", s.name},        {"mode", to_string(s.mode)}, {"model_sl", s.model_sl},
          {"labels", to_string(s.labels)}, {"ablate", s.features.ablated_csv()}, {"k1", s.k1}};
}

SystemSpec system_from_json(const json& j) {
  SystemSpec s;
  s.name = j.at("name");
  s.mode = parse_mode(j.value("mode", "listwise"));
  s.model_sl = j.value("model_sl", false);
  s.labels = parse_label_policy(j.value("labels", "baseline"));
  s.features = FeatureMask::ablating(j.value("ablate", ""));
  s.k1 = j.value("k1", std::size_t{40});
  return s;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json systems = json::array();
  for (const auto& s : c.systems) systems.push_back(system_json(s));
  return {
      {"world", to_json(c.world)},
      {"n_utterances", c.n_utterances},
      {"split", {{"train", c.split.train}, {"validation", c.split.validation}, {"test", c.split.test}}},
      {"sl",
       {{"featurizer", c.sl.featurizer},
        {"embed_dim", c.sl.embed_dim},
        {"hidden", c.sl.hidden},
        {"skill_loss", c.sl.skill_loss == SkillLoss::MultiClass ? "multiclass" : "ova"},
        {"weights", {c.sl.weights.w1, c.sl.weights.w2, c.sl.weights.w3}},
        {"min_count", c.sl.min_count},
        {"train", c.sl.train}}},
      {"candidates", {{"k1", c.candidates.k1}, {"k2", c.candidates.k2}, {"k_max", c.candidates.k_max}}},
      {"rr",
       {{"featurizer", c.rr.featurizer},
        {"text_dim", c.rr.text_dim},
        {"utt_dim", c.rr.utt_dim},
        {"id_dim", c.rr.id_dim},
        {"bin_dim", c.rr.bin_dim},
        {"category_dim", c.rr.category_dim},
        {"popularity_dim", c.rr.popularity_dim},
        {"flag_dim", c.rr.flag_dim},
        {"fused_dim", c.rr.fused_dim},
        {"rnn_hidden", c.rr.rnn_hidden},
        {"score_hidden", c.rr.score_hidden},
        {"train", c.rr.train}}},
      {"embed", {{"featurizer", c.embed.featurizer}, {"dim", c.embed.dim}, {"seed", c.embed.seed}}},
      {"collab",
       {{"m", c.collab.m},
        {"r", c.collab.r},
        {"n_c", c.collab.n_c},
        {"p_c", c.collab.p_c},
        {"seed", c.collab.seed},
        {"fractional", c.collab.fractional}}},
      {"selftrain",
       {{"iterations", c.selftrain.iterations},
        {"c", c.selftrain.c},
        {"schedule", to_string(c.selftrain.schedule)},
        {"epochs_per_iteration", c.selftrain.epochs_per_iteration},
        {"stop_when_unchanged", c.selftrain.stop_when_unchanged}}},
      {"cutoff", c.cutoff},
      {"oracle_sample", c.oracle_sample},
      {"systems", systems},
      {"ablations", c.ablations},
      {"ablation_base", c.ablation_base},
      {"sensitivity", c.sensitivity},
      {"sensitivity_k1", c.sensitivity_k1},
      {"save_models", c.save_models},
      {"seed", c.seed}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  if (j.contains("seed")) c.apply_seed(j.at("seed").get<std::uint64_t>());
  if (j.contains("world")) {
    json w = to_json(c.world);
    w.update(j.at("world"));
    c.world = world_config_from_json(w);
  }
  c.n_utterances = j.value("n_utterances", c.n_utterances);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.split = {s.value("train", c.split.train), s.value("validation", c.split.validation),
               s.value("test", c.split.test)};
  }
  if (j.contains("sl")) {
    const auto& s = j.at("sl");
    if (s.contains("featurizer")) c.sl.featurizer = s.at("featurizer").get<nk::FeaturizerConfig>();
    c.sl.embed_dim = s.value("embed_dim", c.sl.embed_dim);
    c.sl.hidden = s.value("hidden", c.sl.hidden);
    if (s.contains("skill_loss"))
      c.sl.skill_loss = s.at("skill_loss").get<std::string>() == "ova" ? SkillLoss::OneVsAll : SkillLoss::MultiClass;
    if (s.contains("weights")) {
      const auto w = s.at("weights").get<std::vector<double>>();
      if (w.size() != 3) throw InvalidArgument("sl.weights must have three entries");
      c.sl.weights = {w[0], w[1], w[2]};
    }
    c.sl.min_count = s.value("min_count", c.sl.min_count);
    if (s.contains("train")) {
      json t = c.sl.train;
      t.update(s.at("train"));
      c.sl.train = t.get<nk::TrainConfig>();
    }
  }
  if (j.contains("candidates")) {
    const auto& s = j.at("candidates");
    c.candidates = {s.value("k1", c.candidates.k1), s.value("k2", c.candidates.k2), s.value("k_max", c.candidates.k_max)};
  }
  if (j.contains("rr")) {
    const auto& s = j.at("rr");
    if (s.contains("featurizer")) c.rr.featurizer = s.at("featurizer").get<nk::FeaturizerConfig>();
    c.rr.text_dim = s.value("text_dim", c.rr.text_dim);
    c.rr.utt_dim = s.value("utt_dim", c.rr.utt_dim);
    c.rr.id_dim = s.value("id_dim", c.rr.id_dim);
    c.rr.bin_dim = s.value("bin_dim", c.rr.bin_dim);
    c.rr.category_dim = s.value("category_dim", c.rr.category_dim);
    c.rr.popularity_dim = s.value("popularity_dim", c.rr.popularity_dim);
    c.rr.flag_dim = s.value("flag_dim", c.rr.flag_dim);
    c.rr.fused_dim = s.value("fused_dim", c.rr.fused_dim);
    c.rr.rnn_hidden = s.value("rnn_hidden", c.rr.rnn_hidden);
    c.rr.score_hidden = s.value("score_hidden", c.rr.score_hidden);
    if (s.contains("train")) {
      json t = c.rr.train;
      t.update(s.at("train"));
      c.rr.train = t.get<nk::TrainConfig>();
    }
  }
  if (j.contains("embed")) {
    const auto& s = j.at("embed");
    if (s.contains("featurizer")) c.embed.featurizer = s.at("featurizer").get<nk::FeaturizerConfig>();
    c.embed.dim = s.value("dim", c.embed.dim);
    c.embed.seed = s.value("seed", c.embed.seed);
  }
  if (j.contains("collab")) {
    const auto& s = j.at("collab");
    c.collab.m = s.value("m", c.collab.m);
    c.collab.r = s.value("r", c.collab.r);
    c.collab.n_c = s.value("n_c", c.collab.n_c);
    c.collab.p_c = s.value("p_c", c.collab.p_c);
    c.collab.seed = s.value("seed", c.collab.seed);
    c.collab.fractional = s.value("fractional", c.collab.fractional);
  }
  if (j.contains("selftrain")) {
    const auto& s = j.at("selftrain");
    c.selftrain.iterations = s.value("iterations", c.selftrain.iterations);
    c.selftrain.c = s.value("c", c.selftrain.c);
    if (s.contains("schedule")) c.selftrain.schedule = parse_schedule(s.at("schedule"));
    c.selftrain.epochs_per_iteration = s.value("epochs_per_iteration", c.selftrain.epochs_per_iteration);
    c.selftrain.stop_when_unchanged = s.value("stop_when_unchanged", c.selftrain.stop_when_unchanged);
  }
  c.cutoff = j.value("cutoff", c.cutoff);
  c.oracle_sample = j.value("oracle_sample", c.oracle_sample);
  if (j.contains("systems")) {
    c.systems.clear();
    for (const auto& s : j.at("systems")) c.systems.push_back(system_from_json(s));
  }
  c.ablations = j.value("ablations", c.ablations);
  c.ablation_base = j.value("ablation_base", c.ablation_base);
  c.sensitivity = j.value("sensitivity", c.sensitivity);
  c.sensitivity_k1 = j.value("sensitivity_k1", c.sensitivity_k1);
  c.save_models = j.value("save_models", c.save_models);
  c.validate();
  return c;
}

std::string config_hash(const json& j) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump(), 0)));
  return buf;
}

// ---------------------------------------------------------------- results

const SystemResult& PipelineResult::system(const std::string& name) const {
  for (const auto& s : systems)
    if (s.spec.name == name) return s;
  throw InvalidArgument("no system named " + name);
}

namespace {

json train_json(const nk::TrainReport& r) {
  return {{"epochs_run", r.epochs_run},
          {"best_epoch", r.best_epoch},
          {"best_validation_loss", r.best_validation_loss},
          {"train_loss", r.train_loss},
          {"validation_loss", r.validation_loss}};
}

json result_json(const SystemResult& r) {
  return {{"spec", system_json(r.spec)},
          {"logged", r.logged.to_json()},
          {"oracle", r.oracle.to_json()},
          {"train", train_json(r.train)},
          {"relabel",
           {{"added_positives", r.relabel.added_positives},
            {"imputed_negatives", r.relabel.imputed_negatives},
            {"targets_touched", r.relabel.targets_touched},
            {"i_star", r.relabel.i_star}}}};
}

json shortlist_json(const ShortlistMetrics& m) {
  json p = json::object(), g = json::object();
  for (const auto& [k, v] : m.precision) p[std::to_string(k)] = v;
  for (const auto& [k, v] : m.ndcg) g[std::to_string(k)] = v;
  return {{"precision", p}, {"ndcg", g}, {"utterances", m.utterances}};
}

json stats_json(const ExampleStats& s) {
  return {{"interactions", s.interactions},
          {"examples", s.examples},
          {"missing_observed", s.missing_observed},
          {"missing_fraction", s.missing_fraction()},
          {"empty_lists", s.empty_lists}};
}

}  // namespace

json PipelineResult::to_json() const {
  json sys = json::array(), abl = json::array();
  for (const auto& s : systems) sys.push_back(result_json(s));
  for (const auto& s : ablations) abl.push_back(result_json(s));
  return {{"systems", sys},
          {"ablations", abl},
          {"ablation_reference", ablation_reference ? result_json(*ablation_reference) : json(nullptr)},
          {"sensitivity", sensitivity ? result_json(*sensitivity) : json(nullptr)},
          {"shortlisters", {{"keyword", shortlist_json(keyword_sl)}, {"model", shortlist_json(model_sl)}}},
          {"keyword_logged_coverage", keyword_logged_coverage},
          {"examples", {{"rule", stats_json(rule_stats)}, {"model", stats_json(model_stats)}}},
          {"test_utterances", test_utterances},
          {"oracle_utterances", oracle_utterances},
          {"sl_vocabulary", sl_vocabulary},
          {"logging_suggestion_rate", logging_suggestion_rate}};
}

std::vector<SystemOutput> rerank_outputs(const RRModel& model, const std::vector<RerankExample>& examples) {
  const auto scores = score_examples(model, examples);
  std::vector<SystemOutput> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    SystemOutput o;
    o.utterance_id = e.utterance_id;
    std::vector<std::size_t> order(e.candidates.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[i][a] > scores[i][b]; });
    for (auto k : order) o.ranked.push_back(e.candidates.items[k].skill_id);
    o.top_score = order.empty() ? 0.0 : scores[i][order.front()];
    out.push_back(std::move(o));
  }
  return out;
}

std::string format_table(const std::vector<SystemResult>& systems) {
  std::ostringstream os;
  auto cell = [&](const std::optional<double>& v) {
    char buf[16];
    if (v) std::snprintf(buf, sizeof buf, "%7.3f", *v);
    else std::snprintf(buf, sizeof buf, "%7s", "-");
    os << buf;
  };
  std::size_t width = 8;
  for (const auto& s : systems) width = std::max(width, s.spec.name.size() + 1);
  os << std::string(width, ' ');
  for (const char* mode : {"logged", "oracle"}) {
    (void)mode;
    os << " |" << " Pre@25 Pre@40 Pre@50 Pre@75      P      R     F1";
  }
  os << " | ovl@1\n";
  for (const auto& s : systems) {
    os << s.spec.name << std::string(width - s.spec.name.size(), ' ');
    for (const MetricsReport* r : {&s.logged, &s.oracle}) {
      os << " |";
      for (double rate : kReportRates) cell(r->pre_at(rate));
      cell(r->at_cutoff.precision);
      cell(r->at_cutoff.recall);
      cell(r->at_cutoff.f1);
    }
    os << " |";
    cell(s.logged.overlap_at_1);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------- pipeline

namespace {

std::string file_stem(const std::string& name) {
  std::string s;
  for (char c : name) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return s;
}

struct Stage {
  const char* name;
  const ProgressFn& progress;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  Stage(const char* n, const ProgressFn& p) : name(n), progress(p) {
    if (progress) progress(std::string("[") + name + "] start");
  }
  ~Stage() {
    if (!progress) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1fs", secs);
    progress(std::string("[") + name + "] done in " + buf);
  }
};

template <typename F>
decltype(auto) stage(const char* name, const ProgressFn& progress, F&& f) {
  try {
    Stage s(name, progress);
    return f();
  } catch (const std::exception& e) {
    throw Error(std::string("stage ") + name + " failed: " + e.what());
  }
}

class Runner {
 public:
  Runner(const ExperimentConfig& config, std::filesystem::path out, ProgressFn progress)
      : cfg_(config), out_(std::move(out)), progress_(std::move(progress)) {}

  PipelineResult run();

 private:
  struct ExampleSet {
    std::vector<RerankExample> train, validation, test;
    ExampleStats stats;
  };

  using Trained = std::pair<RRModel, nk::TrainReport>;

  const ExampleSet& examples(bool model_sl, std::size_t k1);
  SystemResult run_system(const SystemSpec& spec);
  std::vector<SystemResult> run_systems(const std::vector<SystemSpec>& specs);
  RRModel train_baseline(const SystemSpec& spec, nk::TrainReport* report);
  void evaluate(SystemResult& r, const RRModel& model, const ExampleSet& set);
  void note(const std::string& msg) const {
    if (progress_) progress_(msg);
  }

  const ExperimentConfig& cfg_;
  std::filesystem::path out_;
  ProgressFn progress_;
  json config_json_;
  std::string hash_;

  SimulatedLog log_;
  DatasetSplit split_;
  InvertedIndex index_;
  std::optional<SLModel> sl_;
  std::mutex cache_mutex_;
  std::map<std::pair<bool, std::size_t>, ExampleSet> example_sets_;
  std::optional<AggregateMap> aggregates_;
  // Shared so a self-training system and its baseline system train the baseline once.
  std::map<std::string, std::shared_future<Trained>> baselines_;
  std::unordered_set<std::string> oracle_ids_;
  EvalContext context_;
};

const Runner::ExampleSet& Runner::examples(bool model_sl, std::size_t k1) {
  const auto key = std::make_pair(model_sl, model_sl ? k1 : std::size_t{0});
  std::lock_guard lock(cache_mutex_);
  auto it = example_sets_.find(key);
  if (it != example_sets_.end()) return it->second;
  return stage("make-examples", progress_, [&]() -> const ExampleSet& {
    CandidateConfig cc = cfg_.candidates;
    cc.k1 = k1;
    const SLModel* sl = model_sl ? &*sl_ : nullptr;
    ExampleSet set;
    set.train = make_examples(split_.train, sl, index_, cc, &set.stats);
    set.validation = make_examples(split_.validation, sl, index_, cc);
    set.test = make_examples(split_.test, sl, index_, cc);
    return example_sets_.emplace(key, std::move(set)).first->second;
  });
}

RRModel Runner::train_baseline(const SystemSpec& spec, nk::TrainReport* report) {
  const std::string key = std::string(to_string(spec.mode)) + "|" + (spec.model_sl ? "model" : "rule") + "|" +
                          std::to_string(spec.k1) + "|" + spec.features.ablated_csv();
  std::promise<Trained> promise;
  std::shared_future<Trained> future;
  bool owner = false;
  {
    std::lock_guard lock(cache_mutex_);
    auto it = baselines_.find(key);
    if (it == baselines_.end()) {
      future = promise.get_future().share();
      baselines_.emplace(key, future);
      owner = true;
    } else {
      future = it->second;
    }
  }
  if (owner) {
    try {
      const auto& set = examples(spec.model_sl, spec.k1);
      RrConfig rc = cfg_.rr;
      rc.mode = spec.mode;
      rc.features = spec.features;
      nk::TrainReport rep;
      RRModel m = stage("train-rr", progress_,
                        [&] { return train_rr(set.train, set.validation, log_.world.catalog, rc, nullptr, &rep); });
      promise.set_value({std::move(m), std::move(rep)});
    } catch (...) {
      promise.set_exception(std::current_exception());
    }
  }
  const Trained& t = future.get();
  if (report) *report = t.second;
  return t.first;
}

void Runner::evaluate(SystemResult& r, const RRModel& model, const ExampleSet& set) {
  const auto outputs = rerank_outputs(model, set.test);
  std::vector<SystemOutput> oracle_outputs;
  for (const auto& o : outputs)
    if (oracle_ids_.count(o.utterance_id)) oracle_outputs.push_back(o);
  r.logged = evaluate_outputs(outputs, context_, LabelMode::Logged, cfg_.cutoff);
  r.oracle = evaluate_outputs(oracle_outputs, context_, LabelMode::Oracle, cfg_.cutoff);
  r.logged.system = r.oracle.system = r.spec.name;
  r.logged.config_hash = r.oracle.config_hash = hash_;
  if (!out_.empty()) {
    const auto stem = file_stem(r.spec.name);
    std::ofstream(out_ / "reports" / (stem + ".logged.json")) << r.logged.to_json().dump(2) << "\n";
    std::ofstream(out_ / "reports" / (stem + ".oracle.json")) << r.oracle.to_json().dump(2) << "\n";
    write_curve_csv(sweep_curves(outputs, context_, LabelMode::Logged), out_ / "curves" / (stem + ".logged.csv"));
    write_curve_csv(sweep_curves(oracle_outputs, context_, LabelMode::Oracle), out_ / "curves" / (stem + ".oracle.csv"));
    save_suggestions(outputs, cfg_.cutoff, out_ / "suggestions" / (stem + ".jsonl"));
    if (cfg_.save_models) model.save(out_ / "models" / ("rr_" + stem + ".bin"));
  }
}

SystemResult Runner::run_system(const SystemSpec& spec) {
  note("system " + spec.name);
  SystemResult r;
  r.spec = spec;
  const auto& set = examples(spec.model_sl, spec.k1);
  switch (spec.labels) {
    case LabelPolicy::Baseline: {
      const RRModel m = train_baseline(spec, &r.train);
      evaluate(r, m, set);
      break;
    }
    case LabelPolicy::Collaborative: {
      if (!aggregates_)
        aggregates_ = stage("relabel-neighbors", progress_,
                            [&] { return neighbor_aggregates(split_.train, cfg_.embed, cfg_.collab); });
      auto train = set.train;
      r.relabel = collaborative_relabel(train, *aggregates_, cfg_.collab);
      RrConfig rc = cfg_.rr;
      rc.mode = spec.mode;
      rc.features = spec.features;
      const RRModel m = stage("train-rr", progress_,
                              [&] { return train_rr(train, set.validation, log_.world.catalog, rc, nullptr, &r.train); });
      evaluate(r, m, set);
      break;
    }
    case LabelPolicy::SelfTraining: {
      SystemSpec base = spec;
      base.labels = LabelPolicy::Baseline;
      const RRModel b = train_baseline(base, nullptr);
      auto st = stage("relabel-selftrain", progress_,
                      [&] { return self_train_relabel(set.train, set.validation, b, log_.world.catalog, cfg_.selftrain); });
      r.relabel = st.report;
      r.train.validation_loss = st.validation_loss;
      r.train.epochs_run = static_cast<int>(st.validation_loss.size());
      r.train.best_epoch = st.i_star - 1;
      evaluate(r, st.model, set);
      break;
    }
  }
  return r;
}

std::vector<SystemResult> Runner::run_systems(const std::vector<SystemSpec>& specs) {
  // Shared inputs first, so workers only read them.
  for (const auto& spec : specs) {
    examples(spec.model_sl, spec.k1);
    if (spec.labels == LabelPolicy::Collaborative && !aggregates_)
      aggregates_ = stage("relabel-neighbors", progress_,
                          [&] { return neighbor_aggregates(split_.train, cfg_.embed, cfg_.collab); });
  }
  std::vector<SystemResult> results(specs.size());
  std::vector<std::exception_ptr> errors(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      try {
        results[i] = run_system(specs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned cores = cfg_.threads ? cfg_.threads : std::max(1u, std::thread::hardware_concurrency());
  const auto n = static_cast<std::size_t>(std::min<std::size_t>(cores, specs.size()));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

PipelineResult Runner::run() {
  cfg_.validate();
  config_json_ = to_json(cfg_);
  hash_ = config_hash(config_json_);
  if (!out_.empty()) {
    for (const char* d : {"data", "models", "reports", "curves", "suggestions"}) std::filesystem::create_directories(out_ / d);
    std::ofstream(out_ / "config.json") << config_json_.dump(2) << "\n";
  }
  PipelineResult result;

  log_ = stage("simulate", progress_, [&] { return simulate_log(cfg_.world, cfg_.n_utterances); });
  std::size_t suggested = 0;
  for (const auto& x : log_.interactions) suggested += x.suggested_skill ? 1 : 0;
  result.logging_suggestion_rate =
      log_.interactions.empty() ? 0.0 : static_cast<double>(suggested) / static_cast<double>(log_.interactions.size());
  if (log_.interactions.empty()) throw Error("stage train-sl failed: empty training set");
  split_ = split_by_time(log_.interactions, cfg_.split);
  if (!out_.empty()) {
    write_simulation(log_, out_ / "data");
    save_interactions(split_.train, out_ / "data" / "train.jsonl");
    save_interactions(split_.validation, out_ / "data" / "val.jsonl");
    save_interactions(split_.test, out_ / "data" / "test.jsonl");
  }
  index_ = stage("index", progress_, [&] { return build_index(log_.world.catalog); });

  nk::TrainReport sl_report;
  sl_ = stage("train-sl", progress_, [&] { return train_sl(split_.train, split_.validation, log_.world.catalog, cfg_.sl, &sl_report); });
  result.sl_vocabulary = sl_->vocabulary().size();
  if (!out_.empty() && cfg_.save_models) {
    sl_->save(out_ / "models" / "sl_model.bin");
    save_index(index_, out_ / "models" / "index.ski");
  }

  // Evaluation population: test interactions with a logged suggestion.
  context_ = EvalContext::from_interactions(split_.test, &log_.oracle);
  std::vector<std::string> eligible;
  for (const auto& x : split_.test)
    if (x.has_feedback()) eligible.push_back(x.utterance.utterance_id);
  result.test_utterances = eligible.size();
  {
    Rng rng(Rng::splitmix(cfg_.seed ^ 0x54ULL));
    auto sample = eligible;
    rng.shuffle(sample);
    if (sample.size() > cfg_.oracle_sample) sample.resize(cfg_.oracle_sample);
    oracle_ids_.insert(sample.begin(), sample.end());
    result.oracle_utterances = oracle_ids_.size();
  }

  // Shortlisters on the oracle subset.
  stage("evaluate-sl", progress_, [&] {
    std::vector<std::pair<std::string, std::vector<std::string>>> kw, md;
    std::size_t positives = 0, covered = 0;
    for (const auto& x : split_.test) {
      if (!x.has_feedback()) continue;
      const auto list = retrieve(index_, x.utterance.text, cfg_.candidates.k2);
      if (*x.accepted == 1) {
        ++positives;
        covered += list.contains(*x.suggested_skill) ? 1 : 0;
      }
      if (!oracle_ids_.count(x.utterance.utterance_id)) continue;
      std::vector<std::string> a, b;
      for (const auto& c : list.items) a.push_back(c.skill_id);
      for (const auto& c : sl_->retrieve(x.utterance.text, cfg_.candidates.k1).items) b.push_back(c.skill_id);
      kw.emplace_back(x.utterance.utterance_id, std::move(a));
      md.emplace_back(x.utterance.utterance_id, std::move(b));
    }
    const std::vector<std::size_t> ks{1, 3, 5, 40};
    result.keyword_sl = shortlist_metrics(kw, log_.oracle, ks);
    result.model_sl = shortlist_metrics(md, log_.oracle, ks);
    result.keyword_logged_coverage = positives ? static_cast<double>(covered) / static_cast<double>(positives) : 1.0;
    return 0;
  });

  // Every system, ablation and sensitivity run is independent given the shared stages above.
  std::vector<SystemSpec> specs = cfg_.systems;
  const std::size_t n_systems = specs.size();
  std::size_t n_ablations = 0;
  bool sensitivity = false;
  if (cfg_.ablations || cfg_.sensitivity) {
    const auto base = std::find_if(cfg_.systems.begin(), cfg_.systems.end(),
                                   [&](const SystemSpec& s) { return s.name == cfg_.ablation_base; });
    if (base == cfg_.systems.end()) throw InvalidArgument("unknown ablation base system: " + cfg_.ablation_base);
    if (cfg_.ablations) {
      for (const auto& feature : FeatureMask::names()) {
        SystemSpec s = *base;
        s.features = FeatureMask::ablating(feature);
        s.name = base->name + "-no-" + feature;
        specs.push_back(s);
        ++n_ablations;
      }
    }
    if (cfg_.sensitivity) {
      SystemSpec s = *base;
      s.k1 = cfg_.sensitivity_k1;
      s.name = base->name + "-k1-" + std::to_string(cfg_.sensitivity_k1);
      specs.push_back(s);
      sensitivity = true;
    }
  }
  auto done = run_systems(specs);
  result.systems.assign(done.begin(), done.begin() + static_cast<std::ptrdiff_t>(n_systems));
  result.ablations.assign(done.begin() + static_cast<std::ptrdiff_t>(n_systems),
                          done.begin() + static_cast<std::ptrdiff_t>(n_systems + n_ablations));
  if (sensitivity) result.sensitivity = done.back();
  if (cfg_.ablations || cfg_.sensitivity) result.ablation_reference = result.system(cfg_.ablation_base);
  result.rule_stats = examples(false, cfg_.candidates.k1).stats;
  if (sl_) result.model_stats = examples(true, cfg_.candidates.k1).stats;

  if (!out_.empty()) {
    std::ofstream(out_ / "summary.json") << result.to_json().dump(2) << "\n";
    std::vector<SystemResult> all = result.systems;
    all.insert(all.end(), result.ablations.begin(), result.ablations.end());
    if (result.sensitivity) all.push_back(*result.sensitivity);
    std::ofstream(out_ / "table.txt") << format_table(all);
  }
  return result;
}

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                            const ProgressFn& progress) {
  ProgressFn serialized;
  if (progress) {
    auto mutex = std::make_shared<std::mutex>();
    serialized = [mutex, progress](const std::string& msg) {
      std::lock_guard lock(*mutex);
      progress(msg);
    };
  }
  Runner runner(config, out_dir, std::move(serialized));
  return runner.run();
}

}  // namespace skillrec
