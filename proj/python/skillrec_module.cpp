#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "skillrec/catalog.hpp"
#include "skillrec/error.hpp"
#include "skillrec/evalkit.hpp"
#include "skillrec/keyword_sl.hpp"
#include "skillrec/model_sl.hpp"
#include "skillrec/pipeline.hpp"
#include "skillrec/reranker.hpp"
#include "skillrec/simulate.hpp"
#include "skillrec/text.hpp"

namespace py = pybind11;
using namespace skillrec;
using Scored = std::vector<std::pair<std::string, double>>;

namespace {

// JSON crosses the boundary as text; the Python side sees plain dicts.
py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Scored scored(const CandidateList& list) {
  Scored out;
  for (const auto& c : list.items) out.emplace_back(c.skill_id, c.score);
  return out;
}

CandidateList candidate_list(const Scored& items, CandidateSource source) {
  CandidateList list;
  for (const auto& [id, score] : items) list.items.push_back({id, score, source, -1});
  list.k = list.items.size();
  return list;
}

CombinedCandidates combined_from(const py::list& items) {
  CombinedCandidates c;
  for (const auto& item : items) {
    const auto t = item.cast<py::tuple>();
    c.items.push_back({t[0].cast<std::string>(), t[2].cast<double>(), parse_source(t[1].cast<std::string>()), -1});
  }
  return c;
}

py::list combined_to_python(const CombinedCandidates& c) {
  py::list out;
  for (const auto& x : c.items) out.append(py::make_tuple(x.skill_id, to_string(x.source), x.score));
  return out;
}

}  // namespace

PYBIND11_MODULE(_skillrec, m) {
  m.doc() = "Two-stage skill recommendation: shortlisting, reranking, relabeling and evaluation.";

  auto base = py::register_exception<Error>(m, "SkillrecError");
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());

  m.def("tokenize", &tokenize_words, py::arg("text"));
  m.def("fnv1a64", &fnv1a64, py::arg("data"), py::arg("seed") = 0);

  py::class_<Skill>(m, "Skill")
      .def_readonly("skill_id", &Skill::skill_id)
      .def_readonly("name", &Skill::name)
      .def_readonly("description", &Skill::description)
      .def_readonly("example_phrases", &Skill::example_phrases)
      .def_readonly("category", &Skill::category)
      .def_readonly("subcategory", &Skill::subcategory)
      .def_readonly("popularity", &Skill::popularity)
      .def("__repr__", [](const Skill& s) { return "<Skill " + s.skill_id + " '" + s.name + "'>"; });

  py::class_<Catalog>(m, "Catalog")
      .def_static("load", &load_catalog, py::arg("path"))
      .def("save", [](const Catalog& c, const std::filesystem::path& p) { save_catalog(c, p); })
      .def("__len__", &Catalog::size)
      .def("__getitem__", [](const Catalog& c, const std::string& id) { return c.at(id); })
      .def("__contains__", [](const Catalog& c, const std::string& id) { return c.find(id) != nullptr; })
      .def_property_readonly("skills", &Catalog::skills)
      .def_property_readonly("categories", &Catalog::categories)
      .def_property_readonly("content_hash", &Catalog::content_hash);

  py::class_<InvertedIndex>(m, "KeywordIndex")
      .def(py::init([](const Catalog& c) { return build_index(c); }), py::arg("catalog"))
      .def_static("load", &load_index, py::arg("path"))
      .def("save", [](const InvertedIndex& i, const std::filesystem::path& p) { save_index(i, p); })
      .def("retrieve", [](const InvertedIndex& i, const std::string& text, std::size_t k) { return scored(retrieve(i, text, k)); },
           py::arg("text"), py::arg("k") = 40,
           "Top-k skills by TF-IDF as (skill_id, score), ties by popularity then id.");

  py::class_<SLModel>(m, "ModelShortlister")
      .def_static("load", &SLModel::load, py::arg("path"))
      .def_property_readonly("vocabulary", &SLModel::vocabulary)
      .def("retrieve", [](const SLModel& s, const std::string& text, std::size_t k) { return scored(s.retrieve(text, k)); },
           py::arg("text"), py::arg("k") = 40);

  m.def(
      "combine",
      [](const Scored& model, const Scored& rule, std::size_t k_max) {
        return combined_to_python(combine(candidate_list(model, CandidateSource::Model),
                                          candidate_list(rule, CandidateSource::Rule), k_max));
      },
      py::arg("model"), py::arg("rule"), py::arg("k_max") = 0,
      "Model list first, then unseen rule entries, as (skill_id, source, score).");

  py::class_<RRModel>(m, "Reranker")
      .def_static("load", &RRModel::load, py::arg("path"))
      .def_property_readonly("mode", [](const RRModel& r) { return std::string(to_string(r.mode())); })
      .def("score", [](const RRModel& r, const std::string& text, const py::list& candidates) {
             return r.score(text, combined_from(candidates));
           },
           py::arg("text"), py::arg("candidates"), "Sigmoid score per (skill_id, source, score) candidate.");

  m.def("precision_at_k", &precision_at_k, py::arg("ranked"), py::arg("relevant"), py::arg("k"));
  m.def("ndcg_at_k", &ndcg_at_k, py::arg("ranked"), py::arg("relevant"), py::arg("k"));
  m.def("spearman", &spearman, py::arg("a"), py::arg("b"));
  m.def("cutoff_for_rate", &cutoff_for_rate, py::arg("top_scores"), py::arg("rate"));

  m.def(
      "evaluate",
      [](const std::filesystem::path& suggestions, const std::filesystem::path& interactions,
         const std::optional<std::filesystem::path>& oracle_path, const std::string& mode, double cutoff) {
        const auto logs = load_interactions(interactions);
        std::optional<RelevanceOracle> oracle;
        if (oracle_path) oracle = load_oracle(*oracle_path);
        const auto ctx = EvalContext::from_interactions(logs, oracle ? &*oracle : nullptr);
        auto outputs = load_suggestions(suggestions);
        const auto label_mode = parse_label_mode(mode);
        if (label_mode == LabelMode::Oracle) {
          if (!oracle) throw InvalidArgument("oracle mode needs an oracle file");
          std::erase_if(outputs, [&](const SystemOutput& o) { return oracle->find(o.utterance_id) == nullptr; });
        }
        return to_python(evaluate_outputs(outputs, ctx, label_mode, cutoff).to_json());
      },
      py::arg("suggestions"), py::arg("interactions"), py::arg("oracle") = py::none(), py::arg("mode") = "logged",
      py::arg("cutoff") = 0.5);

  m.def("default_world_config", [] { return to_python(to_json(WorldConfig{})); });
  m.def(
      "simulate",
      [](const py::object& config, std::size_t n, const std::filesystem::path& out_dir) {
        const auto cfg = world_config_from_json(config.is_none() ? nlohmann::json::object() : from_python(config));
        const auto log = simulate_log(cfg, n);
        write_simulation(log, out_dir);
        std::size_t suggested = 0;
        for (const auto& x : log.interactions) suggested += x.suggested_skill.has_value();
        return py::dict(py::arg("utterances") = n, py::arg("skills") = log.world.catalog.size(),
                        py::arg("suggested") = suggested);
      },
      py::arg("config") = py::none(), py::arg("n") = 20000, py::arg("out_dir"),
      "Writes skills, interactions, oracle and world config below out_dir.");
  m.def(
      "calibrate_tau_log",
      [](const py::object& config, std::size_t n, double rate) {
        return calibrate_tau_log(world_config_from_json(config.is_none() ? nlohmann::json::object() : from_python(config)),
                                 n, rate);
      },
      py::arg("config") = py::none(), py::arg("n") = 10000, py::arg("rate") = 0.75);

  m.def("default_experiment_config", [] { return to_python(to_json(ExperimentConfig{})); });
  m.def(
      "run_pipeline",
      [](const py::object& config, const std::optional<std::filesystem::path>& out_dir, unsigned threads) {
        auto cfg = experiment_config_from_json(config.is_none() ? nlohmann::json::object() : from_python(config));
        cfg.threads = threads;
        PipelineResult result;
        {
          py::gil_scoped_release release;
          result = run_pipeline(cfg, out_dir.value_or(std::filesystem::path{}));
        }
        return to_python(result.to_json());
      },
      py::arg("config") = py::none(), py::arg("out_dir") = py::none(), py::arg("threads") = 0,
      "Runs every stage for every configured system and returns the summary.");
}
