#include <doctest.h>

#include <string>

#include "helpers.hpp"
#include "skillrec/error.hpp"
#include "skillrec/pipeline.hpp"

using namespace skillrec;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.n_utterances = 1500;
  c.sl.embed_dim = 16;
  c.sl.hidden = {32};
  c.sl.train.max_epochs = 2;
  c.rr.train.max_epochs = 2;
  c.selftrain.iterations = 2;
  c.oracle_sample = 100;
  c.ablations = false;
  c.sensitivity = false;
  std::vector<SystemSpec> keep;
  for (const auto& s : default_systems())
    if (s.name == "pointwise+rule" || s.name == "collab+model") keep.push_back(s);
  c.systems = keep;
  return c;
}

void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    REQUIRE(fs::exists(b / rel));
    CHECK_MESSAGE(testutil::slurp(e.path()) == testutil::slurp(b / rel), rel.string());
    ++files;
  }
  CHECK(files > 10);
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("default systems") {
    const auto systems = default_systems();
    REQUIRE(systems.size() == 7);
    CHECK(systems.front().name == "pointwise+rule");
    CHECK(systems.front().mode == RerankMode::Pointwise);
    CHECK_NOTHROW(ExperimentConfig{}.validate());
  }

  TEST_CASE("config JSON round trip and hash") {
    auto c = small_config();
    c.apply_seed(7);
    const auto j = to_json(c);
    const auto back = experiment_config_from_json(j);
    CHECK(to_json(back) == j);
    CHECK(config_hash(j) == config_hash(to_json(back)));
    auto d = c;
    d.cutoff = 0.6;
    CHECK(config_hash(to_json(d)) != config_hash(j));
    CHECK(experiment_config_from_json(nlohmann::json::object()).n_utterances == 20000);
  }

  TEST_CASE("invalid configs") {
    auto c = small_config();
    c.ablations = true;
    c.ablation_base = "nope";
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = small_config();
    c.cutoff = 1.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = small_config();
    c.systems.push_back(c.systems.front());
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
  }

  TEST_CASE("empty log fails at the shortlisting stage") {
    auto c = small_config();
    c.n_utterances = 0;
    try {
      run_pipeline(c);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()) == "stage train-sl failed: empty training set");
    }
  }

  TEST_CASE("small end-to-end run is reproducible") {
    testutil::TempDir dir("pipe");
    const auto c = small_config();
    const auto r1 = run_pipeline(c, dir / "a");
    const auto r2 = run_pipeline(c, dir / "b");
    REQUIRE(r1.systems.size() == 2);
    CHECK(r1.to_json() == r2.to_json());
    expect_same_tree(dir / "a", dir / "b");
    for (const char* f : {"summary.json", "table.txt", "config.json", "data/skills.jsonl", "data/test.jsonl"})
      CHECK(fs::exists(dir / "a" / f));
    const auto& s = r1.system("collab+model");
    CHECK(s.logged.utterances == r1.test_utterances);
    CHECK(s.oracle.utterances <= 100);
    CHECK(s.train.epochs_run >= 1);
    CHECK_THROWS(r1.system("missing"));
    CHECK(format_table(r1.systems).find("collab+model") != std::string::npos);
  }

  TEST_CASE("worker threads do not change any output") {
    testutil::TempDir dir("pipe_threads");
    auto c = small_config();
    c.systems.clear();
    for (const auto& s : default_systems())
      if (s.name == "listwise+model" || s.name == "selftrain+model" || s.name == "collab+rule") c.systems.push_back(s);
    c.ablation_base = "listwise+model";
    c.sensitivity = true;
    c.threads = 1;
    const auto serial = run_pipeline(c, dir / "serial");
    c.threads = 4;
    const auto parallel = run_pipeline(c, dir / "parallel");
    CHECK(serial.to_json() == parallel.to_json());
    expect_same_tree(dir / "serial", dir / "parallel");
    REQUIRE(parallel.sensitivity);
    // The baseline keeps its own training report even when self-training trained it first.
    CHECK(parallel.system("listwise+model").train.epochs_run >= 1);
  }
}
