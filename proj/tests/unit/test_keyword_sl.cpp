#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "helpers.hpp"
#include "skillrec/error.hpp"
#include "skillrec/keyword_sl.hpp"
#include "skillrec/rng.hpp"
#include "skillrec/simulate.hpp"
#include "skillrec/text.hpp"

using namespace skillrec;

namespace {

Skill named(const std::string& id, const std::string& name, int popularity = 0) {
  return Skill{id, name, "", {}, "c", "c-s", popularity};
}

// Scores every skill from its raw document: sum over query tokens of tf * idf^2.
std::vector<Candidate> brute_force(const Catalog& catalog, const std::string& text, std::size_t k) {
  const double n = static_cast<double>(catalog.size());
  std::vector<std::map<std::string, int>> tf(catalog.size());
  std::map<std::string, int> df;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    for (const auto& t : tokenize_words(skill_document(catalog[i]))) tf[i][t]++;
    for (const auto& [t, c] : tf[i]) df[t]++;
  }
  struct Row {
    double score;
    int pop;
    std::string id;
  };
  std::vector<Row> rows;
  const auto q = tokenize_words(text);
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    double s = 0.0;
    for (const auto& t : q) {
      auto it = tf[i].find(t);
      if (it == tf[i].end()) continue;
      const double idf = std::log((1.0 + n) / (1.0 + df[t])) + 1.0;
      // Same association as the index so exact ties stay exact and the tie-break is comparable.
      s += it->second * (idf * idf);
    }
    if (s > 0.0) rows.push_back({s, catalog[i].popularity, catalog[i].skill_id});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.pop != b.pop) return a.pop > b.pop;
    return a.id < b.id;
  });
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < rows.size() && i < k; ++i) out.push_back({rows[i].id, rows[i].score, CandidateSource::Rule, -1});
  return out;
}

}  // namespace

TEST_SUITE("keyword_sl") {
  TEST_CASE("index terms and document frequencies") {
    const auto one = build_index(Catalog({named("s1", "thunder sound")}));
    CHECK(one.term_count() == 2);
    CHECK(one.df("thunder") == 1);
    CHECK(one.df("sound") == 1);
    const auto two = build_index(Catalog({named("s1", "thunder sound"), named("s2", "rain sound")}));
    CHECK(two.df("sound") == 2);
    CHECK(two.df("missing") == 0);
  }

  TEST_CASE("document frequencies match a brute-force scan on the simulated catalog") {
    const auto world = gen_world(WorldConfig{});
    const auto index = build_index(world.catalog);
    std::set<std::pair<std::string, std::string>> pairs;
    for (const auto& s : world.catalog)
      for (const auto& t : tokenize_words(skill_document(s))) pairs.insert({t, s.skill_id});
    std::size_t total = 0;
    for (const auto& t : index.terms()) total += index.df(t);
    CHECK(total == pairs.size());
  }

  TEST_CASE("tf-idf hand evaluation") {
    const auto index = build_index(Catalog({named("d1", "thunder sound"), named("d2", "cat facts")}));
    const double expected = std::pow(std::log(1.5) + 1.0, 2);
    CHECK(tfidf_score(index, {"thunder"}, "d1") == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(1.97533).epsilon(1e-5));
    CHECK(tfidf_score(index, {"thunder"}, "d2") == 0.0);
    CHECK(tfidf_score(index, {"nothing"}, "d1") == 0.0);
    CHECK(tfidf_score(index, {"thunder", "thunder"}, "d1") == doctest::Approx(2.0 * expected).epsilon(1e-12));
    CHECK_THROWS_AS(tfidf_score(index, {"thunder"}, "zz"), InvalidArgument);
  }

  TEST_CASE("retrieval edge cases and tie-break") {
    const auto index = build_index(Catalog({named("b", "rain"), named("a", "rain"), named("c", "rain", 1),
                                            named("d", "snow")}));
    CHECK(retrieve(index, "", 5).empty());
    CHECK(retrieve(index, "hail", 5).empty());
    const auto list = retrieve(index, "rain", 40);
    REQUIRE(list.size() == 3);
    CHECK(list.items[0].skill_id == "c");
    CHECK(list.items[1].skill_id == "a");
    CHECK(list.items[2].skill_id == "b");
    for (const auto& c : list.items) CHECK(c.source == CandidateSource::Rule);
    CHECK(list.k == 40);
  }

  TEST_CASE("retrieval equals the brute-force oracle on 100 simulated utterances") {
    const auto world = gen_world(WorldConfig{});
    const auto index = build_index(world.catalog);
    Rng rng(99);
    for (std::size_t i = 0; i < 100; ++i) {
      const auto gu = gen_utterance(world, rng, i);
      const auto got = retrieve(index, gu.utterance.text, 40);
      const auto want = brute_force(world.catalog, gu.utterance.text, 40);
      REQUIRE(got.size() == want.size());
      for (std::size_t j = 0; j < want.size(); ++j) {
        CHECK(got.items[j].skill_id == want[j].skill_id);
        CHECK(got.items[j].score == doctest::Approx(want[j].score).epsilon(1e-12));
      }
      // Prefix property across K.
      const auto short_list = retrieve(index, gu.utterance.text, 10);
      for (std::size_t j = 0; j < short_list.size(); ++j) CHECK(short_list.items[j] == got.items[j]);
    }
  }

  TEST_CASE("index persistence round trip and corruption") {
    testutil::TempDir dir("ski");
    const auto world = gen_world(WorldConfig{});
    const auto index = build_index(world.catalog);
    save_index(index, dir / "i.ski");
    const auto back = load_index(dir / "i.ski");
    CHECK(back == index);
    CHECK(retrieve(back, "play some music", 40) == retrieve(index, "play some music", 40));
    auto bytes = testutil::slurp(dir / "i.ski");
    testutil::spit(dir / "t.ski", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_index(dir / "t.ski"), Error);
    bytes[0] = 'X';
    testutil::spit(dir / "m.ski", bytes);
    CHECK_THROWS_AS(load_index(dir / "m.ski"), Error);
  }
}
