#include <doctest.h>

#include <algorithm>
#include <set>

#include "helpers.hpp"
#include "skillrec/catalog.hpp"
#include "skillrec/error.hpp"
#include "skillrec/simulate.hpp"
#include "skillrec/text.hpp"

using namespace skillrec;
using testutil::TempDir;

namespace {

std::string skill_line(const std::string& id, const std::string& cat = "c1", const std::string& sub = "c1-a") {
  return R"({"skill_id":")" + id + R"(","name":"thunder sound","description":"rain","example_phrases":[],"category":")" +
         cat + R"(","subcategory":")" + sub + R"(","popularity":0})";
}

LoggedInteraction make_interaction(const std::string& id, std::int64_t ts) {
  LoggedInteraction x;
  x.utterance = {id, "play " + id, ts};
  return x;
}

}  // namespace

TEST_SUITE("text") {
  TEST_CASE("tokenizer lowercases and strips edge punctuation") {
    const auto t = tokenize_words("  Play THUNDER, sounds!  it's ");
    CHECK(t == std::vector<std::string>{"play", "thunder", "sounds", "it's"});
    CHECK(tokenize_words("").empty());
    CHECK(tokenize_words(" ... ").empty());
  }

  TEST_CASE("content check") {
    CHECK_FALSE(has_content(" \t\n"));
    CHECK(has_content(" a "));
  }

  TEST_CASE("fnv1a64 matches the published test vector and is seed sensitive") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("a", 1) != fnv1a64("a"));
  }
}

TEST_SUITE("catalog") {
  TEST_CASE("file with three valid lines loads three skills") {
    TempDir dir("cat3");
    testutil::spit(dir / "s.jsonl", skill_line("s1") + "\n" + skill_line("s2") + "\n" + skill_line("s3") + "\n");
    const auto c = load_catalog(dir / "s.jsonl");
    CHECK(c.size() == 3);
    CHECK(c.at("s2").name == "thunder sound");
    CHECK(c.position("s3") == 2u);
    CHECK(c.find("nope") == nullptr);
  }

  TEST_CASE("duplicate skill ids are rejected") {
    TempDir dir("catdup");
    testutil::spit(dir / "s.jsonl", skill_line("s1") + "\n" + skill_line("s1") + "\n");
    CHECK_THROWS_AS(load_catalog(dir / "s.jsonl"), ValidationError);
  }

  TEST_CASE("malformed json names the line") {
    TempDir dir("catbad");
    testutil::spit(dir / "s.jsonl", skill_line("s1") + "\n{not json\n");
    try {
      load_catalog(dir / "s.jsonl");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }

  TEST_CASE("subcategory under two categories is rejected") {
    std::vector<Skill> skills(2);
    skills[0] = {"a", "n", "d", {}, "c1", "shared", 0};
    skills[1] = {"b", "n", "d", {}, "c2", "shared", 0};
    CHECK_THROWS_AS(Catalog{skills}, ValidationError);
  }

  TEST_CASE("simulated catalog round-trips byte-identically") {
    TempDir dir("catrt");
    const auto world = gen_world(WorldConfig{});
    REQUIRE(world.catalog.size() == 300);
    save_catalog(world.catalog, dir / "a.jsonl");
    const auto loaded = load_catalog(dir / "a.jsonl");
    CHECK(loaded.skills() == world.catalog.skills());
    save_catalog(loaded, dir / "b.jsonl");
    CHECK(testutil::slurp(dir / "a.jsonl") == testutil::slurp(dir / "b.jsonl"));
    CHECK(loaded.content_hash() == world.catalog.content_hash());
  }

  TEST_CASE("interaction records parse feedback fields") {
    TempDir dir("inter");
    testutil::spit(dir / "i.jsonl",
                   R"({"utterance_id":"u1","text":"play rain","timestamp":5,"suggested_skill":"s1","accepted":1,)"
                   R"("logged_candidates":[{"skill_id":"s1","score":2.0,"source":"rule"}]})"
                   "\n"
                   R"({"utterance_id":"u2","text":"hello","timestamp":6,"suggested_skill":null})"
                   "\n");
    const auto xs = load_interactions(dir / "i.jsonl");
    REQUIRE(xs.size() == 2);
    CHECK(xs[0].accepted == 1);
    CHECK(xs[0].suggested_skill == "s1");
    CHECK(xs[0].has_feedback());
    CHECK_FALSE(xs[1].suggested_skill.has_value());
    CHECK_FALSE(xs[1].accepted.has_value());
    CHECK_FALSE(xs[1].has_feedback());
  }

  TEST_CASE("inconsistent feedback fields fail validation") {
    auto x = make_interaction("u1", 1);
    x.accepted = 1;
    CHECK_THROWS_AS(validate(x), ValidationError);
    x.suggested_skill = "s1";
    x.accepted = 2;
    CHECK_THROWS_AS(validate(x), ValidationError);
  }

  TEST_CASE("20,000 simulated interactions round-trip") {
    TempDir dir("interrt");
    const auto log = simulate_log(WorldConfig{}, 20000);
    save_interactions(log.interactions, dir / "x.jsonl");
    const auto back = load_interactions(dir / "x.jsonl");
    // The shortlist depth is not stored; a loaded list reports its own size.
    auto expected = log.interactions;
    for (auto& x : expected)
      if (x.logged_candidates) x.logged_candidates->k = x.logged_candidates->size();
    CHECK(back == expected);
    save_interactions(back, dir / "y.jsonl");
    CHECK(testutil::slurp(dir / "x.jsonl") == testutil::slurp(dir / "y.jsonl"));

    save_oracle(log.oracle, dir / "o.jsonl");
    CHECK(load_oracle(dir / "o.jsonl") == log.oracle);

    const auto split = split_by_time(log.interactions);
    CHECK(split.train.size() == 16000);
    CHECK(split.validation.size() == 2000);
    CHECK(split.test.size() == 2000);
    CHECK(split.train.back().utterance.timestamp <= split.validation.front().utterance.timestamp);
    CHECK(split.validation.back().utterance.timestamp <= split.test.front().utterance.timestamp);
  }

  TEST_CASE("split of ten records is 8/1/1 with the latest record in test") {
    std::vector<LoggedInteraction> xs;
    for (int i = 9; i >= 0; --i) xs.push_back(make_interaction("u" + std::to_string(i), 100 + i));
    const auto s = split_by_time(xs, {0.8, 0.1, 0.1});
    CHECK(s.train.size() == 8);
    CHECK(s.validation.size() == 1);
    CHECK(s.test.size() == 1);
    CHECK(s.test.front().utterance.timestamp == 109);
  }

  TEST_CASE("equal timestamps split stably by input order and partition the input") {
    std::vector<LoggedInteraction> xs;
    for (int i = 0; i < 10; ++i) xs.push_back(make_interaction("u" + std::to_string(i), 7));
    const auto s = split_by_time(xs);
    REQUIRE(s.train.size() == 8);
    CHECK(s.train.front().utterance.utterance_id == "u0");
    CHECK(s.validation.front().utterance.utterance_id == "u8");
    CHECK(s.test.front().utterance.utterance_id == "u9");
    std::multiset<std::string> all;
    for (const auto* part : {&s.train, &s.validation, &s.test})
      for (const auto& x : *part) all.insert(x.utterance.utterance_id);
    std::multiset<std::string> in;
    for (const auto& x : xs) in.insert(x.utterance.utterance_id);
    CHECK(all == in);
  }

  TEST_CASE("split preconditions") {
    CHECK_THROWS_AS(split_by_time({}), InvalidArgument);
    std::vector<LoggedInteraction> xs{make_interaction("a", 1)};
    CHECK_THROWS_AS(split_by_time(xs, {0.5, 0.1, 0.1}), InvalidArgument);
  }

  TEST_CASE("oracle rejects empty relevant sets and unknown skills") {
    CHECK_THROWS_AS(RelevanceOracle(std::vector<RelevanceOracle::Entry>{{"u1", {}}}), ValidationError);
    RelevanceOracle o(std::vector<RelevanceOracle::Entry>{{"u1", {"zzz"}}});
    CHECK(o.is_relevant("u1", "zzz"));
    CHECK_FALSE(o.is_relevant("u2", "zzz"));
    const auto world = gen_world(WorldConfig{});
    CHECK_THROWS_AS(o.validate_against(world.catalog), ValidationError);
  }
}
