#include "skillrec/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "skillrec/error.hpp"
#include "skillrec/rng.hpp"
#include "skillrec/text.hpp"

namespace skillrec {

void WorldConfig::validate() const {
  if (n_clusters < 1 || n_skills < n_clusters) throw InvalidArgument("world: need n_skills >= n_clusters >= 1");
  if (n_skills > 5 * n_clusters) throw InvalidArgument("world: clusters hold at most 5 skills");
  if (n_categories < 1 || subcategories_per_category < 1) throw InvalidArgument("world: need categories");
  if (specific_tokens < 0 || family_tokens < 0 || specific_tokens + family_tokens < 2)
    throw InvalidArgument("world: clusters need at least two core tokens");
  if (core_pool < specific_tokens * n_clusters) throw InvalidArgument("world: core pool too small for the clusters");
  if (desc_noise_tokens < 0) throw InvalidArgument("world: desc_noise_tokens must be >= 0");
  if (carrier_phrases < 1 || noise_pool < 1) throw InvalidArgument("world: empty carrier or noise pool");
  for (double p : {drop_prob, corrupt_prob, noise_prob, cross_noise, a_rel, a_irr, popular_fraction, pick_margin})
    if (p < 0.0 || p > 1.0) throw InvalidArgument("world: probabilities must lie in [0, 1]");
  if (zipf_exponent < 0.0) throw InvalidArgument("world: zipf exponent must be >= 0");
  if (k2 < 1) throw InvalidArgument("world: K2 must be >= 1");
}

nlohmann::json to_json(const WorldConfig& c) {
  return {{"n_skills", c.n_skills},
          {"n_clusters", c.n_clusters},
          {"n_categories", c.n_categories},
          {"subcategories_per_category", c.subcategories_per_category},
          {"core_pool", c.core_pool},
          {"specific_tokens", c.specific_tokens},
          {"family_tokens", c.family_tokens},
          {"carrier_phrases", c.carrier_phrases},
          {"noise_pool", c.noise_pool},
          {"zipf_exponent", c.zipf_exponent},
          {"drop_prob", c.drop_prob},
          {"corrupt_prob", c.corrupt_prob},
          {"corrupt_systematic", c.corrupt_systematic},
          {"noise_prob", c.noise_prob},
          {"cross_noise", c.cross_noise},
          {"desc_noise_tokens", c.desc_noise_tokens},
          {"a_rel", c.a_rel},
          {"a_irr", c.a_irr},
          {"popular_fraction", c.popular_fraction},
          {"pick_margin", c.pick_margin},
          {"tau_log", c.tau_log},
          {"k2", c.k2},
          {"seed", c.seed}};
}

WorldConfig world_config_from_json(const nlohmann::json& j) {
  WorldConfig c;
  c.n_skills = j.value("n_skills", c.n_skills);
  c.n_clusters = j.value("n_clusters", c.n_clusters);
  c.n_categories = j.value("n_categories", c.n_categories);
  c.subcategories_per_category = j.value("subcategories_per_category", c.subcategories_per_category);
  c.core_pool = j.value("core_pool", c.core_pool);
  c.specific_tokens = j.value("specific_tokens", c.specific_tokens);
  c.family_tokens = j.value("family_tokens", c.family_tokens);
  c.carrier_phrases = j.value("carrier_phrases", c.carrier_phrases);
  c.noise_pool = j.value("noise_pool", c.noise_pool);
  c.zipf_exponent = j.value("zipf_exponent", c.zipf_exponent);
  c.drop_prob = j.value("drop_prob", c.drop_prob);
  c.corrupt_prob = j.value("corrupt_prob", c.corrupt_prob);
  c.corrupt_systematic = j.value("corrupt_systematic", c.corrupt_systematic);
  c.noise_prob = j.value("noise_prob", c.noise_prob);
  c.cross_noise = j.value("cross_noise", c.cross_noise);
  c.desc_noise_tokens = j.value("desc_noise_tokens", c.desc_noise_tokens);
  c.a_rel = j.value("a_rel", c.a_rel);
  c.a_irr = j.value("a_irr", c.a_irr);
  c.popular_fraction = j.value("popular_fraction", c.popular_fraction);
  c.pick_margin = j.value("pick_margin", c.pick_margin);
  c.tau_log = j.value("tau_log", c.tau_log);
  c.k2 = j.value("k2", c.k2);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

namespace {

const std::vector<std::string> kCarriers = {
    "play",          "open",        "start",     "tell me about", "i want",   "can you find", "let me hear",
    "show me",       "give me",     "launch",    "turn on",       "find me",  "please play",  "what is",
    "how do i",      "talk to",     "ask",       "begin",         "i need",   "help me with", "play me",
    "open up",       "start the",   "i would like", "bring up",   "run",      "get me",       "put on"};

/// Distinct pronounceable tokens built from consonant-vowel syllables.
class PseudoWords {
 public:
  explicit PseudoWords(Rng& rng) : rng_(rng) {
    for (const auto& c : kCarriers)
      for (const auto& t : tokenize_words(c)) used_.insert(t);
  }

  std::string next() {
    static const char* kCons = "bdfgklmnprstvz";
    static const char* kVow = "aeiou";
    for (;;) {
      const int syllables = 2 + static_cast<int>(rng_.below(2));
      std::string w;
      for (int s = 0; s < syllables; ++s) {
        w += kCons[rng_.below(14)];
        w += kVow[rng_.below(5)];
      }
      if (used_.insert(w).second) return w;
    }
  }

  std::vector<std::string> take(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(next());
    return out;
  }

 private:
  Rng& rng_;
  std::set<std::string> used_;
};

template <typename T>
std::vector<T> sample_without_replacement(const std::vector<T>& items, std::size_t k, Rng& rng) {
  std::vector<T> copy = items;
  k = std::min(k, copy.size());
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(copy.size() - i));
    std::swap(copy[i], copy[j]);
  }
  copy.resize(k);
  return copy;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::string two_digits(int v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", v);
  return buf;
}

}  // namespace

World gen_world(const WorldConfig& config) {
  config.validate();
  Rng rng(config.seed);
  PseudoWords words(rng);
  World w;
  w.config = config;

  const int n_sub = config.n_categories * config.subcategories_per_category;
  const auto category_tokens = words.take(static_cast<std::size_t>(config.n_categories));
  const auto family = words.take(static_cast<std::size_t>(n_sub * config.family_tokens));
  const auto core = words.take(static_cast<std::size_t>(config.core_pool));
  w.noise_tokens = words.take(static_cast<std::size_t>(config.noise_pool));
  for (int i = 0; i < config.carrier_phrases; ++i)
    w.carriers.push_back(i < static_cast<int>(kCarriers.size()) ? kCarriers[static_cast<std::size_t>(i)]
                                                                : "please " + kCarriers[static_cast<std::size_t>(i) % kCarriers.size()]);

  // Cluster sizes: one skill each, the rest spread over clusters below five.
  std::vector<int> sizes(static_cast<std::size_t>(config.n_clusters), 1);
  for (int extra = config.n_skills - config.n_clusters; extra > 0;) {
    auto g = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(config.n_clusters)));
    if (sizes[g] < 5) {
      ++sizes[g];
      --extra;
    }
  }

  std::vector<Skill> skills;
  int next_id = 0;
  for (int g = 0; g < config.n_clusters; ++g) {
    Cluster cl;
    const int sub = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_sub)));
    const int cat = sub / config.subcategories_per_category;
    cl.category = "cat" + two_digits(cat);
    cl.subcategory = cl.category + "-sub" + std::to_string(sub % config.subcategories_per_category);
    for (int t = 0; t < config.specific_tokens; ++t)
      cl.core_tokens.push_back(core[static_cast<std::size_t>(config.specific_tokens * g + t)]);
    for (int t = 0; t < config.family_tokens; ++t)
      cl.core_tokens.push_back(family[static_cast<std::size_t>(config.family_tokens * sub + t)]);

    for (int s = 0; s < sizes[static_cast<std::size_t>(g)]; ++s) {
      Skill sk;
      sk.skill_id = "skill_" + std::to_string(1000 + next_id++).substr(1);
      auto name = sample_without_replacement(cl.core_tokens, 1 + rng.below(2), rng);
      const auto unique = words.take(1 + rng.below(2));
      name.insert(name.end(), unique.begin(), unique.end());
      rng.shuffle(name);
      sk.name = join(name);

      std::vector<std::string> desc = cl.core_tokens;
      desc.push_back(category_tokens[static_cast<std::size_t>(cat)]);
      for (int k = 0; k < config.desc_noise_tokens; ++k) {
        if (config.cross_noise > 0.0 && config.specific_tokens > 0 && config.n_clusters > 1 &&
            rng.bernoulli(config.cross_noise)) {
          // A specific token of some other cluster: lexical overlap without relevance.
          auto other = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.n_clusters - 1)));
          if (other >= g) ++other;
          desc.push_back(core[static_cast<std::size_t>(config.specific_tokens * other +
                                                       static_cast<int>(rng.below(static_cast<std::uint64_t>(config.specific_tokens))))]);
        } else {
          desc.push_back(w.noise_tokens[rng.below(w.noise_tokens.size())]);
        }
      }
      rng.shuffle(desc);
      sk.description = join(desc);

      sk.example_phrases.push_back(w.carriers[rng.below(w.carriers.size())] + " " + sk.name);
      sk.example_phrases.push_back(w.carriers[rng.below(w.carriers.size())] + " " +
                                   cl.core_tokens[rng.below(cl.core_tokens.size())] + " " + unique.front());
      sk.category = cl.category;
      sk.subcategory = cl.subcategory;
      w.cluster_of.emplace(sk.skill_id, g);
      cl.skills.push_back(sk.skill_id);
      skills.push_back(std::move(sk));
    }
    std::sort(cl.skills.begin(), cl.skills.end());
    w.clusters.push_back(std::move(cl));
  }

  // Popular skills: a fixed fraction chosen uniformly.
  std::vector<std::size_t> order(skills.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const auto n_pop = static_cast<std::size_t>(std::llround(config.popular_fraction * static_cast<double>(skills.size())));
  for (std::size_t i = 0; i < n_pop; ++i) skills[order[i]].popularity = 1;

  // Zipf popularity over a seeded ranking of clusters.
  std::vector<int> rank(static_cast<std::size_t>(config.n_clusters));
  for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = static_cast<int>(i);
  rng.shuffle(rank);
  std::vector<double> weight(rank.size());
  double total = 0.0;
  for (std::size_t i = 0; i < rank.size(); ++i) {
    weight[static_cast<std::size_t>(rank[i])] = 1.0 / std::pow(static_cast<double>(i + 1), config.zipf_exponent);
    total += weight[static_cast<std::size_t>(rank[i])];
  }
  double acc = 0.0;
  for (double v : weight) {
    acc += v / total;
    w.cluster_cdf.push_back(acc);
  }
  w.cluster_cdf.back() = 1.0;

  w.catalog = Catalog(std::move(skills));
  return w;
}

GeneratedUtterance gen_utterance(const World& world, Rng& rng, std::size_t ordinal) {
  const auto& c = world.config;
  GeneratedUtterance out;
  const double u = rng.uniform();
  out.cluster = static_cast<int>(std::upper_bound(world.cluster_cdf.begin(), world.cluster_cdf.end(), u) -
                                 world.cluster_cdf.begin());
  out.cluster = std::min(out.cluster, static_cast<int>(world.clusters.size()) - 1);
  const Cluster& cl = world.clusters[static_cast<std::size_t>(out.cluster)];

  auto core = sample_without_replacement(cl.core_tokens, 2 + rng.below(2), rng);
  std::vector<std::string> kept;
  for (auto& t : core) {
    if (rng.bernoulli(c.drop_prob)) continue;
    if (rng.bernoulli(c.corrupt_prob)) {
      if (c.corrupt_systematic) {
        const std::uint64_t h = fnv1a64(t);
        const auto pos = static_cast<std::size_t>(h % t.size());
        char ch = static_cast<char>('a' + (h >> 32) % 26);
        if (ch == t[pos]) ch = ch == 'z' ? 'a' : static_cast<char>(ch + 1);
        t[pos] = ch;
      } else {
        const auto pos = static_cast<std::size_t>(rng.below(t.size()));
        char ch;
        do {
          ch = static_cast<char>('a' + rng.below(26));
        } while (ch == t[pos]);
        t[pos] = ch;
      }
    }
    kept.push_back(t);
  }
  if (rng.bernoulli(c.noise_prob)) {
    const auto pos = static_cast<std::size_t>(rng.below(kept.size() + 1));
    kept.insert(kept.begin() + static_cast<std::ptrdiff_t>(pos), world.noise_tokens[rng.below(world.noise_tokens.size())]);
  }
  std::string text = world.carriers[rng.below(world.carriers.size())];
  for (const auto& t : kept) text += " " + t;

  char id[32];
  std::snprintf(id, sizeof id, "u%06zu", ordinal);
  out.utterance = {id, text, 1700000000 + static_cast<std::int64_t>(ordinal) * 30};
  out.relevant = cl.skills;
  return out;
}

LoggingDecision logging_policy(const InvertedIndex& index, std::string_view text, std::size_t k2, double tau_log,
                               double pick_margin, Rng* rng) {
  LoggingDecision d;
  d.candidates = retrieve(index, text, k2);
  if (d.candidates.empty() || d.candidates.items.front().score < tau_log) return d;
  std::size_t pick = 0;
  if (pick_margin > 0.0 && rng) {
    const double floor = (1.0 - pick_margin) * d.candidates.items.front().score;
    std::size_t eligible = 1;
    while (eligible < d.candidates.size() && d.candidates.items[eligible].score >= floor) ++eligible;
    pick = static_cast<std::size_t>(rng->below(eligible));
  }
  d.suggested = d.candidates.items[pick].skill_id;
  return d;
}

int user_feedback(const World& world, const GeneratedUtterance& utterance, const std::string& suggested, Rng& rng) {
  const bool relevant = std::binary_search(utterance.relevant.begin(), utterance.relevant.end(), suggested);
  return rng.bernoulli(relevant ? world.config.a_rel : world.config.a_irr) ? 1 : 0;
}

SimulatedLog simulate_log(const WorldConfig& config, std::size_t n_utterances) {
  SimulatedLog log{gen_world(config), {}, {}, {}};
  const auto index = build_index(log.world.catalog);
  Rng utter_rng(Rng::splitmix(config.seed + 1));
  Rng feedback_rng(Rng::splitmix(config.seed + 2));
  Rng pick_rng(Rng::splitmix(config.seed + 3));
  std::vector<RelevanceOracle::Entry> entries;
  for (std::size_t i = 0; i < n_utterances; ++i) {
    auto gu = gen_utterance(log.world, utter_rng, i);
    auto decision = logging_policy(index, gu.utterance.text, config.k2, config.tau_log, config.pick_margin, &pick_rng);
    LoggedInteraction x;
    x.utterance = gu.utterance;
    if (decision.suggested) {
      x.suggested_skill = decision.suggested;
      x.accepted = user_feedback(log.world, gu, *decision.suggested, feedback_rng);
      x.logged_candidates = std::move(decision.candidates);
    }
    log.interactions.push_back(std::move(x));
    log.clusters.push_back(gu.cluster);
    entries.push_back({gu.utterance.utterance_id, gu.relevant});
  }
  log.oracle = RelevanceOracle(std::move(entries));
  return log;
}

void write_simulation(const SimulatedLog& log, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_catalog(log.world.catalog, dir / "skills.jsonl");
  save_interactions(log.interactions, dir / "interactions.jsonl");
  save_oracle(log.oracle, dir / "oracle.jsonl");
  std::ofstream cfg(dir / "world.json", std::ios::binary);
  if (!cfg) throw Error("cannot write " + (dir / "world.json").string());
  cfg << to_json(log.world.config).dump(2) << "\n";
}

double calibrate_tau_log(const WorldConfig& config, std::size_t n, double target_rate) {
  if (!(target_rate > 0.0 && target_rate <= 1.0)) throw InvalidArgument("calibrate: rate must be in (0, 1]");
  const World world = gen_world(config);
  const auto index = build_index(world.catalog);
  Rng rng(Rng::splitmix(config.seed + 1));
  std::vector<double> tops;
  for (std::size_t i = 0; i < n; ++i) {
    const auto gu = gen_utterance(world, rng, i);
    const auto list = retrieve(index, gu.utterance.text, 1);
    tops.push_back(list.empty() ? 0.0 : list.items.front().score);
  }
  std::sort(tops.begin(), tops.end(), std::greater<>());
  const auto k = std::min(tops.size() - 1, static_cast<std::size_t>(std::ceil(target_rate * static_cast<double>(n))) - 1);
  return tops[k];
}

}  // namespace skillrec
