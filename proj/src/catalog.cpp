#include "skillrec/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "skillrec/error.hpp"
#include "skillrec/text.hpp"

namespace skillrec {

using nlohmann::json;

const char* to_string(CandidateSource source) {
  return source == CandidateSource::Rule ? "rule" : "model";
}

CandidateSource parse_source(const std::string& text) {
  if (text == "rule") return CandidateSource::Rule;
  if (text == "model") return CandidateSource::Model;
  throw ValidationError("unknown candidate source '" + text + "'");
}

bool CandidateList::contains(const std::string& skill_id) const {
  return std::any_of(items.begin(), items.end(),
                     [&](const Candidate& c) { return c.skill_id == skill_id; });
}

Catalog::Catalog(std::vector<Skill> skills) : skills_(std::move(skills)) {
  index_.reserve(skills_.size());
  std::map<std::string, std::string> parent_of_subcategory;
  std::set<std::string> categories;
  for (std::size_t i = 0; i < skills_.size(); ++i) {
    const Skill& s = skills_[i];
    if (s.skill_id.empty()) throw ValidationError("skill with empty skill_id");
    if (!index_.emplace(s.skill_id, i).second)
      throw ValidationError("duplicate skill_id '" + s.skill_id + "'");
    if (s.category.empty() || s.subcategory.empty())
      throw ValidationError("skill '" + s.skill_id + "' has an empty category or subcategory");
    if (s.popularity != 0 && s.popularity != 1)
      throw ValidationError("skill '" + s.skill_id + "' popularity must be 0 or 1");
    auto [it, inserted] = parent_of_subcategory.emplace(s.subcategory, s.category);
    if (!inserted && it->second != s.category)
      throw ValidationError("subcategory '" + s.subcategory + "' declared under categories '" +
                            it->second + "' and '" + s.category + "'");
    categories.insert(s.category);
  }
  categories_.assign(categories.begin(), categories.end());
  for (const auto& [sub, _] : parent_of_subcategory) subcategories_.push_back(sub);
}

const Skill* Catalog::find(const std::string& skill_id) const {
  auto it = index_.find(skill_id);
  return it == index_.end() ? nullptr : &skills_[it->second];
}

const Skill& Catalog::at(const std::string& skill_id) const {
  const Skill* s = find(skill_id);
  if (!s) throw ValidationError("unknown skill_id '" + skill_id + "'");
  return *s;
}

std::optional<std::size_t> Catalog::position(const std::string& skill_id) const {
  auto it = index_.find(skill_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Catalog::content_hash() const { return fnv1a64(catalog_to_jsonl(*this)); }

void validate(const LoggedInteraction& x) {
  const std::string& id = x.utterance.utterance_id;
  if (id.empty()) throw ValidationError("interaction with empty utterance_id");
  if (!has_content(x.utterance.text))
    throw ValidationError("utterance '" + id + "' has empty text");
  if (x.accepted.has_value() && !x.suggested_skill.has_value())
    throw ValidationError("utterance '" + id + "': accepted present without suggested_skill");
  if (x.suggested_skill.has_value() && !x.accepted.has_value())
    throw ValidationError("utterance '" + id + "': suggested_skill present without accepted");
  if (x.accepted.has_value() && *x.accepted != 0 && *x.accepted != 1)
    throw ValidationError("utterance '" + id + "': accepted must be 0 or 1");
  if (x.suggested_skill && x.logged_candidates && !x.logged_candidates->contains(*x.suggested_skill))
    throw ValidationError("utterance '" + id + "': suggested skill missing from logged_candidates");
}

RelevanceOracle::RelevanceOracle(std::vector<Entry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].relevant_skills.empty())
      throw ValidationError("oracle entry '" + entries_[i].utterance_id + "' has no relevant skills");
    if (!index_.emplace(entries_[i].utterance_id, i).second)
      throw ValidationError("duplicate oracle utterance_id '" + entries_[i].utterance_id + "'");
  }
}

const std::vector<std::string>* RelevanceOracle::find(const std::string& utterance_id) const {
  auto it = index_.find(utterance_id);
  return it == index_.end() ? nullptr : &entries_[it->second].relevant_skills;
}

bool RelevanceOracle::is_relevant(const std::string& utterance_id,
                                  const std::string& skill_id) const {
  const auto* rel = find(utterance_id);
  return rel && std::find(rel->begin(), rel->end(), skill_id) != rel->end();
}

void RelevanceOracle::validate_against(const Catalog& catalog) const {
  for (const auto& e : entries_)
    for (const auto& s : e.relevant_skills)
      if (!catalog.find(s))
        throw ValidationError("oracle entry '" + e.utterance_id + "' references unknown skill '" +
                              s + "'");
}

namespace {

json skill_to_json(const Skill& s) {
  return json{{"skill_id", s.skill_id},       {"name", s.name},
              {"description", s.description}, {"example_phrases", s.example_phrases},
              {"category", s.category},       {"subcategory", s.subcategory},
              {"popularity", s.popularity}};
}

Skill skill_from_json(const json& j) {
  Skill s;
  s.skill_id = j.at("skill_id").get<std::string>();
  s.name = j.at("name").get<std::string>();
  s.description = j.at("description").get<std::string>();
  s.example_phrases = j.at("example_phrases").get<std::vector<std::string>>();
  s.category = j.at("category").get<std::string>();
  s.subcategory = j.at("subcategory").get<std::string>();
  s.popularity = j.at("popularity").get<int>();
  return s;
}

json candidates_to_json(const CandidateList& list) {
  json arr = json::array();
  for (const auto& c : list.items)
    arr.push_back(json{{"skill_id", c.skill_id}, {"source", to_string(c.source)}, {"score", c.score}});
  return arr;
}

CandidateList candidates_from_json(const json& arr) {
  CandidateList list;
  for (const auto& j : arr) {
    Candidate c;
    c.skill_id = j.at("skill_id").get<std::string>();
    c.source = parse_source(j.at("source").get<std::string>());
    c.score = j.at("score").get<double>();
    list.items.push_back(std::move(c));
  }
  list.k = list.items.size();
  return list;
}

json interaction_to_json(const LoggedInteraction& x) {
  json j{{"utterance_id", x.utterance.utterance_id},
         {"text", x.utterance.text},
         {"timestamp", x.utterance.timestamp}};
  j["suggested_skill"] = x.suggested_skill ? json(*x.suggested_skill) : json(nullptr);
  j["accepted"] = x.accepted ? json(*x.accepted) : json(nullptr);
  j["logged_candidates"] = x.logged_candidates ? candidates_to_json(*x.logged_candidates) : json(nullptr);
  return j;
}

template <typename T>
std::optional<T> optional_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

LoggedInteraction interaction_from_json(const json& j) {
  LoggedInteraction x;
  x.utterance.utterance_id = j.at("utterance_id").get<std::string>();
  x.utterance.text = j.at("text").get<std::string>();
  x.utterance.timestamp = j.at("timestamp").get<std::int64_t>();
  x.suggested_skill = optional_field<std::string>(j, "suggested_skill");
  x.accepted = optional_field<int>(j, "accepted");
  auto it = j.find("logged_candidates");
  if (it != j.end() && !it->is_null()) x.logged_candidates = candidates_from_json(*it);
  return x;
}

/// Calls `fn(json, line_number)` for every non-blank line. Parse and schema
/// errors are rethrown as ParseError with the line number.
template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!has_content(line)) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
    try {
      fn(j, lineno);
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace

std::string catalog_to_jsonl(const Catalog& catalog) {
  std::string out;
  for (const auto& s : catalog) {
    out += skill_to_json(s).dump();
    out += '\n';
  }
  return out;
}

Catalog load_catalog(const std::filesystem::path& path) {
  std::vector<Skill> skills;
  for_each_jsonl(path, [&](const json& j, std::size_t) { skills.push_back(skill_from_json(j)); });
  try {
    return Catalog(std::move(skills));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_catalog(const Catalog& catalog, const std::filesystem::path& path) {
  write_text(path, catalog_to_jsonl(catalog));
}

std::vector<LoggedInteraction> load_interactions(const std::filesystem::path& path) {
  std::vector<LoggedInteraction> out;
  for_each_jsonl(path, [&](const json& j, std::size_t) {
    auto x = interaction_from_json(j);
    validate(x);
    out.push_back(std::move(x));
  });
  return out;
}

void save_interactions(const std::vector<LoggedInteraction>& interactions,
                       const std::filesystem::path& path) {
  std::string out;
  for (const auto& x : interactions) {
    out += interaction_to_json(x).dump();
    out += '\n';
  }
  write_text(path, out);
}

RelevanceOracle load_oracle(const std::filesystem::path& path) {
  std::vector<RelevanceOracle::Entry> entries;
  for_each_jsonl(path, [&](const json& j, std::size_t) {
    entries.push_back({j.at("utterance_id").get<std::string>(),
                       j.at("relevant_skills").get<std::vector<std::string>>()});
  });
  return RelevanceOracle(std::move(entries));
}

void save_oracle(const RelevanceOracle& oracle, const std::filesystem::path& path) {
  std::string out;
  for (const auto& e : oracle.entries()) {
    out += json{{"utterance_id", e.utterance_id}, {"relevant_skills", e.relevant_skills}}.dump();
    out += '\n';
  }
  write_text(path, out);
}

DatasetSplit split_by_time(const std::vector<LoggedInteraction>& dataset, SplitFractions f) {
  if (dataset.empty()) throw InvalidArgument("split_by_time: empty dataset");
  if (f.train <= 0 || f.validation <= 0 || f.test <= 0 ||
      std::abs(f.train + f.validation + f.test - 1.0) > 1e-9)
    throw InvalidArgument("split_by_time: fractions must be positive and sum to 1");

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset[a].utterance.timestamp < dataset[b].utterance.timestamp;
  });

  const auto n = static_cast<double>(dataset.size());
  auto n_train = static_cast<std::size_t>(std::llround(f.train * n));
  auto n_val = static_cast<std::size_t>(std::llround(f.validation * n));
  n_train = std::min(n_train, dataset.size());
  n_val = std::min(n_val, dataset.size() - n_train);

  DatasetSplit split;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& x = dataset[order[r]];
    if (!seen.insert(x.utterance.utterance_id).second)
      throw ValidationError("duplicate utterance_id '" + x.utterance.utterance_id + "'");
    auto& bucket = r < n_train ? split.train : (r < n_train + n_val ? split.validation : split.test);
    bucket.push_back(x);
  }
  return split;
}

}  // namespace skillrec
