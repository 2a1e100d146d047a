#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace skillrec {

/// Which shortlister produced a candidate.
enum class CandidateSource { Rule, Model };

const char* to_string(CandidateSource source);
CandidateSource parse_source(const std::string& text);

struct Candidate {
  std::string skill_id;
  double score = 0.0;
  CandidateSource source = CandidateSource::Rule;
  int score_bin = -1;  // -1 until a reranker assigns it

  bool operator==(const Candidate&) const = default;
};

/// Ordered, scored shortlist. Scores are non-increasing, ids distinct,
/// and size() <= k.
struct CandidateList {
  std::vector<Candidate> items;
  std::size_t k = 0;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  bool contains(const std::string& skill_id) const;
  bool operator==(const CandidateList&) const = default;
};

struct Skill {
  std::string skill_id;
  std::string name;
  std::string description;
  std::vector<std::string> example_phrases;
  std::string category;
  std::string subcategory;
  int popularity = 0;

  bool operator==(const Skill&) const = default;
};

/// Immutable skill collection with O(1) lookup by id.
class Catalog {
 public:
  Catalog() = default;
  /// Validates ids, category fields and the category/subcategory hierarchy.
  explicit Catalog(std::vector<Skill> skills);

  std::size_t size() const { return skills_.size(); }
  bool empty() const { return skills_.empty(); }
  const std::vector<Skill>& skills() const { return skills_; }
  const Skill& operator[](std::size_t i) const { return skills_[i]; }
  const Skill* find(const std::string& skill_id) const;
  const Skill& at(const std::string& skill_id) const;
  std::optional<std::size_t> position(const std::string& skill_id) const;

  /// Sorted distinct categories and subcategories.
  const std::vector<std::string>& categories() const { return categories_; }
  const std::vector<std::string>& subcategories() const { return subcategories_; }

  /// FNV-1a hash of the canonical JSONL serialization.
  std::uint64_t content_hash() const;

  auto begin() const { return skills_.begin(); }
  auto end() const { return skills_.end(); }

 private:
  std::vector<Skill> skills_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> categories_;
  std::vector<std::string> subcategories_;
};

struct Utterance {
  std::string utterance_id;
  std::string text;
  std::int64_t timestamp = 0;

  bool operator==(const Utterance&) const = default;
};

/// One logged request: what the logging policy suggested and how the user
/// answered. `accepted` is present exactly when `suggested_skill` is.
struct LoggedInteraction {
  Utterance utterance;
  std::optional<std::string> suggested_skill;
  std::optional<int> accepted;
  std::optional<CandidateList> logged_candidates;

  bool has_feedback() const { return suggested_skill.has_value() && accepted.has_value(); }
  bool operator==(const LoggedInteraction&) const = default;
};

/// Throws ValidationError if the interaction breaks its invariants.
void validate(const LoggedInteraction& interaction);

/// Ground-truth relevant skills per utterance.
class RelevanceOracle {
 public:
  struct Entry {
    std::string utterance_id;
    std::vector<std::string> relevant_skills;
    bool operator==(const Entry&) const = default;
  };

  RelevanceOracle() = default;
  explicit RelevanceOracle(std::vector<Entry> entries);

  const std::vector<std::string>* find(const std::string& utterance_id) const;
  bool is_relevant(const std::string& utterance_id, const std::string& skill_id) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Throws ValidationError when a relevant skill is not in the catalog.
  void validate_against(const Catalog& catalog) const;

  bool operator==(const RelevanceOracle& other) const { return entries_ == other.entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct DatasetSplit {
  std::vector<LoggedInteraction> train;
  std::vector<LoggedInteraction> validation;
  std::vector<LoggedInteraction> test;
};

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

Catalog load_catalog(const std::filesystem::path& path);
void save_catalog(const Catalog& catalog, const std::filesystem::path& path);
std::string catalog_to_jsonl(const Catalog& catalog);

std::vector<LoggedInteraction> load_interactions(const std::filesystem::path& path);
void save_interactions(const std::vector<LoggedInteraction>& interactions,
                       const std::filesystem::path& path);

RelevanceOracle load_oracle(const std::filesystem::path& path);
void save_oracle(const RelevanceOracle& oracle, const std::filesystem::path& path);

/// Stable sort by timestamp, then contiguous partition. Sizes are
/// round(fraction * N) for train and validation; test takes the rest.
DatasetSplit split_by_time(const std::vector<LoggedInteraction>& dataset,
                           SplitFractions fractions = {});

}  // namespace skillrec
