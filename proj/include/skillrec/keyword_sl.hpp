#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "skillrec/catalog.hpp"

namespace skillrec {

/// Inverted index over skill metadata. Each skill's document is its name,
/// description and example phrases, tokenized with tokenize_words().
class InvertedIndex {
 public:
  struct Posting {
    std::uint32_t skill;  // position in the catalog
    std::uint32_t tf;
    bool operator==(const Posting&) const = default;
  };

  InvertedIndex() = default;

  std::size_t skill_count() const { return skill_ids_.size(); }
  std::size_t term_count() const { return terms_.size(); }
  const std::vector<std::string>& skill_ids() const { return skill_ids_; }
  const std::vector<std::string>& terms() const { return terms_; }
  const std::vector<Posting>* postings(const std::string& term) const;
  std::size_t df(const std::string& term) const;
  std::uint32_t doc_length(std::size_t skill) const { return doc_length_[skill]; }
  int popularity(std::size_t skill) const { return popularity_[skill]; }
  std::uint64_t catalog_hash() const { return catalog_hash_; }

  /// ln((1 + N_s) / (1 + df)) + 1
  double idf(std::size_t df) const;
  std::optional<std::size_t> skill_position(const std::string& skill_id) const;

  bool operator==(const InvertedIndex& other) const;

 private:
  friend InvertedIndex build_index(const Catalog& catalog);
  friend InvertedIndex load_index(const std::filesystem::path& path);
  void rebuild_lookup();

  std::vector<std::string> skill_ids_;
  std::vector<int> popularity_;
  std::vector<std::uint32_t> doc_length_;
  std::vector<std::string> terms_;  // sorted
  std::vector<std::vector<Posting>> postings_;
  std::unordered_map<std::string, std::size_t> term_lookup_;
  std::unordered_map<std::string, std::size_t> skill_lookup_;
  std::uint64_t catalog_hash_ = 0;
};

/// The document text indexed for one skill.
std::string skill_document(const Skill& skill);

InvertedIndex build_index(const Catalog& catalog);

/// sum over query token occurrences present in the document of tf * idf^2.
/// Throws InvalidArgument for an unknown skill id.
double tfidf_score(const InvertedIndex& index, const std::vector<std::string>& query_tokens,
                   const std::string& skill_id);

/// Top-K skills by TF-IDF (source = rule). Zero-score skills are excluded;
/// ties break by popularity descending, then skill_id ascending.
CandidateList retrieve(const InvertedIndex& index, std::string_view utterance, std::size_t k);

/// Binary format: "SKI1" | u64 catalog_hash | u32 N_s | (str id, u32 pop,
/// u32 doc_len) * N_s | u32 terms | (str term, u32 n, (u32 skill, u32 tf) * n) * terms
void save_index(const InvertedIndex& index, const std::filesystem::path& path);
InvertedIndex load_index(const std::filesystem::path& path);

}  // namespace skillrec
