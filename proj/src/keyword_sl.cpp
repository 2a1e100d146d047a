#include "skillrec/keyword_sl.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "skillrec/error.hpp"
#include "skillrec/neuralkit/model_file.hpp"
#include "skillrec/text.hpp"

namespace skillrec {

std::string skill_document(const Skill& skill) {
  std::string doc = skill.name;
  doc += ' ';
  doc += skill.description;
  for (const auto& p : skill.example_phrases) {
    doc += ' ';
    doc += p;
  }
  return doc;
}

void InvertedIndex::rebuild_lookup() {
  term_lookup_.clear();
  skill_lookup_.clear();
  for (std::size_t i = 0; i < terms_.size(); ++i) term_lookup_.emplace(terms_[i], i);
  for (std::size_t i = 0; i < skill_ids_.size(); ++i) skill_lookup_.emplace(skill_ids_[i], i);
}

const std::vector<InvertedIndex::Posting>* InvertedIndex::postings(const std::string& term) const {
  auto it = term_lookup_.find(term);
  return it == term_lookup_.end() ? nullptr : &postings_[it->second];
}

std::size_t InvertedIndex::df(const std::string& term) const {
  const auto* p = postings(term);
  return p ? p->size() : 0;
}

double InvertedIndex::idf(std::size_t df) const {
  return std::log((1.0 + static_cast<double>(skill_ids_.size())) / (1.0 + static_cast<double>(df))) + 1.0;
}

std::optional<std::size_t> InvertedIndex::skill_position(const std::string& skill_id) const {
  auto it = skill_lookup_.find(skill_id);
  if (it == skill_lookup_.end()) return std::nullopt;
  return it->second;
}

bool InvertedIndex::operator==(const InvertedIndex& o) const {
  return skill_ids_ == o.skill_ids_ && popularity_ == o.popularity_ &&
         doc_length_ == o.doc_length_ && terms_ == o.terms_ && postings_ == o.postings_ &&
         catalog_hash_ == o.catalog_hash_;
}

InvertedIndex build_index(const Catalog& catalog) {
  if (catalog.empty()) throw InvalidArgument("build_index: empty catalog");
  InvertedIndex index;
  std::map<std::string, std::vector<InvertedIndex::Posting>> postings;
  for (std::size_t s = 0; s < catalog.size(); ++s) {
    const Skill& skill = catalog[s];
    index.skill_ids_.push_back(skill.skill_id);
    index.popularity_.push_back(skill.popularity);
    const auto tokens = tokenize_words(skill_document(skill));
    index.doc_length_.push_back(static_cast<std::uint32_t>(tokens.size()));
    std::map<std::string, std::uint32_t> tf;
    for (const auto& t : tokens) ++tf[t];
    for (const auto& [term, count] : tf)
      postings[term].push_back({static_cast<std::uint32_t>(s), count});
  }
  for (auto& [term, list] : postings) {
    index.terms_.push_back(term);
    index.postings_.push_back(std::move(list));
  }
  index.catalog_hash_ = catalog.content_hash();
  index.rebuild_lookup();
  return index;
}

double tfidf_score(const InvertedIndex& index, const std::vector<std::string>& query_tokens,
                   const std::string& skill_id) {
  const auto pos = index.skill_position(skill_id);
  if (!pos) throw InvalidArgument("tfidf_score: unknown skill_id '" + skill_id + "'");
  double score = 0.0;
  for (const auto& t : query_tokens) {
    const auto* list = index.postings(t);
    if (!list) continue;
    auto it = std::lower_bound(list->begin(), list->end(), static_cast<std::uint32_t>(*pos),
                               [](const InvertedIndex::Posting& p, std::uint32_t s) { return p.skill < s; });
    if (it == list->end() || it->skill != *pos) continue;
    const double idf = index.idf(list->size());
    score += it->tf * (idf * idf);
  }
  return score;
}

CandidateList retrieve(const InvertedIndex& index, std::string_view utterance, std::size_t k) {
  if (k == 0) throw InvalidArgument("retrieve: K must be >= 1");
  CandidateList out;
  out.k = k;
  const auto tokens = tokenize_words(utterance);
  if (tokens.empty()) return out;
  std::vector<double> scores(index.skill_count(), 0.0);
  std::vector<std::uint32_t> hit;
  for (const auto& t : tokens) {
    const auto* list = index.postings(t);
    if (!list) continue;
    const double idf = index.idf(list->size());
    const double idf2 = idf * idf;
    for (const auto& p : *list) {
      if (scores[p.skill] == 0.0) hit.push_back(p.skill);
      scores[p.skill] += p.tf * idf2;
    }
  }
  const auto& ids = index.skill_ids();
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (index.popularity(a) != index.popularity(b)) return index.popularity(a) > index.popularity(b);
    return ids[a] < ids[b];
  };
  const std::size_t n = std::min(k, hit.size());
  std::partial_sort(hit.begin(), hit.begin() + static_cast<std::ptrdiff_t>(n), hit.end(), better);
  for (std::size_t i = 0; i < n; ++i)
    out.items.push_back({ids[hit[i]], scores[hit[i]], CandidateSource::Rule, -1});
  return out;
}

void save_index(const InvertedIndex& index, const std::filesystem::path& path) {
  std::string out("SKI1", 4);
  nk::put_u64(out, index.catalog_hash());
  nk::put_u32(out, static_cast<std::uint32_t>(index.skill_count()));
  for (std::size_t s = 0; s < index.skill_count(); ++s) {
    nk::put_str(out, index.skill_ids()[s]);
    nk::put_u32(out, static_cast<std::uint32_t>(index.popularity(s)));
    nk::put_u32(out, index.doc_length(s));
  }
  nk::put_u32(out, static_cast<std::uint32_t>(index.term_count()));
  for (const auto& term : index.terms()) {
    nk::put_str(out, term);
    const auto& list = *index.postings(term);
    nk::put_u32(out, static_cast<std::uint32_t>(list.size()));
    for (const auto& p : list) {
      nk::put_u32(out, p.skill);
      nk::put_u32(out, p.tf);
    }
  }
  nk::write_file(path, out);
}

InvertedIndex load_index(const std::filesystem::path& path) {
  const std::string bytes = nk::read_file(path);
  nk::ByteReader in(bytes, path.string());
  in.expect("SKI1", 4);
  InvertedIndex index;
  index.catalog_hash_ = in.u64();
  const auto n = in.u32();
  for (std::uint32_t s = 0; s < n; ++s) {
    index.skill_ids_.push_back(in.str());
    index.popularity_.push_back(static_cast<int>(in.u32()));
    index.doc_length_.push_back(in.u32());
  }
  const auto terms = in.u32();
  for (std::uint32_t t = 0; t < terms; ++t) {
    index.terms_.push_back(in.str());
    const auto m = in.u32();
    std::vector<InvertedIndex::Posting> list(m);
    for (auto& p : list) {
      p.skill = in.u32();
      p.tf = in.u32();
      if (p.skill >= n) throw Error(path.string() + ": posting references unknown skill");
    }
    index.postings_.push_back(std::move(list));
  }
  if (!in.done()) throw Error(path.string() + ": trailing bytes in index file");
  index.rebuild_lookup();
  return index;
}

}  // namespace skillrec
