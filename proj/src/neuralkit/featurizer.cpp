#include "skillrec/neuralkit/featurizer.hpp"

#include <algorithm>
#include <cmath>

#include "skillrec/error.hpp"
#include "skillrec/text.hpp"

namespace skillrec::nk {

std::vector<std::string> enumerate_ngrams(std::string_view text, const FeaturizerConfig& config) {
  const auto tokens = tokenize_words(text);
  std::vector<std::string> keys;
  for (int n : config.word_orders) {
    if (n < 1) throw InvalidArgument("word n-gram order must be >= 1");
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::string key = "w" + std::to_string(n) + ":";
      for (int k = 0; k < n; ++k) {
        if (k) key += '\x1f';
        key += tokens[i + k];
      }
      keys.push_back(std::move(key));
    }
  }
  for (int n : config.char_orders) {
    if (n < 1) throw InvalidArgument("char n-gram order must be >= 1");
    const std::string prefix = "c" + std::to_string(n) + ":";
    for (const auto& tok : tokens) {
      const std::string wrapped = "<" + tok + ">";
      for (std::size_t i = 0; i + n <= wrapped.size(); ++i)
        keys.push_back(prefix + wrapped.substr(i, n));
    }
  }
  return keys;
}

std::uint32_t hash_ngram(std::string_view key, const FeaturizerConfig& config) {
  const std::uint64_t h = fnv1a64(key, config.hash_seed);
  return static_cast<std::uint32_t>((h * 0x9E3779B97F4A7C15ULL) >> (64 - config.dim_log2));
}

SparseFeatures featurize(std::string_view text, const FeaturizerConfig& config) {
  if (config.dim_log2 < 10 || config.dim_log2 > 31)
    throw InvalidArgument("hashing dimension must be a power of two in [2^10, 2^31]");
  SparseFeatures out;
  out.dim = config.dim();
  std::vector<std::uint32_t> idx;
  for (const auto& key : enumerate_ngrams(text, config)) idx.push_back(hash_ngram(key, config));
  if (idx.empty()) return out;
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && idx[j] == idx[i]) ++j;
    out.entries.push_back({idx[i], static_cast<double>(j - i)});
    i = j;
  }
  double norm = 0.0;
  for (const auto& e : out.entries) norm += e.weight * e.weight;
  norm = std::sqrt(norm);
  for (auto& e : out.entries) e.weight /= norm;
  return out;
}

double dot(const SparseFeatures& a, const SparseFeatures& b) {
  double s = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.entries.size() && j < b.entries.size()) {
    if (a.entries[i].index < b.entries[j].index) {
      ++i;
    } else if (a.entries[i].index > b.entries[j].index) {
      ++j;
    } else {
      s += a.entries[i++].weight * b.entries[j++].weight;
    }
  }
  return s;
}

}  // namespace skillrec::nk
