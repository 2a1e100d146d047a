#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace skillrec::nk {

/// Hashed bag-of-n-grams configuration. Word n-grams are taken over
/// lowercased whitespace tokens; char n-grams over each token wrapped in
/// '<' and '>' boundary markers.
struct FeaturizerConfig {
  std::vector<int> word_orders{1};
  std::vector<int> char_orders{3};
  int dim_log2 = 18;
  std::uint64_t hash_seed = 0x736b696c6c726563ULL;

  std::uint32_t dim() const { return std::uint32_t{1} << dim_log2; }
  bool operator==(const FeaturizerConfig&) const = default;
};

struct SparseEntry {
  std::uint32_t index;
  double weight;
};

/// Sorted by index, no duplicate indices, all indices < dim.
struct SparseFeatures {
  std::vector<SparseEntry> entries;
  std::uint32_t dim = 0;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
};

/// The n-gram keys fed to the hash, in generation order. Word keys look like
/// "w1:play", "w2:play\x1fthunder"; char keys like "c3:<pl".
std::vector<std::string> enumerate_ngrams(std::string_view text, const FeaturizerConfig& config);

/// Maps one n-gram key into [0, dim): FNV-1a with the seed, then a
/// Fibonacci multiplicative reduction keeping the top dim_log2 bits.
std::uint32_t hash_ngram(std::string_view key, const FeaturizerConfig& config);

/// Counts of hashed n-grams, L2-normalized. Empty text gives empty features.
SparseFeatures featurize(std::string_view text, const FeaturizerConfig& config);

double dot(const SparseFeatures& a, const SparseFeatures& b);

}  // namespace skillrec::nk
