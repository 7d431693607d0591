#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sparsemt/corpus.hpp"

namespace sparsemt {

// Whitespace-token counts over one corpus side.
struct FrequencyTable {
  std::unordered_map<std::string, long long> counts;
  long long total = 0;

  long long count(const std::string& token) const {
    auto it = counts.find(token);
    return it == counts.end() ? 0 : it->second;
  }
};

FrequencyTable token_frequencies(const std::vector<std::string>& side);

// Mean natural-log training-corpus frequency of the sentence's tokens
// (F_S); unseen tokens count as frequency 1, contributing ln 1 = 0.
double sentence_typicality(const std::string& sentence, const FrequencyTable& table);

struct BucketStats {
  std::string name;
  int count = 0;
  double mean_typicality = 0.0;
  double mean_length = 0.0;
};

// Equal-count quantile buckets by F_S (ascending; ties keep original order).
// assignment[i] is the bucket of sentences[i]; for k=3 buckets are named
// Low/Mid/High.
struct BucketResult {
  std::vector<int> assignment;
  std::vector<BucketStats> buckets;
};
BucketResult typicality_buckets(const std::vector<std::string>& sentences,
                                const FrequencyTable& table, int k = 3);

std::unordered_set<std::string> word_vocabulary(const std::vector<std::string>& side);

// Percentage of test-side word tokens absent from the training vocabulary.
double oov_rate(const std::vector<std::string>& test_side,
                const std::unordered_set<std::string>& train_vocab);

double avg_length(const std::vector<std::string>& side);

struct SplitResult {
  ParallelCorpus global;   // highest-F_S sentences, descending
  ParallelCorpus random;   // uniform sample from the remainder
  ParallelCorpus train;    // everything else, original order
};

// Global = top-n sentences by source-side typicality (the frequent-sentence
// proxy), Random = seeded uniform sample without replacement from the rest;
// both are removed from the returned training corpus.
SplitResult global_random_split(const ParallelCorpus& corpus, const FrequencyTable& table,
                                int n_global, int n_random, std::uint64_t seed);

ParallelCorpus subsample_limited(const ParallelCorpus& corpus, int n, std::uint64_t seed);

struct SubsetVariability {
  int size = 0;
  double mean_bleu = 0.0;
  double std_bleu = 0.0;
};

// For each subset size, draws `repeats` uniform subsets of (hyp, ref) pairs
// and reports mean and sample standard deviation of corpus BLEU.
std::vector<SubsetVariability> bleu_subset_variability(const std::vector<std::string>& hyps,
                                                       const std::vector<std::string>& refs,
                                                       const std::vector<int>& sizes, int repeats,
                                                       std::uint64_t seed);

}  // namespace sparsemt
