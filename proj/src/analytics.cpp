#include "sparsemt/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sparsemt/bleu.hpp"
#include "sparsemt/rng.hpp"
#include "sparsemt/text.hpp"

namespace sparsemt {

FrequencyTable token_frequencies(const std::vector<std::string>& side) {
  if (side.empty()) throw std::invalid_argument("token_frequencies: empty corpus side");
  FrequencyTable table;
  for (const auto& line : side) {
    for (auto& tok : split_whitespace(line)) {
      ++table.counts[tok];
      ++table.total;
    }
  }
  return table;
}

double sentence_typicality(const std::string& sentence, const FrequencyTable& table) {
  const auto tokens = split_whitespace(sentence);
  if (tokens.empty()) throw std::invalid_argument("sentence_typicality: empty sentence");
  double sum = 0.0;
  for (const auto& tok : tokens) {
    const long long f = std::max<long long>(table.count(tok), 1);  // unseen floor
    sum += std::log(static_cast<double>(f));
  }
  return sum / static_cast<double>(tokens.size());
}

BucketResult typicality_buckets(const std::vector<std::string>& sentences,
                                const FrequencyTable& table, int k) {
  if (k < 2) throw std::invalid_argument("typicality_buckets: k must be >= 2");
  const int n = static_cast<int>(sentences.size());
  if (n < k) throw std::invalid_argument("typicality_buckets: fewer sentences than buckets");

  std::vector<double> fs(static_cast<std::size_t>(n));
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    fs[static_cast<std::size_t>(i)] = sentence_typicality(sentences[static_cast<std::size_t>(i)], table);
    order[static_cast<std::size_t>(i)] = i;
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return fs[static_cast<std::size_t>(a)] < fs[static_cast<std::size_t>(b)];
  });

  BucketResult result;
  result.assignment.assign(static_cast<std::size_t>(n), 0);
  result.buckets.resize(static_cast<std::size_t>(k));
  for (int b = 0; b < k; ++b) {
    const int lo = static_cast<int>(static_cast<long long>(b) * n / k);
    const int hi = static_cast<int>(static_cast<long long>(b + 1) * n / k);
    BucketStats& st = result.buckets[static_cast<std::size_t>(b)];
    st.name = (k == 3) ? (b == 0 ? "Low" : b == 1 ? "Mid" : "High") : "q" + std::to_string(b);
    for (int pos = lo; pos < hi; ++pos) {
      const int idx = order[static_cast<std::size_t>(pos)];
      result.assignment[static_cast<std::size_t>(idx)] = b;
      st.count += 1;
      st.mean_typicality += fs[static_cast<std::size_t>(idx)];
      st.mean_length +=
          static_cast<double>(split_whitespace(sentences[static_cast<std::size_t>(idx)]).size());
    }
    if (st.count > 0) {
      st.mean_typicality /= st.count;
      st.mean_length /= st.count;
    }
  }
  return result;
}

std::unordered_set<std::string> word_vocabulary(const std::vector<std::string>& side) {
  std::unordered_set<std::string> vocab;
  for (const auto& line : side)
    for (auto& tok : split_whitespace(line)) vocab.insert(std::move(tok));
  return vocab;
}

double oov_rate(const std::vector<std::string>& test_side,
                const std::unordered_set<std::string>& train_vocab) {
  long long total = 0, oov = 0;
  for (const auto& line : test_side) {
    for (auto& tok : split_whitespace(line)) {
      ++total;
      if (!train_vocab.count(tok)) ++oov;
    }
  }
  if (total == 0) throw std::invalid_argument("oov_rate: no tokens in test side");
  return 100.0 * static_cast<double>(oov) / static_cast<double>(total);
}

double avg_length(const std::vector<std::string>& side) {
  if (side.empty()) throw std::invalid_argument("avg_length: empty side");
  long long total = 0;
  for (const auto& line : side) total += static_cast<long long>(split_whitespace(line).size());
  return static_cast<double>(total) / static_cast<double>(side.size());
}

SplitResult global_random_split(const ParallelCorpus& corpus, const FrequencyTable& table,
                                int n_global, int n_random, std::uint64_t seed) {
  const int n = static_cast<int>(corpus.size());
  if (n_global < 0 || n_random < 0 || n_global + n_random >= n)
    throw std::invalid_argument("global_random_split: requested " + std::to_string(n_global) +
                                "+" + std::to_string(n_random) + " test sentences from corpus of " +
                                std::to_string(n));

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> fs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    fs[static_cast<std::size_t>(i)] =
        sentence_typicality(corpus.pairs[static_cast<std::size_t>(i)].first, table);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return fs[static_cast<std::size_t>(a)] > fs[static_cast<std::size_t>(b)];
  });

  SplitResult result;
  result.global.provenance = corpus.provenance + ":global";
  result.random.provenance = corpus.provenance + ":random";
  result.train.provenance = corpus.provenance + ":train";

  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n_global; ++i) {
    const int idx = order[static_cast<std::size_t>(i)];
    taken[static_cast<std::size_t>(idx)] = true;
    result.global.pairs.push_back(corpus.pairs[static_cast<std::size_t>(idx)]);
  }

  std::vector<int> remainder;
  remainder.reserve(static_cast<std::size_t>(n - n_global));
  for (int i = 0; i < n; ++i)
    if (!taken[static_cast<std::size_t>(i)]) remainder.push_back(i);

  RngStream rng(seed);
  for (int i = 0; i < n_random; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) +
        static_cast<std::size_t>(rng.next_below(remainder.size() - static_cast<std::size_t>(i)));
    std::swap(remainder[static_cast<std::size_t>(i)], remainder[j]);
    const int idx = remainder[static_cast<std::size_t>(i)];
    taken[static_cast<std::size_t>(idx)] = true;
    result.random.pairs.push_back(corpus.pairs[static_cast<std::size_t>(idx)]);
  }

  for (int i = 0; i < n; ++i)
    if (!taken[static_cast<std::size_t>(i)])
      result.train.pairs.push_back(corpus.pairs[static_cast<std::size_t>(i)]);
  return result;
}

ParallelCorpus subsample_limited(const ParallelCorpus& corpus, int n, std::uint64_t seed) {
  if (n < 0 || static_cast<std::size_t>(n) > corpus.size())
    throw std::invalid_argument("subsample_limited: sample size " + std::to_string(n) +
                                " exceeds corpus of " + std::to_string(corpus.size()));
  std::vector<int> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), 0);
  RngStream rng(seed);
  ParallelCorpus out;
  out.provenance = corpus.provenance + ":limited" + std::to_string(n);
  for (int i = 0; i < n; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) +
        static_cast<std::size_t>(rng.next_below(idx.size() - static_cast<std::size_t>(i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
    out.pairs.push_back(corpus.pairs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  }
  return out;
}

std::vector<SubsetVariability> bleu_subset_variability(const std::vector<std::string>& hyps,
                                                       const std::vector<std::string>& refs,
                                                       const std::vector<int>& sizes, int repeats,
                                                       std::uint64_t seed) {
  if (hyps.size() != refs.size())
    throw std::invalid_argument("bleu_subset_variability: hyp/ref count mismatch");
  if (repeats < 2) throw std::invalid_argument("bleu_subset_variability: repeats must be >= 2");
  const int n = static_cast<int>(hyps.size());

  std::vector<SubsetVariability> out;
  RngStream rng(seed);
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int size : sizes) {
    if (size <= 0 || size > n)
      throw std::invalid_argument("bleu_subset_variability: subset size " + std::to_string(size) +
                                  " exceeds corpus of " + std::to_string(n));
    std::vector<double> scores;
    scores.reserve(static_cast<std::size_t>(repeats));
    for (int r = 0; r < repeats; ++r) {
      std::iota(idx.begin(), idx.end(), 0);
      std::vector<std::string> h, f;
      h.reserve(static_cast<std::size_t>(size));
      f.reserve(static_cast<std::size_t>(size));
      for (int i = 0; i < size; ++i) {
        const std::size_t j =
            static_cast<std::size_t>(i) +
            static_cast<std::size_t>(rng.next_below(idx.size() - static_cast<std::size_t>(i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
        h.push_back(hyps[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
        f.push_back(refs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
      }
      scores.push_back(corpus_bleu(h, f).score);
    }
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(repeats);
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(repeats - 1);
    out.push_back({size, mean, std::sqrt(var)});
  }
  return out;
}

}  // namespace sparsemt
