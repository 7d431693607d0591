#pragma once

#include <string>
#include <utility>
#include <vector>

namespace sparsemt {

// Aligned sentence pairs. Loaders guarantee equal side counts and drop pairs
// with an empty side.
struct ParallelCorpus {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string provenance;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }

  std::vector<std::string> source_side() const;
  std::vector<std::string> target_side() const;
};

// TSV with one "source<TAB>target" pair per line.
ParallelCorpus load_corpus_tsv(const std::string& path, const std::string& provenance = "");

// Two plain-text files aligned by line number.
ParallelCorpus load_corpus_parallel(const std::string& src_path, const std::string& tgt_path,
                                    const std::string& provenance = "");

void save_corpus_tsv(const ParallelCorpus& corpus, const std::string& path);

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::vector<std::string>& lines, const std::string& path);

}  // namespace sparsemt
