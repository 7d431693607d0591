#include "sparsemt/corpus.hpp"

#include <fstream>
#include <stdexcept>

namespace sparsemt {

namespace {

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

std::vector<std::string> ParallelCorpus::source_side() const {
  std::vector<std::string> out;
  out.reserve(pairs.size());
  for (const auto& [s, t] : pairs) out.push_back(s);
  return out;
}

std::vector<std::string> ParallelCorpus::target_side() const {
  std::vector<std::string> out;
  out.reserve(pairs.size());
  for (const auto& [s, t] : pairs) out.push_back(t);
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(strip_cr(line));
  return lines;
}

void write_lines(const std::vector<std::string>& lines, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write file: " + path);
  for (const auto& l : lines) f << l << '\n';
}

ParallelCorpus load_corpus_tsv(const std::string& path, const std::string& provenance) {
  ParallelCorpus corpus;
  corpus.provenance = provenance.empty() ? path : provenance;
  for (auto& line : read_lines(path)) {
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("corpus line without tab separator in " + path + ": " + line);
    std::string src = line.substr(0, tab);
    std::string tgt = line.substr(tab + 1);
    if (src.empty() || tgt.empty()) continue;
    corpus.pairs.emplace_back(std::move(src), std::move(tgt));
  }
  return corpus;
}

ParallelCorpus load_corpus_parallel(const std::string& src_path, const std::string& tgt_path,
                                    const std::string& provenance) {
  const auto src = read_lines(src_path);
  const auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size())
    throw std::runtime_error("parallel files differ in length: " + src_path + " has " +
                             std::to_string(src.size()) + " lines, " + tgt_path + " has " +
                             std::to_string(tgt.size()));
  ParallelCorpus corpus;
  corpus.provenance = provenance.empty() ? src_path : provenance;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].empty() || tgt[i].empty()) continue;
    corpus.pairs.emplace_back(src[i], tgt[i]);
  }
  return corpus;
}

void save_corpus_tsv(const ParallelCorpus& corpus, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write file: " + path);
  for (const auto& [s, t] : corpus.pairs) f << s << '\t' << t << '\n';
}

}  // namespace sparsemt
