#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sparsemt {

// Learned byte-pair encoding: ordered merge list plus a dense token
// vocabulary shared between source and target sides. Words carry a trailing
// end-of-word marker symbol that participates in merges.
struct MergeTable {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr const char* kEndOfWord = "</w>";

  std::vector<std::pair<std::string, std::string>> merges;  // in learning order
  std::vector<std::string> id_to_token;                     // dense ids 0..|vocab|-1
  std::unordered_map<std::string, int> vocab;               // token -> id

  int size() const { return static_cast<int>(id_to_token.size()); }
};

// Greedy highest-frequency pair merging until `target_vocab` tokens exist or
// no pair occurs at least twice. Ties between equally frequent pairs break
// lexicographically (the bare end-of-word marker sorts after all other
// symbols, so character merges win ties against marker merges).
MergeTable learn_bpe(const std::vector<std::string>& lines, int target_vocab);

// Stateless application of a learned table. Construction builds the merge
// rank index once; encode/decode are const and safe to call concurrently.
class BpeEncoder {
 public:
  explicit BpeEncoder(const MergeTable& table);

  // Whitespace-split words, merges applied in learned order; symbols missing
  // from the vocabulary map to UNK.
  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  const MergeTable& table() const { return table_; }

 private:
  MergeTable table_;
  std::unordered_map<std::string, int> merge_rank_;  // "left\x1fright" -> rank
};

std::vector<int> bpe_encode(const std::string& text, const MergeTable& table);
std::string bpe_decode(const std::vector<int>& ids, const MergeTable& table);

// Text serialization: header "<n_merges> <n_vocab>", one "left right" line
// per merge, then "token\tid" vocabulary lines.
std::string merge_table_to_string(const MergeTable& table);
MergeTable merge_table_from_string(const std::string& text);
void save_merge_table(const MergeTable& table, const std::string& path);
MergeTable load_merge_table(const std::string& path);

}  // namespace sparsemt
