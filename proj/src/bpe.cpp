#include "sparsemt/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "sparsemt/text.hpp"

namespace sparsemt {

namespace {

constexpr const char* kSpecials[4] = {"<pad>", "<bos>", "<eos>", "<unk>"};

// Lexicographic symbol order with the bare end-of-word marker sorting after
// every other symbol, so that ("a","a") beats ("a","</w>") on frequency ties.
bool symbol_less(const std::string& a, const std::string& b) {
  const bool am = a == MergeTable::kEndOfWord;
  const bool bm = b == MergeTable::kEndOfWord;
  if (am != bm) return bm;
  return a < b;
}

bool pair_less(const std::pair<std::string, std::string>& a,
               const std::pair<std::string, std::string>& b) {
  if (a.first != b.first) return symbol_less(a.first, b.first);
  return symbol_less(a.second, b.second);
}

std::uint64_t pair_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

std::vector<std::string> word_symbols(const std::string& word) {
  std::vector<std::string> syms = utf8_chars(word);
  syms.push_back(MergeTable::kEndOfWord);
  return syms;
}

// Replace all non-overlapping (a, b) occurrences left to right.
template <typename Sym>
std::vector<Sym> merge_word(const std::vector<Sym>& syms, const Sym& a, const Sym& b,
                            const Sym& merged) {
  std::vector<Sym> out;
  out.reserve(syms.size());
  std::size_t i = 0;
  while (i < syms.size()) {
    if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
      out.push_back(merged);
      i += 2;
    } else {
      out.push_back(syms[i]);
      ++i;
    }
  }
  return out;
}

}  // namespace

MergeTable learn_bpe(const std::vector<std::string>& lines, int target_vocab) {
  // word type counts
  std::unordered_map<std::string, long long> word_counts;
  for (const auto& line : lines)
    for (auto& w : split_whitespace(line)) ++word_counts[w];
  if (word_counts.empty()) throw std::invalid_argument("learn_bpe: empty corpus");

  // interned symbols
  std::vector<std::string> sym_names;
  std::unordered_map<std::string, int> sym_ids;
  auto intern = [&](const std::string& s) {
    auto it = sym_ids.find(s);
    if (it != sym_ids.end()) return it->second;
    const int id = static_cast<int>(sym_names.size());
    sym_names.push_back(s);
    sym_ids.emplace(s, id);
    return id;
  };

  std::vector<std::vector<int>> words;
  std::vector<long long> counts;
  words.reserve(word_counts.size());
  for (const auto& [w, c] : word_counts) {
    std::vector<int> ids;
    for (auto& s : word_symbols(w)) ids.push_back(intern(s));
    words.push_back(std::move(ids));
    counts.push_back(c);
  }

  // base inventory, deterministically ordered
  std::vector<std::string> base = sym_names;
  std::sort(base.begin(), base.end(), symbol_less);

  MergeTable table;
  for (const char* s : kSpecials) {
    table.vocab.emplace(s, table.size());
    table.id_to_token.push_back(s);
  }
  const int min_vocab = 4 + static_cast<int>(base.size());
  if (target_vocab < min_vocab)
    throw std::invalid_argument("learn_bpe: target vocab " + std::to_string(target_vocab) +
                                " below inventory of " + std::to_string(base.size()) +
                                " symbols + 4 specials");
  for (const auto& s : base) {
    table.vocab.emplace(s, table.size());
    table.id_to_token.push_back(s);
  }

  std::unordered_map<std::uint64_t, long long> pair_counts;
  std::unordered_map<std::uint64_t, std::vector<int>> pair_words;
  auto add_word_pairs = [&](int wi, long long sign) {
    const auto& w = words[static_cast<std::size_t>(wi)];
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
      const std::uint64_t key = pair_key(w[i], w[i + 1]);
      pair_counts[key] += sign * counts[static_cast<std::size_t>(wi)];
      if (sign > 0) pair_words[key].push_back(wi);
    }
  };
  for (int wi = 0; wi < static_cast<int>(words.size()); ++wi) add_word_pairs(wi, +1);

  while (table.size() < target_vocab) {
    // highest count, ties to the lexicographically smallest pair
    bool found = false;
    long long best_count = 0;
    std::pair<int, int> best{-1, -1};
    for (const auto& [key, cnt] : pair_counts) {
      if (cnt < 2) continue;
      const int a = static_cast<int>(key >> 32);
      const int b = static_cast<int>(key & 0xFFFFFFFFu);
      if (!found || cnt > best_count ||
          (cnt == best_count && pair_less({sym_names[static_cast<std::size_t>(a)],
                                           sym_names[static_cast<std::size_t>(b)]},
                                          {sym_names[static_cast<std::size_t>(best.first)],
                                           sym_names[static_cast<std::size_t>(best.second)]}))) {
        found = true;
        best_count = cnt;
        best = {a, b};
      }
    }
    if (!found) break;

    const std::string left = sym_names[static_cast<std::size_t>(best.first)];
    const std::string right = sym_names[static_cast<std::size_t>(best.second)];
    const int merged = intern(left + right);
    const std::uint64_t key = pair_key(best.first, best.second);

    std::vector<int> affected = std::move(pair_words[key]);
    pair_words.erase(key);
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
    for (int wi : affected) {
      auto& w = words[static_cast<std::size_t>(wi)];
      bool has = false;
      for (std::size_t i = 0; i + 1 < w.size(); ++i)
        if (w[i] == best.first && w[i + 1] == best.second) {
          has = true;
          break;
        }
      if (!has) continue;  // stale membership from an earlier merge
      add_word_pairs(wi, -1);
      w = merge_word(w, best.first, best.second, merged);
      add_word_pairs(wi, +1);
    }

    table.merges.emplace_back(left, right);
    if (!table.vocab.count(left + right)) {
      table.vocab.emplace(left + right, table.size());
      table.id_to_token.push_back(left + right);
    }
  }
  return table;
}

BpeEncoder::BpeEncoder(const MergeTable& table) : table_(table) {
  for (std::size_t r = 0; r < table_.merges.size(); ++r)
    merge_rank_.emplace(table_.merges[r].first + '\x1f' + table_.merges[r].second,
                        static_cast<int>(r));
}

std::vector<int> BpeEncoder::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& word : split_whitespace(text)) {
    std::vector<std::string> syms = word_symbols(word);
    // repeatedly apply the earliest-learned merge present in the word
    while (syms.size() > 1) {
      int best_rank = -1;
      std::size_t best_pos = 0;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        auto it = merge_rank_.find(syms[i] + '\x1f' + syms[i + 1]);
        if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) {
          best_rank = it->second;
          best_pos = i;
        }
      }
      if (best_rank < 0) break;
      const auto& m = table_.merges[static_cast<std::size_t>(best_rank)];
      syms = merge_word(syms, m.first, m.second, m.first + m.second);
      (void)best_pos;
    }
    for (const auto& s : syms) {
      auto it = table_.vocab.find(s);
      out.push_back(it == table_.vocab.end() ? MergeTable::kUnk : it->second);
    }
  }
  return out;
}

std::string BpeEncoder::decode(const std::vector<int>& ids) const {
  std::string joined;
  for (int id : ids) {
    if (id == MergeTable::kPad || id == MergeTable::kBos || id == MergeTable::kEos) continue;
    if (id < 0 || id >= table_.size())
      throw std::out_of_range("decode: token id " + std::to_string(id) + " out of range");
    joined += table_.id_to_token[static_cast<std::size_t>(id)];
  }
  // end-of-word markers become spaces
  std::string text;
  std::size_t pos = 0, prev = 0;
  while ((pos = joined.find(MergeTable::kEndOfWord, prev)) != std::string::npos) {
    text.append(joined, prev, pos - prev);
    text += ' ';
    prev = pos + std::string(MergeTable::kEndOfWord).size();
  }
  text.append(joined, prev, std::string::npos);
  while (!text.empty() && text.back() == ' ') text.pop_back();
  return text;
}

std::vector<int> bpe_encode(const std::string& text, const MergeTable& table) {
  return BpeEncoder(table).encode(text);
}

std::string bpe_decode(const std::vector<int>& ids, const MergeTable& table) {
  return BpeEncoder(table).decode(ids);
}

std::string merge_table_to_string(const MergeTable& table) {
  std::ostringstream os;
  os << table.merges.size() << ' ' << table.size() << '\n';
  for (const auto& [l, r] : table.merges) os << l << ' ' << r << '\n';
  for (int id = 0; id < table.size(); ++id)
    os << table.id_to_token[static_cast<std::size_t>(id)] << '\t' << id << '\n';
  return os.str();
}

MergeTable merge_table_from_string(const std::string& text) {
  std::istringstream is(text);
  std::size_t n_merges = 0, n_vocab = 0;
  std::string header;
  if (!std::getline(is, header)) throw std::runtime_error("merge table: missing header");
  {
    std::istringstream hs(header);
    if (!(hs >> n_merges >> n_vocab)) throw std::runtime_error("merge table: bad header");
  }
  MergeTable table;
  std::string line;
  for (std::size_t i = 0; i < n_merges; ++i) {
    if (!std::getline(is, line)) throw std::runtime_error("merge table: truncated merges");
    const std::size_t sp = line.find(' ');
    if (sp == std::string::npos) throw std::runtime_error("merge table: bad merge line: " + line);
    table.merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  table.id_to_token.assign(n_vocab, "");
  std::vector<bool> seen(n_vocab, false);
  for (std::size_t i = 0; i < n_vocab; ++i) {
    if (!std::getline(is, line)) throw std::runtime_error("merge table: truncated vocab");
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("merge table: bad vocab line: " + line);
    const std::string tok = line.substr(0, tab);
    const int id = std::stoi(line.substr(tab + 1));
    if (id < 0 || static_cast<std::size_t>(id) >= n_vocab || seen[static_cast<std::size_t>(id)])
      throw std::runtime_error("merge table: vocab ids must be dense and unique");
    seen[static_cast<std::size_t>(id)] = true;
    table.id_to_token[static_cast<std::size_t>(id)] = tok;
    table.vocab.emplace(tok, id);
  }
  for (int i = 0; i < 4; ++i)
    if (table.id_to_token[static_cast<std::size_t>(i)] != kSpecials[i])
      throw std::runtime_error("merge table: special tokens must occupy ids 0..3");
  return table;
}

void save_merge_table(const MergeTable& table, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write merge table: " + path);
  f << merge_table_to_string(table);
}

MergeTable load_merge_table(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read merge table: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return merge_table_from_string(ss.str());
}

}  // namespace sparsemt
