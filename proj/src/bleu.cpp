#include "sparsemt/bleu.hpp"

#include <cmath>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace sparsemt {

namespace {

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

const std::regex& punct_re() {
  // mteval-v13a punctuation class; apostrophe, period, comma and dash are
  // deliberately absent (the latter three are handled by the digit rules)
  static const std::regex re(R"(([\{-\~\[-\` -\&\(-\+\:-\@/]))");
  return re;
}
const std::regex& period_comma_pre_re() {
  static const std::regex re(R"(([^0-9])([\.,]))");
  return re;
}
const std::regex& period_comma_post_re() {
  static const std::regex re(R"(([\.,])([^0-9]))");
  return re;
}
const std::regex& digit_dash_re() {
  static const std::regex re(R"(([0-9])(\-))");
  return re;
}

}  // namespace

std::vector<std::string> tokenize_13a(const std::string& text) {
  std::string line = text;
  replace_all(line, "<skipped>", "");
  replace_all(line, "-\n", "");
  replace_all(line, "\n", " ");
  if (line.find('&') != std::string::npos) {
    replace_all(line, "&quot;", "\"");
    replace_all(line, "&amp;", "&");
    replace_all(line, "&lt;", "<");
    replace_all(line, "&gt;", ">");
  }
  line = " " + line + " ";
  line = std::regex_replace(line, punct_re(), " $1 ");
  line = std::regex_replace(line, period_comma_pre_re(), "$1 $2 ");
  line = std::regex_replace(line, period_comma_post_re(), " $1 $2");
  line = std::regex_replace(line, digit_dash_re(), "$1 $2 ");

  std::vector<std::string> tokens;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

namespace {

using NgramCounts = std::unordered_map<std::string, long long>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int j = 1; j < n; ++j) {
      key += '\x1f';
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

struct BleuStats {
  long long matches[4] = {0, 0, 0, 0};
  long long totals[4] = {0, 0, 0, 0};
  long long hyp_len = 0;
  long long ref_len = 0;

  void accumulate(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    hyp_len += static_cast<long long>(hyp.size());
    ref_len += static_cast<long long>(ref.size());
    for (int n = 1; n <= 4; ++n) {
      const NgramCounts hc = count_ngrams(hyp, n);
      const NgramCounts rc = count_ngrams(ref, n);
      for (const auto& [gram, cnt] : hc) {
        totals[n - 1] += cnt;
        auto it = rc.find(gram);
        if (it != rc.end()) matches[n - 1] += std::min(cnt, it->second);
      }
    }
  }
};

BleuReport finalize(const BleuStats& st, bool smooth) {
  BleuReport rep;
  rep.hyp_len = st.hyp_len;
  rep.ref_len = st.ref_len;
  if (st.hyp_len == 0) return rep;
  rep.brevity_penalty =
      st.hyp_len > st.ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.hyp_len));
  double smooth_val = 1.0;
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < 4; ++n) {
    const long long total = std::max<long long>(st.totals[n], smooth ? 1 : 0);
    if (total == 0) {
      rep.precisions[n] = 0.0;
      zero = true;
      continue;
    }
    double p = static_cast<double>(st.matches[n]) / static_cast<double>(total);
    if (p == 0.0) {
      if (smooth) {
        smooth_val *= 2.0;
        p = 1.0 / (smooth_val * static_cast<double>(total));
      } else {
        zero = true;
      }
    }
    rep.precisions[n] = p;
    if (p > 0.0) log_sum += std::log(p);
  }
  rep.score = zero ? 0.0 : 100.0 * rep.brevity_penalty * std::exp(log_sum / 4.0);
  return rep;
}

}  // namespace

BleuReport corpus_bleu(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hypotheses.size()) +
                                " hypotheses vs " + std::to_string(references.size()) +
                                " references");
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  BleuStats st;
  for (std::size_t i = 0; i < hypotheses.size(); ++i)
    st.accumulate(tokenize_13a(hypotheses[i]), tokenize_13a(references[i]));
  return finalize(st, /*smooth=*/false);
}

double sentence_bleu(const std::string& hypothesis, const std::string& reference, bool smooth) {
  BleuStats st;
  st.accumulate(tokenize_13a(hypothesis), tokenize_13a(reference));
  return finalize(st, smooth).score;
}

}  // namespace sparsemt
