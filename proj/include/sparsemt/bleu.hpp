#pragma once

#include <string>
#include <vector>

namespace sparsemt {

struct BleuReport {
  double score = 0.0;  // 0..100
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 1.0;
  long long hyp_len = 0;
  long long ref_len = 0;
};

// mteval-v13a tokenization: entity unescaping, punctuation split (period,
// comma and dash are digit-context sensitive), whitespace collapse. Case is
// preserved.
std::vector<std::string> tokenize_13a(const std::string& text);

// Corpus-level BLEU over detokenized case-sensitive text, one reference per
// hypothesis, clipped 1..4-gram precisions, no smoothing: any zero precision
// gives score 0.
BleuReport corpus_bleu(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references);

// Singleton corpus_bleu; with smooth=true an exp-decay floor replaces zero
// n-gram precisions (diagnostics only, never used for headline scores).
double sentence_bleu(const std::string& hypothesis, const std::string& reference,
                     bool smooth = false);

}  // namespace sparsemt
