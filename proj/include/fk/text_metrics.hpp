#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fk {

/// One candidate text scored against its references.
struct EvalPair {
  std::string id;
  std::string candidate;
  std::vector<std::string> references;
  std::optional<std::string> task_tag;
};

/// Named scores. Percent-style metrics (BLEU, ROUGE_L, ACC, CIDEr) are on a 0-100 scale.
struct MetricReport {
  std::map<std::string, double> scores;
  std::map<std::string, std::string> notes;
  std::size_t count = 0;
  bool scale_0_100 = true;
};

/// Substituted for a zero clipped n-gram precision of order >= 2.
inline constexpr double kBleuSmoothing = 1e-9;
inline constexpr double kRougeBeta = 1.2;
inline constexpr int kCiderMaxN = 4;

/// Lowercases ASCII, splits on whitespace, and emits every ASCII punctuation
/// character as its own token.
std::vector<std::string> tokenize(std::string_view text);

/// Corpus BLEU over orders 1..max_n, scaled to 0-100.
///
/// Clipped n-gram matches and candidate n-gram totals are pooled over the
/// corpus. The reference length per pair is the reference length closest to the
/// candidate's (shorter wins ties). A corpus with no unigram match scores 0.
/// A zero precision at a higher order (including an order with no candidate
/// n-grams at all) is replaced by kBleuSmoothing.
double bleu(std::span<const EvalPair> pairs, int max_n);

/// Mean over pairs of the best LCS F-measure (beta = 1.2) against any reference, x100.
double rouge_l(std::span<const EvalPair> pairs);

/// CIDEr without the length penalty or count clipping of CIDEr-D.
///
/// Documents are the pairs' reference sets. For n = 1..4 each text becomes a
/// vector of raw n-gram counts times log(N_docs / max(1, df)); the pair score is
/// the cosine against each reference averaged over references and then over n.
/// The corpus value is 100 x the mean pair score. Needs at least two pairs.
double cider(std::span<const EvalPair> pairs);

/// Exact-match accuracy after trimming and lowercasing, x100.
double accuracy(std::span<const std::string> preds, std::span<const std::string> gts);

/// Mean absolute error.
double mae(std::span<const double> preds, std::span<const double> gts);

/// Trims ASCII whitespace, lowercases ASCII and collapses inner whitespace runs.
std::string normalize_answer(std::string_view s);

/// BLEU1-4, ROUGE_L and CIDEr for a caption corpus. CIDEr is left out, with a
/// note, when the corpus has fewer than two documents.
MetricReport evaluate_language(std::span<const EvalPair> pairs);

}  // namespace fk
