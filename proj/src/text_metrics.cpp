#include "fk/text_metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <unordered_map>

#include "fk/errors.hpp"

namespace fk {

namespace {

using NgramCounts = std::map<std::string, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& toks, std::size_t n) {
  NgramCounts counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key = toks[i];
    for (std::size_t j = 1; j < n; ++j) {
      key.push_back('\x1f');
      key += toks[i + j];
    }
    ++counts[key];
  }
  return counts;
}

void require_corpus(std::span<const EvalPair> pairs, const char* metric) {
  if (pairs.empty()) throw ValidationError(std::string(metric) + ": empty corpus");
  for (const auto& p : pairs) {
    if (p.references.empty()) {
      throw ValidationError(std::string(metric) + ": pair '" + p.id + "' has no references");
    }
  }
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

double bleu(std::span<const EvalPair> pairs, int max_n) {
  if (max_n < 1 || max_n > 4) throw ValidationError("bleu: max_n must be in 1..4");
  require_corpus(pairs, "bleu");

  std::vector<double> matches(max_n, 0.0), totals(max_n, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (const auto& p : pairs) {
    const auto cand = tokenize(p.candidate);
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : p.references) refs.push_back(tokenize(r));

    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
      const auto diff = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) best = r.size();
    }
    cand_len += static_cast<double>(cand.size());
    ref_len += static_cast<double>(best);

    for (int n = 1; n <= max_n; ++n) {
      const auto cand_counts = count_ngrams(cand, static_cast<std::size_t>(n));
      std::unordered_map<std::string, std::size_t> max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, c] : count_ngrams(r, static_cast<std::size_t>(n))) {
          auto& m = max_ref[g];
          m = std::max(m, c);
        }
      }
      for (const auto& [g, c] : cand_counts) {
        totals[n - 1] += static_cast<double>(c);
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matches[n - 1] += static_cast<double>(std::min(c, it->second));
      }
    }
  }

  if (matches[0] == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < max_n; ++n) {
    const double prec = matches[n] > 0.0 ? matches[n] / totals[n] : kBleuSmoothing;
    log_sum += std::log(prec);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return 100.0 * bp * std::exp(log_sum / max_n);
}

double rouge_l(std::span<const EvalPair> pairs) {
  require_corpus(pairs, "rouge_l");
  const double beta2 = kRougeBeta * kRougeBeta;
  double total = 0.0;
  for (const auto& p : pairs) {
    const auto cand = tokenize(p.candidate);
    double best = 0.0;
    for (const auto& r : p.references) {
      const auto ref = tokenize(r);
      const std::size_t lcs = lcs_length(cand, ref);
      if (lcs == 0) continue;
      const double prec = static_cast<double>(lcs) / static_cast<double>(cand.size());
      const double rec = static_cast<double>(lcs) / static_cast<double>(ref.size());
      best = std::max(best, (1.0 + beta2) * prec * rec / (rec + beta2 * prec));
    }
    total += best;
  }
  return 100.0 * total / static_cast<double>(pairs.size());
}

double cider(std::span<const EvalPair> pairs) {
  require_corpus(pairs, "cider");
  if (pairs.size() < 2) throw ValidationError("cider: IDF needs at least two documents");
  const double n_docs = static_cast<double>(pairs.size());

  // Per pair: tokenized candidate and references.
  std::vector<std::vector<std::string>> cands;
  std::vector<std::vector<std::vector<std::string>>> refs;
  for (const auto& p : pairs) {
    cands.push_back(tokenize(p.candidate));
    auto& rs = refs.emplace_back();
    for (const auto& r : p.references) rs.push_back(tokenize(r));
  }

  std::vector<double> pair_score(pairs.size(), 0.0);
  for (int n = 1; n <= kCiderMaxN; ++n) {
    std::map<std::string, double> df;
    for (const auto& rs : refs) {
      std::set<std::string> seen;
      for (const auto& r : rs)
        for (const auto& [g, c] : count_ngrams(r, static_cast<std::size_t>(n))) seen.insert(g);
      for (const auto& g : seen) df[g] += 1.0;
    }
    auto weigh = [&](const std::vector<std::string>& toks) {
      std::map<std::string, double> vec;
      for (const auto& [g, c] : count_ngrams(toks, static_cast<std::size_t>(n))) {
        auto it = df.find(g);
        const double d = it == df.end() ? 1.0 : std::max(1.0, it->second);
        vec[g] = static_cast<double>(c) * std::log(n_docs / d);
      }
      return vec;
    };
    auto sq_norm = [](const std::map<std::string, double>& v) {
      double s = 0.0;
      for (const auto& [g, w] : v) s += w * w;
      return s;
    };

    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto cv = weigh(cands[i]);
      const double cn = sq_norm(cv);
      double sum = 0.0;
      for (const auto& r : refs[i]) {
        const auto rv = weigh(r);
        const double rn = sq_norm(rv);
        if (cn == 0.0 || rn == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, w] : cv) {
          auto it = rv.find(g);
          if (it != rv.end()) dot += w * it->second;
        }
        sum += dot / std::sqrt(cn * rn);
      }
      pair_score[i] += sum / static_cast<double>(refs[i].size());
    }
  }

  double total = 0.0;
  for (double s : pair_score) total += s / kCiderMaxN;
  return 100.0 * total / n_docs;
}

std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

double accuracy(std::span<const std::string> preds, std::span<const std::string> gts) {
  if (preds.size() != gts.size()) throw ValidationError("accuracy: length mismatch");
  if (preds.empty()) throw ValidationError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += normalize_answer(preds[i]) == normalize_answer(gts[i]);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(preds.size());
}

double mae(std::span<const double> preds, std::span<const double> gts) {
  if (preds.size() != gts.size()) throw ValidationError("mae: length mismatch");
  if (preds.empty()) throw ValidationError("mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - gts[i]);
  return s / static_cast<double>(preds.size());
}

MetricReport evaluate_language(std::span<const EvalPair> pairs) {
  MetricReport r;
  r.count = pairs.size();
  for (int n = 1; n <= 4; ++n) r.scores["BLEU" + std::to_string(n)] = bleu(pairs, n);
  r.scores["ROUGE_L"] = rouge_l(pairs);
  if (pairs.size() >= 2) {
    r.scores["CIDEr"] = cider(pairs);
  } else {
    r.notes["CIDEr"] = "not computed: IDF needs at least two documents";
  }
  r.notes["bleu_smoothing"] = "zero precision at order >= 2 replaced by 1e-9";
  r.notes["rouge_beta"] = "1.2";
  r.notes["cider_scale"] = "100 x mean cosine (plain CIDEr, not CIDEr-D)";
  return r;
}

}  // namespace fk
