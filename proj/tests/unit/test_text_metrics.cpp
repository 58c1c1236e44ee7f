#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fk/errors.hpp"
#include "fk/rng.hpp"
#include "fk/text_metrics.hpp"
#include "oracles.hpp"

using fk::EvalPair;

namespace {

std::string sentence(fk::Xoshiro256& r, std::size_t min_len, std::size_t max_len) {
  static const char* vocab[] = {"the", "car", "is", "parked", "ahead", "left", "risk", "low", "ego", "lane", "."};
  const std::size_t n = min_len + r.below(max_len - min_len + 1);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += std::string(i ? " " : "") + vocab[r.below(11)];
  return s;
}

std::vector<EvalPair> corpus(fk::Xoshiro256& r, std::size_t pairs) {
  std::vector<EvalPair> c;
  for (std::size_t i = 0; i < pairs; ++i) {
    EvalPair p{"p" + std::to_string(i), sentence(r, 1, 9), {}, std::nullopt};
    const std::size_t refs = 1 + r.below(3);
    for (std::size_t j = 0; j < refs; ++j) p.references.push_back(sentence(r, 1, 9));
    c.push_back(p);
  }
  return c;
}

}  // namespace

TEST(Tokenize, Examples) {
  EXPECT_EQ(fk::tokenize("The car stopped."), (std::vector<std::string>{"the", "car", "stopped", "."}));
  EXPECT_TRUE(fk::tokenize("").empty());
  EXPECT_EQ(fk::tokenize("TURN LEFT"), (std::vector<std::string>{"turn", "left"}));
  EXPECT_EQ(fk::tokenize("a,b"), (std::vector<std::string>{"a", ",", "b"}));
}

TEST(Bleu, FixtureExample) {
  const std::vector<EvalPair> c{{"1", "the cat sat", {"the cat sat down"}, {}}};
  EXPECT_NEAR(fk::bleu(c, 1), 100.0 * std::exp(1.0 - 4.0 / 3.0), 1e-12);
  EXPECT_NEAR(fk::bleu(c, 1), 71.65, 0.01);
}

TEST(Bleu, PerfectAndDisjoint) {
  const std::vector<EvalPair> same{{"1", "a b c d e", {"a b c d e"}, {}}, {"2", "f g h i", {"f g h i"}, {}}};
  for (int n = 1; n <= 4; ++n) EXPECT_EQ(fk::bleu(same, n), 100.0);
  const std::vector<EvalPair> none{{"1", "x y z", {"a b c"}, {}}};
  for (int n = 1; n <= 4; ++n) EXPECT_EQ(fk::bleu(none, n), 0.0);
  EXPECT_THROW(fk::bleu({}, 1), fk::ValidationError);
  EXPECT_THROW(fk::bleu(same, 5), fk::ValidationError);
}

TEST(Bleu, ClosestReferenceLengthTieGoesShorter) {
  // Candidate length 3; references of length 2 and 4 are equally close, the shorter is used (no penalty).
  const std::vector<EvalPair> c{{"1", "a b c", {"a b", "a b c d"}, {}}};
  EXPECT_EQ(fk::bleu(c, 1), 100.0);
}

TEST(Bleu, MatchesBruteForceCounter) {
  fk::Xoshiro256 r(1);
  for (int t = 0; t < 40; ++t) {
    const auto c = corpus(r, 1 + r.below(6));
    for (int n = 1; n <= 4; ++n) EXPECT_NEAR(fk::bleu(c, n), oracle::bleu(c, n), 1e-9) << "corpus " << t << " n=" << n;
  }
}

TEST(Bleu, NonIncreasingInOrderWhenPrecisionsPositive) {
  fk::Xoshiro256 r(2);
  int checked = 0;
  for (int t = 0; t < 200 && checked < 30; ++t) {
    auto c = corpus(r, 4);
    for (auto& p : c) p.references.push_back(p.candidate + " extra");  // every order has a match
    double prev = fk::bleu(c, 1);
    for (int n = 2; n <= 4; ++n) {
      const double cur = fk::bleu(c, n);
      EXPECT_LE(cur, prev + 1e-12);
      prev = cur;
    }
    ++checked;
  }
}

TEST(Rouge, Examples) {
  EXPECT_EQ(fk::rouge_l(std::vector<EvalPair>{{"1", "a b c", {"a b c"}, {}}}), 100.0);
  EXPECT_EQ(fk::rouge_l(std::vector<EvalPair>{{"1", "a b c", {"d e"}, {}}}), 0.0);
  // P = 2/3, R = 1, beta = 1.2: F = 2.44 * (2/3) / (1 + 1.44 * 2/3).
  const double f = 2.44 * (2.0 / 3.0) / (1.0 + 1.44 * 2.0 / 3.0);
  EXPECT_NEAR(fk::rouge_l(std::vector<EvalPair>{{"1", "a b c", {"a c"}, {}}}), 100.0 * f, 1e-12);
  EXPECT_THROW(fk::rouge_l({}), fk::ValidationError);
}

TEST(Rouge, MatchesOracleAndIgnoresDuplicateReferences) {
  fk::Xoshiro256 r(3);
  for (int t = 0; t < 40; ++t) {
    auto c = corpus(r, 1 + r.below(6));
    const double v = fk::rouge_l(c);
    EXPECT_NEAR(v, oracle::rouge_l(c), 1e-9);
    for (auto& p : c) p.references.push_back(p.references.front());
    EXPECT_EQ(fk::rouge_l(c), v);
  }
}

TEST(Cider, SelfSimilarityAndDisjoint) {
  const std::vector<EvalPair> same{{"1", "a red car turns left", {"a red car turns left"}, {}},
                                   {"2", "the truck stops at the light", {"the truck stops at the light"}, {}},
                                   {"3", "no risk from the parked bus", {"no risk from the parked bus"}, {}}};
  EXPECT_EQ(fk::cider(same), 100.0);
  const std::vector<EvalPair> none{{"1", "x y z w", {"a b c d"}, {}}, {"2", "q r s t", {"e f g h"}, {}}};
  EXPECT_EQ(fk::cider(none), 0.0);
  EXPECT_THROW(fk::cider(std::vector<EvalPair>{{"1", "a", {"a"}, {}}}), fk::ValidationError);
}

TEST(Cider, MatchesTfIdfOracle) {
  fk::Xoshiro256 r(4);
  for (int t = 0; t < 30; ++t) {
    const auto c = corpus(r, 2 + r.below(5));
    EXPECT_NEAR(fk::cider(c), oracle::cider(c), 1e-9);
  }
}

TEST(Metrics, PermutationInvariant) {
  fk::Xoshiro256 r(5);
  auto c = corpus(r, 6);
  const double b = fk::bleu(c, 4), rl = fk::rouge_l(c), ci = fk::cider(c);
  std::reverse(c.begin(), c.end());
  EXPECT_EQ(fk::bleu(c, 4), b);
  EXPECT_NEAR(fk::rouge_l(c), rl, 1e-12);
  EXPECT_NEAR(fk::cider(c), ci, 1e-12);
}

TEST(Accuracy, Examples) {
  const std::vector<std::string> g{"yes", "no", "Left", "3"};
  EXPECT_EQ(fk::accuracy(g, g), 100.0);
  EXPECT_EQ(fk::accuracy(std::vector<std::string>{"a", "b", "c", "d"}, g), 0.0);
  EXPECT_EQ(fk::accuracy(std::vector<std::string>{" YES", "no ", "left", "4"}, g), 75.0);
  EXPECT_THROW(fk::accuracy(std::vector<std::string>{"a"}, g), fk::ValidationError);
}

TEST(Mae, ExamplesAndOracle) {
  EXPECT_EQ(fk::mae(std::vector<double>{1, 2}, std::vector<double>{1, 2}), 0.0);
  EXPECT_EQ(fk::mae(std::vector<double>{1, 3}, std::vector<double>{2, 2}), 1.0);
  fk::Xoshiro256 r(6);
  std::vector<double> a(100), b(100);
  for (auto& x : a) x = r.normal();
  for (auto& x : b) x = r.normal();
  double s = 0;
  for (int i = 0; i < 100; ++i) s += std::abs(a[i] - b[i]);
  EXPECT_EQ(fk::mae(a, b), s / 100);
  EXPECT_THROW(fk::mae(std::vector<double>{}, std::vector<double>{}), fk::ValidationError);
}

TEST(EvaluateLanguage, ReportsAllScoresAndNotes) {
  const std::vector<EvalPair> same{{"1", "a b c d", {"a b c d"}, {}}, {"2", "e f g h", {"e f g h"}, {}}};
  const auto r = fk::evaluate_language(same);
  for (const char* k : {"BLEU1", "BLEU2", "BLEU3", "BLEU4", "ROUGE_L", "CIDEr"}) EXPECT_EQ(r.scores.at(k), 100.0) << k;
  EXPECT_EQ(r.count, 2u);
  const auto single = fk::evaluate_language(std::vector<EvalPair>{{"1", "a", {"a"}, {}}});
  EXPECT_FALSE(single.scores.count("CIDEr"));
  EXPECT_TRUE(single.notes.count("CIDEr"));
}
