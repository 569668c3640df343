#include <gtest/gtest.h>

#include <random>

#include "postpick/metrics.hpp"

using namespace postpick;
using namespace postpick::metrics;

namespace {

constexpr Label P = Label::positive;
constexpr Label N = Label::negative;

double pair_count_auc(const std::vector<double>& s, const std::vector<Label>& t) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (t[i] != P || t[j] != N) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  return wins / pairs;
}

std::vector<Label> swapped(std::vector<Label> t) {
  for (auto& l : t) l = l == P ? N : P;
  return t;
}

std::vector<double> negated(std::vector<double> s) {
  for (auto& v : s) v = -v;
  return s;
}

}  // namespace

TEST(Confusion, SmallExamples) {
  const std::vector<Label> truth = {P, N}, pred = {P, P};
  EXPECT_EQ(confusion(truth, pred), (Confusion{.tp = 1, .fp = 1, .tn = 0, .fn = 0}));

  const std::vector<Label> mixed = {P, N, N, P, P, N, P, N, N, P};
  const auto c = confusion(mixed, mixed);
  EXPECT_EQ(c.fp, 0u);
  EXPECT_EQ(c.fn, 0u);
  EXPECT_EQ(c.tp, 5u);
  EXPECT_EQ(c.tn, 5u);
}

TEST(Confusion, MatchesRecount) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.4);
  for (int t = 0; t < 100; ++t) {
    std::vector<Label> truth(50), pred(50);
    for (auto& l : truth) l = coin(rng) ? P : N;
    for (auto& l : pred) l = coin(rng) ? P : N;
    Confusion naive;
    for (std::size_t i = 0; i < 50; ++i) {
      if (truth[i] == P && pred[i] == P) ++naive.tp;
      if (truth[i] == N && pred[i] == P) ++naive.fp;
      if (truth[i] == N && pred[i] == N) ++naive.tn;
      if (truth[i] == P && pred[i] == N) ++naive.fn;
    }
    const auto c = confusion(truth, pred);
    EXPECT_EQ(c, naive);
    EXPECT_EQ(c.total(), 50u);
  }
}

TEST(Confusion, RejectsBadLengths) {
  const std::vector<Label> a = {P, N}, b = {P};
  EXPECT_THROW(confusion(a, b), std::invalid_argument);
  EXPECT_THROW(confusion(std::vector<Label>{}, std::vector<Label>{}), std::invalid_argument);
}

TEST(Summarize, PlateRowOfTableOne) {
  const auto r = summarize(Confusion{.tp = 814, .fp = 300, .tn = 701, .fn = 186});
  ASSERT_TRUE(r.sensitivity && r.specificity && r.ppv && r.balanced_accuracy);
  EXPECT_NEAR(*r.sensitivity, 0.814, 1e-12);
  EXPECT_NEAR(*r.specificity, 701.0 / 1001.0, 1e-12);
  EXPECT_NEAR(*r.specificity, 0.700, 5e-4);
  EXPECT_NEAR(*r.ppv, 814.0 / 1114.0, 1e-12);
  EXPECT_NEAR(*r.ppv, 0.7307, 5e-5);
  EXPECT_DOUBLE_EQ(*r.balanced_accuracy, (*r.sensitivity + *r.specificity) / 2.0);
  EXPECT_FALSE(r.auc);
}

TEST(Summarize, ZeroDenominatorsAreAbsent) {
  const auto only_negatives = summarize(Confusion{.tp = 0, .fp = 0, .tn = 5, .fn = 0});
  EXPECT_FALSE(only_negatives.sensitivity);
  EXPECT_FALSE(only_negatives.ppv);
  EXPECT_FALSE(only_negatives.balanced_accuracy);
  ASSERT_TRUE(only_negatives.specificity);
  EXPECT_EQ(*only_negatives.specificity, 1.0);

  const auto no_calls = summarize(Confusion{.tp = 0, .fp = 0, .tn = 0, .fn = 4});
  EXPECT_FALSE(no_calls.ppv);
  EXPECT_EQ(no_calls.sensitivity, 0.0);
}

TEST(Summarize, FractionsStayInRange) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> count(0, 30);
  for (int t = 0; t < 500; ++t) {
    const auto r = summarize(Confusion{count(rng), count(rng), count(rng), count(rng)});
    for (const auto& v : {r.sensitivity, r.specificity, r.ppv, r.balanced_accuracy})
      if (v) {
        EXPECT_GE(*v, 0.0);
        EXPECT_LE(*v, 1.0);
      }
  }
}

TEST(Auc, Examples) {
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.7, 0.1}, std::vector<Label>{P, P, N, N}), 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.3, 0.3, 0.3, 0.3, 0.3}, std::vector<Label>{P, N, P, N, N}), 0.5);
  EXPECT_EQ(roc_auc(std::vector<double>{0.6, 0.4, 0.5, 0.3}, std::vector<Label>{P, P, N, N}), 0.75);
}

TEST(Auc, MatchesPairCounting) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> size(2, 50), level(0, 9);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < 500; ++t) {
    const int n = size(rng);
    std::vector<double> s(n);
    std::vector<Label> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = level(rng) * 0.1;  // coarse levels force plenty of ties
      y[i] = coin(rng) ? P : N;
    }
    y[0] = P;
    y[1] = N;
    EXPECT_NEAR(roc_auc(s, y), pair_count_auc(s, y), 1e-12);
  }
}

TEST(Auc, Symmetries) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g(0.0, 1.0);
  std::bernoulli_distribution coin(0.3);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(40);
    std::vector<Label> y(40);
    for (int i = 0; i < 40; ++i) {
      s[i] = g(rng);
      y[i] = coin(rng) ? P : N;
    }
    y[0] = P;
    y[1] = N;
    const double a = roc_auc(s, y);
    EXPECT_NEAR(roc_auc(negated(s), swapped(y)), a, 1e-12);
    EXPECT_NEAR(roc_auc(negated(s), y), 1.0 - a, 1e-12);
  }
}

TEST(Auc, RejectsDegenerateInput) {
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<Label>{P, P}), std::invalid_argument);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1}, std::vector<Label>{P, N}), std::invalid_argument);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, std::nan("")}, std::vector<Label>{P, N}), std::invalid_argument);
}
