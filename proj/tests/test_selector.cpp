#include <gtest/gtest.h>

#include <random>

#include "heatvit/selector.hpp"
#include "heatvit/vit.hpp"
#include "oracles.hpp"

using namespace heatvit;

namespace {

ViTConfig tiny(int heads, int dim) {
  ViTConfig c;
  c.depth = 1;
  c.heads = heads;
  c.dim = dim;
  c.patch = 2;
  c.image_side = 4;
  c.channels = 1;
  c.classes = 3;
  c.selector_blocks = {1};
  return c;
}

SelectorParams random_selector(int heads, int dim, std::uint64_t seed) {
  const ViTConfig cfg = tiny(heads, dim);
  const std::vector<int> blocks{1};
  return random_weights(cfg, seed, blocks).selectors.at(1);
}

FTensor random_tokens(std::size_t n, std::size_t d, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  FTensor t({n, d});
  for (double& v : t.data) v = nd(rng);
  return t;
}

TokenSet token_set(FTensor t) {
  TokenSet ts;
  ts.origin.push_back(kClsOrigin);
  for (std::size_t i = 1; i < t.rows(); ++i) ts.origin.push_back(static_cast<int>(i - 1));
  ts.tokens = std::move(t);
  return ts;
}

FTensor scores_from_keep(const std::vector<double>& keep) {
  FTensor s({keep.size(), 2});
  for (std::size_t i = 0; i < keep.size(); ++i) {
    s.at(i, 0) = keep[i];
    s.at(i, 1) = 1.0 - keep[i];
  }
  return s;
}

}  // namespace

TEST(Classify, MatchesDirectEquations) {
  std::mt19937_64 rng(1);
  ExecContext ctx;
  ctx.precision = Precision::Real;
  ctx.approx.delta1 = 0.5;
  for (int t = 0; t < 100; ++t) {
    const int heads = 1 + static_cast<int>(rng() % 3);
    const int dim = heads * 2 * (1 + static_cast<int>(rng() % 3));
    const SelectorParams p = random_selector(heads, dim, rng());
    const FTensor x = random_tokens(2 + rng() % 7, static_cast<std::size_t>(dim), rng);
    const ScoreMap got = classify(x, p, ctx);
    const oracle::Scores want = oracle::classify(oracle::to_mat(x), p, 0.5L);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_NEAR(got.fused.at(r, k), static_cast<double>(want.fused[r][k]), 1e-5);
        for (std::size_t i = 0; i < got.head_scores.size(); ++i) {
          EXPECT_NEAR(got.head_scores[i].at(r, k), static_cast<double>(want.s[i][r][k]), 1e-5);
        }
      }
      for (std::size_t i = 0; i < static_cast<std::size_t>(heads); ++i) {
        EXPECT_NEAR(got.head_weights.at(r, i), static_cast<double>(want.a[r][i]), 1e-5);
      }
    }
  }
}

TEST(Classify, RowsAreProbabilities) {
  std::mt19937_64 rng(2);
  ExecContext ctx;
  ctx.precision = Precision::Real;
  const SelectorParams p = random_selector(2, 8, 9);
  const ScoreMap s = classify(random_tokens(6, 8, rng), p, ctx);
  for (std::size_t r = 0; r < 6; ++r) {
    EXPECT_NEAR(s.fused.at(r, 0) + s.fused.at(r, 1), 1.0, 1e-6);
    for (const auto& hs : s.head_scores) EXPECT_NEAR(hs.at(r, 0) + hs.at(r, 1), 1.0, 1e-6);
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_GE(s.head_weights.at(r, i), 0.0);
      EXPECT_LE(s.head_weights.at(r, i), 1.0);
    }
  }
}

TEST(Classify, FixedPointStaysNearReal) {
  std::mt19937_64 rng(3);
  const SelectorParams p = random_selector(2, 8, 4);
  const FTensor x = random_tokens(5, 8, rng);
  ExecContext real;
  real.precision = Precision::Real;
  ExecContext fx;
  const ScoreMap a = classify(x, p, real), b = classify(x, p, fx);
  for (std::size_t i = 0; i < a.fused.size(); ++i) EXPECT_NEAR(a.fused.data[i], b.fused.data[i], 0.1);
}

TEST(Classify, RejectsIndivisibleWidth) {
  ExecContext ctx;
  const SelectorParams p = random_selector(2, 8, 1);
  std::mt19937_64 rng(1);
  EXPECT_THROW(classify(random_tokens(3, 9, rng), p, ctx), std::invalid_argument);
}

TEST(FuseScores, EqualWeightsGiveMean) {
  const std::vector<FTensor> s{scores_from_keep({0.2, 0.9}), scores_from_keep({0.6, 0.1})};
  const FTensor a({2, 2}, {0.3, 0.3, 0.7, 0.7});
  const FTensor f = fuse_scores(s, a);
  EXPECT_NEAR(f.at(0, 0), 0.4, 1e-12);
  EXPECT_NEAR(f.at(1, 0), 0.5, 1e-12);
}

TEST(FuseScores, SingleHeadIgnoresWeights) {
  const std::vector<FTensor> s{scores_from_keep({0.2, 0.9, 0.5})};
  const FTensor a({3, 1}, {0.1, 0.0, 1.0});
  const FTensor f = fuse_scores(s, a);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f.data[i], s[0].data[i], 1e-15);
}

TEST(FuseScores, ScaleFreeInHeadWeights) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng() % 8, h = 1 + rng() % 4;
    std::vector<FTensor> s;
    for (std::size_t i = 0; i < h; ++i) {
      std::vector<double> k(n);
      for (double& v : k) v = u(rng);
      s.push_back(scores_from_keep(k));
    }
    FTensor a({n, h});
    for (double& v : a.data) v = u(rng);
    FTensor a2 = a;
    const double c = 0.1 + 5 * u(rng);
    for (double& v : a2.data) v *= c;
    const FTensor f1 = fuse_scores(s, a), f2 = fuse_scores(s, a2);
    for (std::size_t i = 0; i < f1.size(); ++i) EXPECT_NEAR(f1.data[i], f2.data[i], 1e-12);
    EXPECT_EQ(decide(f1, DecisionMode::threshold(0.5)).keep, decide(f2, DecisionMode::threshold(0.5)).keep);
  }
}

TEST(Decide, ThresholdKeepsTies) {
  const DecisionMask m = decide(scores_from_keep({0.9, 0.3, 0.5}), DecisionMode::threshold(0.5), 0);
  EXPECT_EQ(m.keep, (std::vector<std::uint8_t>{1, 0, 1}));
}

TEST(Decide, ClsAlwaysKept) {
  const DecisionMask m = decide(scores_from_keep({0.1, 0.1, 0.9}), DecisionMode::threshold(0.5), 1);
  EXPECT_EQ(m.keep, (std::vector<std::uint8_t>{0, 1, 1}));
}

TEST(Decide, AllCertainKeepsAll) {
  const DecisionMask m = decide(scores_from_keep({1.0, 1.0, 1.0, 1.0}), DecisionMode::threshold(0.5));
  EXPECT_EQ(m.kept(), 4u);
  EXPECT_FALSE(m.any_pruned());
}

TEST(Decide, RejectsBadTau) {
  const FTensor s = scores_from_keep({0.5});
  EXPECT_THROW(decide(s, DecisionMode::threshold(0.0)), std::invalid_argument);
  EXPECT_THROW(decide(s, DecisionMode::threshold(1.0)), std::invalid_argument);
  EXPECT_THROW(decide(s, DecisionMode::gumbel(0.0, 1)), std::invalid_argument);
}

TEST(Decide, GumbelDeterministicPerSeed) {
  const FTensor s = scores_from_keep({0.5, 0.4, 0.6, 0.55, 0.45, 0.3, 0.7});
  const auto a = decide(s, DecisionMode::gumbel(1.0, 77)).keep;
  EXPECT_EQ(a, decide(s, DecisionMode::gumbel(1.0, 77)).keep);
}

TEST(Decide, GumbelColdLimitMatchesThreshold) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  std::vector<double> k(32);
  for (double& v : k) v = u(rng);
  k[0] = 1.0;  // CLS row
  const FTensor s = scores_from_keep(k);
  const auto want = decide(s, DecisionMode::threshold(0.5)).keep;
  std::size_t agree = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto got = decide(s, DecisionMode::gumbel(1e-3, seed)).keep;
    for (std::size_t i = 1; i < k.size(); ++i) {
      agree += got[i] == want[i];
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.99);
}

TEST(Decide, GumbelUnitTemperatureSamplesProbabilities) {
  const FTensor s = scores_from_keep({1.0, 0.3});
  int kept = 0;
  const int trials = 20000;
  for (int seed = 0; seed < trials; ++seed) kept += decide(s, DecisionMode::gumbel(1.0, static_cast<std::uint64_t>(seed))).keep[1];
  EXPECT_NEAR(kept / static_cast<double>(trials), 0.3, 0.015);
}

TEST(Decide, TopKKeepsHighestScores) {
  const FTensor s = scores_from_keep({0.0, 0.5, 0.9, 0.5, 0.1});
  EXPECT_EQ(decide_top_k(s, 2, 0).keep, (std::vector<std::uint8_t>{1, 1, 1, 0, 0}));
  EXPECT_EQ(decide_top_k(s, 10, 0).kept(), 5u);
}

TEST(Package, HandExamples) {
  const FTensor x({3, 2}, {9, 9, 1, 1, 3, 3});
  const DecisionMask m{{1, 0, 0}};
  auto p = package(x, scores_from_keep({1.0, 0.5, 0.5}), m);
  EXPECT_DOUBLE_EQ(p[0], 2.0);
  EXPECT_DOUBLE_EQ(p[1], 2.0);
  p = package(x, scores_from_keep({1.0, 0.2, 0.6}), m);
  EXPECT_DOUBLE_EQ(p[0], 2.5);
  p = package(x, scores_from_keep({1.0, 0.0, 0.0}), m);
  EXPECT_DOUBLE_EQ(p[0], 2.0);  // unweighted fallback
  p = package(x, scores_from_keep({1.0, 0.3, 0.6}), DecisionMask{{1, 1, 0}});
  EXPECT_DOUBLE_EQ(p[0], 3.0);
  EXPECT_THROW(package(x, scores_from_keep({1, 1, 1}), DecisionMask{{1, 1, 1}}), std::invalid_argument);
}

TEST(Package, MatchesWeightedMean) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + rng() % 31, d = 1 + rng() % 6;
    const FTensor x = random_tokens(n, d, rng, 3.0);
    std::vector<double> k(n);
    for (double& v : k) v = u(rng);
    DecisionMask m;
    for (std::size_t i = 0; i < n; ++i) m.keep.push_back(i == 0 || u(rng) < 0.5);
    if (!m.any_pruned()) m.keep[n - 1] = 0;
    oracle::Mat rows;
    oracle::Row w;
    for (std::size_t i = 0; i < n; ++i) {
      if (m.keep[i]) continue;
      rows.push_back(oracle::to_mat(x)[i]);
      w.push_back(k[i]);
    }
    const auto want = oracle::weighted_mean(rows, w);
    const auto got = package(x, scores_from_keep(k), m);
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(got[c], static_cast<double>(want[c]), 1e-9);
  }
}

TEST(Repack, FlowExample) {
  const TokenSet x = token_set(FTensor({4, 1}, {10, 11, 12, 13}));
  const TokenSet y = repack(x, DecisionMask{{1, 0, 1, 0}}, std::vector<double>{7.0});
  EXPECT_EQ(y.size(), 3u);
  EXPECT_EQ(y.origin, (std::vector<int>{kClsOrigin, 1, package_origin(1)}));
  EXPECT_EQ(y.tokens.data, (std::vector<double>{10, 12, 7}));
  EXPECT_EQ(y.stage, 1);
  EXPECT_NO_THROW(y.validate());
}

TEST(Repack, AllKeptIsIdentity) {
  std::mt19937_64 rng(7);
  const TokenSet x = token_set(random_tokens(5, 3, rng));
  const TokenSet y = repack(x, DecisionMask{{1, 1, 1, 1, 1}}, std::nullopt);
  EXPECT_EQ(y.tokens.data, x.tokens.data);
  EXPECT_EQ(y.origin, x.origin);
}

TEST(Repack, RandomMaskInvariants) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng() % 20;
    const TokenSet x = token_set(random_tokens(n, 2, rng));
    DecisionMask m;
    for (std::size_t i = 0; i < n; ++i) m.keep.push_back(i == 0 || rng() % 2);
    std::optional<std::vector<double>> pkg;
    if (m.any_pruned()) pkg = std::vector<double>{0.0, 0.0};
    const TokenSet y = repack(x, m, pkg);
    ASSERT_EQ(y.size(), m.kept() + (m.any_pruned() ? 1 : 0));
    std::vector<int> kept;
    for (std::size_t i = 0; i < n; ++i) {
      if (m.keep[i]) kept.push_back(x.origin[i]);
    }
    std::vector<int> head(y.origin.begin(), y.origin.begin() + static_cast<long>(m.kept()));
    EXPECT_EQ(head, kept);
    if (m.any_pruned()) EXPECT_EQ(y.origin.back(), package_origin(1));
    EXPECT_NO_THROW(y.validate());
  }
}

TEST(TokenSet, Validation) {
  TokenSet ts = token_set(FTensor({3, 1}, {1, 2, 3}));
  EXPECT_NO_THROW(ts.validate());
  ts.origin[1] = kClsOrigin;
  EXPECT_THROW(ts.validate(), std::invalid_argument);
  ts.origin = {kClsOrigin, package_origin(1), package_origin(1)};
  EXPECT_THROW(ts.validate(), std::invalid_argument);
  ts.origin = {kClsOrigin, package_origin(1), package_origin(2)};
  EXPECT_NO_THROW(ts.validate());
}

TEST(ComposeMask, Examples) {
  const DecisionMask a{{1, 1, 0}}, b{{1, 0, 1}}, ones{{1, 1, 1}};
  EXPECT_EQ(compose_mask(a, b).keep, (std::vector<std::uint8_t>{1, 0, 0}));
  EXPECT_EQ(compose_mask(a, ones).keep, a.keep);
  EXPECT_THROW(compose_mask(a, DecisionMask{{1}}), std::invalid_argument);
}

TEST(ComposeMask, NeverExceedsEitherInput) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 200; ++t) {
    DecisionMask a, b;
    for (int i = 0; i < 16; ++i) {
      a.keep.push_back(rng() % 2);
      b.keep.push_back(rng() % 2);
    }
    const auto c = compose_mask(a, b);
    for (int i = 0; i < 16; ++i) {
      EXPECT_LE(c.keep[static_cast<std::size_t>(i)], a.keep[static_cast<std::size_t>(i)]);
      EXPECT_LE(c.keep[static_cast<std::size_t>(i)], b.keep[static_cast<std::size_t>(i)]);
    }
  }
}

TEST(RunSelector, KeepAllIsIdentity) {
  std::mt19937_64 rng(10);
  const SelectorParams p = random_selector(2, 8, 3);
  const TokenSet x = token_set(random_tokens(6, 8, rng));
  ExecContext ctx;
  ctx.precision = Precision::Real;
  const SelectionResult r = run_selector(x, p, DecisionMode::threshold(0.5), ctx, 5);
  EXPECT_EQ(r.tokens.tokens.data, x.tokens.data);
  EXPECT_EQ(r.tokens.origin, x.origin);
  EXPECT_TRUE(r.package_members.empty());
}

TEST(RunSelector, PackageTokenIsAppended) {
  std::mt19937_64 rng(11);
  const SelectorParams p = random_selector(2, 8, 3);
  const TokenSet x = token_set(random_tokens(9, 8, rng));
  ExecContext ctx;
  ctx.precision = Precision::Real;
  const SelectionResult r = run_selector(x, p, DecisionMode::threshold(0.5), ctx, 3);
  EXPECT_EQ(r.tokens.size(), 5u);  // CLS + 3 + package
  EXPECT_EQ(r.package_members.size(), 5u);
  EXPECT_EQ(r.tokens.origin.back(), package_origin(1));
}

TEST(SelectorMacs, CountsGemmLayers) {
  // d = 64: local 64*32, scoring 64*32 + 32*2, attention 3*3, per token
  EXPECT_EQ(selector_macs(1, 192, 3), 3 * 2048 + 3 * (2048 + 64) + 9);
  EXPECT_EQ(selector_macs(10, 192, 3), 10 * selector_macs(1, 192, 3));
}
