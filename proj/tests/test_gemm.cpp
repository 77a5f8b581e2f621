#include <gtest/gtest.h>

#include <random>

#include "heatvit/gemm.hpp"
#include "heatvit/vit.hpp"
#include "oracles.hpp"

using namespace heatvit;

namespace {

QTensor random_q(std::size_t r, std::size_t c, std::mt19937_64& rng, int frac = 4) {
  std::uniform_int_distribution<int> u(-128, 127);
  std::vector<std::int8_t> d(r * c);
  for (auto& v : d) v = static_cast<std::int8_t>(u(rng));
  return QTensor({r, c}, std::move(d), FxFormat(frac));
}

std::vector<std::int64_t> widen(const AccTensor& a) { return {a.data.begin(), a.data.end()}; }

}  // namespace

TEST(TiledGemm, IdentityReturnsWeights) {
  std::mt19937_64 rng(1);
  const QTensor w = random_q(2, 3, rng, 5);
  const QTensor eye({2, 2}, {64, 0, 0, 64}, FxFormat(6));  // 1.0 on the diagonal
  const AccTensor acc = tiled_gemm(eye, w, GemmMode::accumulate(), {});
  EXPECT_EQ(acc.in_frac_bits, 11);
  const FTensor got = dequantize_acc(acc);
  const FTensor want = dequantize(w);
  EXPECT_EQ(got.data, want.data);
}

TEST(TiledGemm, AllSmallTilingsMatchNaive) {
  std::mt19937_64 rng(2);
  const QTensor a = random_q(5, 7, rng), w = random_q(7, 3, rng);
  const auto want = oracle::int_matmul(a, w, 1);
  for (int ti : {1, 2, 4, 8}) {
    for (int to : {1, 2, 4, 8}) {
      EXPECT_EQ(widen(tiled_gemm(a, w, GemmMode::accumulate(), {ti, to, 1})), want) << ti << "x" << to;
    }
  }
}

TEST(TiledGemm, PerHeadGroupsAreIndependent) {
  std::mt19937_64 rng(3);
  const QTensor a = random_q(4, 6, rng), w = random_q(3, 6, rng);
  const auto want = oracle::int_matmul(a, w, 2);
  EXPECT_EQ(widen(tiled_gemm(a, w, GemmMode::per_head(2), {2, 2, 2})), want);
  EXPECT_EQ(widen(gemm_reference(a, w, GemmMode::per_head(2))), want);
}

TEST(TiledGemm, RandomInstancesBothModes) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 300; ++t) {
    const std::size_t h = 1 + rng() % 4;
    const std::size_t n = 1 + rng() % 16, di = 1 + rng() % 4, dout = 1 + rng() % 4;
    const bool per_head = (t % 2) == 1;
    const QTensor a = per_head ? random_q(n, di * h, rng) : random_q(n, 1 + rng() % 16, rng);
    const QTensor w = per_head ? random_q(di, dout * h, rng) : random_q(a.shape[1], 1 + rng() % 16, rng);
    const GemmMode mode = per_head ? GemmMode::per_head(static_cast<int>(h)) : GemmMode::accumulate();
    const TilingConfig tiling{1 + static_cast<int>(rng() % 16), 1 + static_cast<int>(rng() % 16),
                              1 + static_cast<int>(rng() % h)};
    const auto want = oracle::int_matmul(a, w, per_head ? h : 1);
    ASSERT_EQ(widen(tiled_gemm(a, w, mode, tiling)), want);
    ASSERT_EQ(widen(gemm_reference(a, w, mode)), want);
  }
}

TEST(TiledGemm, RejectsMismatches) {
  std::mt19937_64 rng(5);
  const QTensor a = random_q(3, 4, rng), w = random_q(5, 2, rng);
  EXPECT_THROW(tiled_gemm(a, w, GemmMode::accumulate(), {}), std::invalid_argument);
  const QTensor a2 = random_q(3, 5, rng), w2 = random_q(2, 4, rng);
  EXPECT_THROW(tiled_gemm(a2, w2, GemmMode::per_head(2), {}), std::invalid_argument);
}

TEST(Tiling, Validation) {
  EXPECT_NO_THROW((TilingConfig{16, 32, 4}.validate(4)));
  EXPECT_THROW((TilingConfig{16, 32, 5}.validate(12)), std::invalid_argument);
  EXPECT_THROW((TilingConfig{16, 32, 4}.validate(3)), std::invalid_argument);
  EXPECT_THROW((TilingConfig{0, 32, 1}.validate(3)), std::invalid_argument);
  const auto t = TilingConfig::for_heads(3);
  EXPECT_EQ(t.ti * t.to * t.th, 1536);
}

TEST(MacCount, DeitBlocks) {
  EXPECT_EQ(mac_count(197, 192, 3, 64, 192), 102'049'152);
  EXPECT_EQ(mac_count(197, 384, 6, 64, 384), 378'391'296);
  EXPECT_EQ(mac_count(1, 192, 3, 64, 192), 4 * 192 * 3 * 64 + 2 * 3 * 64 + 8 * 192 * 192);
}

TEST(MacCount, QuadraticCoefficient) {
  // second difference of a quadratic a*N^2 + b*N is 2a
  for (std::int64_t n = 1; n <= 6; ++n) {
    const auto f = [](std::int64_t k) { return mac_count(k, 192, 3, 64, 192); };
    EXPECT_EQ(f(n + 2) - 2 * f(n + 1) + f(n), 2 * (2 * 3 * 64));
  }
}

TEST(MacCount, LayersSumToBlockTotal) {
  for (std::int64_t n : {1, 50, 197}) {
    std::int64_t s = 0;
    for (const auto& l : block_layers(n, 384, 6, 384)) s += layer_macs(l);
    EXPECT_EQ(s, mac_count(n, 384, 6, 64, 384));
  }
}

TEST(CycleEstimate, FullyUnrolledIsN) {
  const LayerDims acc{10, 64, 32, LayerId::Fc1, GemmMode::accumulate()};
  EXPECT_EQ(cycle_estimate(acc, {64, 32, 1}, 0), 10);
  const LayerDims ph{10, 3 * 8, 3 * 10, LayerId::AttnScores, GemmMode::per_head(3)};
  EXPECT_EQ(cycle_estimate(ph, {8, 10, 3}, 0), 10);
}

TEST(CycleEstimate, ClosedForm) {
  const LayerDims acc{7, 100, 70, LayerId::Fc2, GemmMode::accumulate()};
  EXPECT_EQ(cycle_estimate(acc, {16, 32, 1}, 12), 7 * 7 * 3 + 12);
  const LayerDims ph{5, 6 * 64, 6 * 5, LayerId::AttnScores, GemmMode::per_head(6)};
  EXPECT_EQ(cycle_estimate(ph, {16, 32, 4}, 12), 2 * 5 * 4 * 1 + 12);
  // doubling Ti halves the tile loop exactly
  const LayerDims even{4, 128, 32, LayerId::Fc1, GemmMode::accumulate()};
  EXPECT_EQ(cycle_estimate(even, {8, 32, 1}, 0), 2 * cycle_estimate(even, {16, 32, 1}, 0));
}

TEST(CycleEstimate, BlockLatencyDecreasesWithTokens) {
  const auto tiling = TilingConfig::for_heads(3);
  double prev = 1e300;
  for (double r : {1.0, 0.9, 0.8, 0.7, 0.6, 0.5}) {
    const auto n = static_cast<std::int64_t>(std::floor(r * 196 + 1e-9)) + 2;
    const double ms = cycles_to_ms(block_cycles(n, 192, 3, 192, tiling));
    EXPECT_LT(ms, prev);
    prev = ms;
  }
}
