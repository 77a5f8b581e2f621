#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "heatvit/fixedpoint.hpp"

using namespace heatvit;

namespace {

// Round half to even without relying on the FPU rounding mode.
long long rne(long double v) {
  const long double f = std::floor(v);
  const long double diff = v - f;
  long long r = static_cast<long long>(f);
  if (diff > 0.5L || (diff == 0.5L && (r % 2 != 0))) ++r;
  return r;
}

long long saturate8(long long v) { return std::clamp(v, -128LL, 127LL); }

}  // namespace

TEST(FxFormat, RangeFollowsFracBits) {
  EXPECT_DOUBLE_EQ(FxFormat(7).min_value(), -1.0);
  EXPECT_DOUBLE_EQ(FxFormat(7).max_value(), 1.0 - 1.0 / 128);
  EXPECT_DOUBLE_EQ(FxFormat(0).min_value(), -128.0);
  EXPECT_DOUBLE_EQ(FxFormat(0).max_value(), 127.0);
  EXPECT_DOUBLE_EQ(FxFormat(3).step(), 0.125);
}

TEST(FxFormat, RejectsOutOfRangeFracBits) {
  EXPECT_THROW(FxFormat(8), std::invalid_argument);
  EXPECT_THROW(FxFormat(-1), std::invalid_argument);
}

TEST(ChooseFormat, PicksLargestFracThatFits) {
  const std::vector<double> a{0.9, -0.3};
  EXPECT_EQ(choose_format(a).frac_bits, 7);
  const std::vector<double> zeros(5, 0.0);
  EXPECT_EQ(choose_format(zeros).frac_bits, 7);
  const std::vector<double> big{100.0};
  EXPECT_EQ(choose_format(big).frac_bits, 0);
  const std::vector<double> one{1.0};
  EXPECT_EQ(choose_format(one).frac_bits, 6);
  const std::vector<double> minus_one{-1.0};
  EXPECT_EQ(choose_format(minus_one).frac_bits, 7);
}

TEST(ChooseFormat, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> mag(-8.0, 8.0);
  for (int trial = 0; trial < 500; ++trial) {
    const double scale = std::ldexp(1.0, static_cast<int>(rng() % 10) - 3);
    std::vector<double> v(1 + rng() % 20);
    for (double& x : v) x = mag(rng) * scale / 8.0;
    int want = -1;
    for (int f = 7; f >= 0 && want < 0; --f) {
      bool fits = true;
      for (double x : v) {
        const long long q = rne(std::ldexp(static_cast<long double>(x), f));
        fits = fits && q >= -128 && q <= 127;
      }
      if (fits) want = f;
    }
    if (want < 0) want = 0;
    EXPECT_EQ(choose_format(v).frac_bits, want);
  }
}

TEST(ChooseFormat, RejectsNonFinite) {
  const std::vector<double> v{1.0, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(choose_format(v), std::invalid_argument);
  const std::vector<double> inf{std::numeric_limits<double>::infinity()};
  EXPECT_THROW(choose_format(inf), std::invalid_argument);
  EXPECT_THROW(choose_format(std::vector<double>{}), std::invalid_argument);
}

TEST(Quantize, SpotValues) {
  EXPECT_EQ(quantize_value(0.5, FxFormat(7)), 64);
  std::size_t sat = 0;
  EXPECT_EQ(quantize_value(1.0, FxFormat(7), &sat), 127);
  EXPECT_EQ(sat, 1u);
  EXPECT_EQ(quantize_value(-0.25, FxFormat(2)), -1);
  EXPECT_EQ(quantize_value(-5.0, FxFormat(7), &sat), -128);
  EXPECT_EQ(sat, 2u);
}

TEST(Quantize, RoundsHalfToEven) {
  EXPECT_EQ(quantize_value(0.5, FxFormat(0)), 0);
  EXPECT_EQ(quantize_value(1.5, FxFormat(0)), 2);
  EXPECT_EQ(quantize_value(2.5, FxFormat(0)), 2);
  EXPECT_EQ(quantize_value(-0.5, FxFormat(0)), 0);
  EXPECT_EQ(quantize_value(-1.5, FxFormat(0)), -2);
}

TEST(Quantize, MatchesIndependentRounding) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-200.0, 200.0);
  for (int i = 0; i < 20000; ++i) {
    const int f = static_cast<int>(rng() % 8);
    // half of the samples sit exactly on a rounding tie
    double x = u(rng) / 128.0;
    if (i % 2) x = (std::floor(x * (1 << f)) + 0.5) / (1 << f);
    const long long want = saturate8(rne(std::ldexp(static_cast<long double>(x), f)));
    ASSERT_EQ(quantize_value(x, FxFormat(f)), want) << "x=" << x << " f=" << f;
  }
}

TEST(Quantize, MonotoneNonDecreasing) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 5000; ++i) {
    const double a = u(rng), b = u(rng);
    const FxFormat fmt(static_cast<int>(rng() % 8));
    const double lo = std::min(a, b), hi = std::max(a, b);
    EXPECT_LE(quantize_value(lo, fmt), quantize_value(hi, fmt));
  }
}

TEST(Dequantize, SpotValues) {
  EXPECT_DOUBLE_EQ(dequantize_value(64, FxFormat(7)), 0.5);
  EXPECT_DOUBLE_EQ(dequantize_value(-128, FxFormat(7)), -1.0);
  EXPECT_DOUBLE_EQ(dequantize_value(-3, FxFormat(1)), -1.5);
}

TEST(Dequantize, RoundTripWithinHalfStep) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const double scale = std::ldexp(1.0, static_cast<int>(rng() % 8) - 4);  // stays inside the int8 range
    std::normal_distribution<double> nd(0.0, scale);
    FTensor t({1 + rng() % 7, 1 + rng() % 9});
    for (double& v : t.data) v = nd(rng);
    const FxFormat fmt = choose_format(t);
    const FTensor back = dequantize(quantize(t, fmt));
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LE(std::abs(back.data[i] - t.data[i]), std::ldexp(1.0, -fmt.frac_bits - 1));
  }
}

TEST(Requantize, SpotValues) {
  EXPECT_EQ(requantize_value(256, 14, FxFormat(6)), 1);
  EXPECT_EQ(requantize_value(384, 14, FxFormat(6)), 2);
  EXPECT_EQ(requantize_value(640, 14, FxFormat(6)), 2);  // 2.5 -> 2
  EXPECT_EQ(requantize_value(-384, 14, FxFormat(6)), -2);
  std::size_t sat = 0;
  EXPECT_EQ(requantize_value(1 << 20, 14, FxFormat(6), &sat), 127);
  EXPECT_EQ(sat, 1u);
  EXPECT_EQ(requantize_value(-(1 << 20), 14, FxFormat(6)), -128);
  EXPECT_EQ(requantize_value(-7, 3, FxFormat(3)), -7);
}

TEST(Requantize, RejectsUpshift) {
  AccTensor acc({1, 1}, 3);
  EXPECT_THROW(requantize(acc, FxFormat(4)), std::invalid_argument);
}

TEST(Requantize, EqualsQuantizeOfExactValue) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 20000; ++i) {
    const int in_frac = static_cast<int>(rng() % 15);
    const FxFormat out(static_cast<int>(rng() % (std::min(in_frac, 7) + 1)));
    AccTensor acc({1, 3}, in_frac);
    for (auto& v : acc.data) v = static_cast<std::int32_t>(rng());
    const QTensor direct = requantize(acc, out);
    const QTensor via_real = quantize(dequantize_acc(acc), out);
    ASSERT_EQ(direct.data, via_real.data);
  }
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(FTensor({2, 0}), std::invalid_argument);
  EXPECT_THROW(FTensor({2, 2}, std::vector<double>(3)), std::invalid_argument);
  EXPECT_THROW(QTensor({2}, std::vector<std::int8_t>(3), FxFormat(1)), std::invalid_argument);
}
