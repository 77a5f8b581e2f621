#pragma once

// 8-bit fixed-point tensors with per-tensor power-of-two scaling.
//
// A stored value q represents q * 2^-frac_bits. All rounding is
// round-half-to-even; overflow saturates to [-128, 127].

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace heatvit {

using Shape = std::vector<std::size_t>;

/// Number of elements described by a shape. An empty shape is a scalar.
std::size_t numel(const Shape& shape);

struct FxFormat {
  static constexpr int kTotalBits = 8;
  static constexpr int kMinStored = -128;
  static constexpr int kMaxStored = 127;

  int frac_bits = 7;

  constexpr FxFormat() = default;
  explicit FxFormat(int frac);

  double step() const;       ///< 2^-frac_bits
  double min_value() const;  ///< -2^(7-frac_bits)
  double max_value() const;  ///< 2^(7-frac_bits) - 2^-frac_bits

  friend bool operator==(const FxFormat&, const FxFormat&) = default;
};

/// Row-major real tensor (reference and LayerNorm path).
struct FTensor {
  Shape shape;
  std::vector<double> data;

  FTensor() = default;
  explicit FTensor(Shape s);
  FTensor(Shape s, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const;  ///< shape[0] for rank-2 tensors
  std::size_t cols() const;  ///< shape[1] for rank-2 tensors

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }
};

/// Row-major 8-bit fixed-point tensor.
struct QTensor {
  Shape shape;
  std::vector<std::int8_t> data;
  FxFormat fmt;

  QTensor() = default;
  QTensor(Shape s, FxFormat f);
  QTensor(Shape s, std::vector<std::int8_t> values, FxFormat f);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
};

/// 32-bit GEMM accumulator; values carry in_frac_bits fractional bits.
struct AccTensor {
  Shape shape;
  std::vector<std::int32_t> data;
  int in_frac_bits = 0;

  AccTensor() = default;
  AccTensor(Shape s, int frac);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
};

/// Largest frac_bits for which every value quantizes without saturation.
/// Throws std::invalid_argument on empty or non-finite input.
FxFormat choose_format(std::span<const double> values);
inline FxFormat choose_format(const FTensor& t) { return choose_format(std::span<const double>(t.data)); }

/// Round-half-to-even of value * 2^frac, saturated. Increments *saturated for
/// every clipped element when a counter is supplied.
std::int8_t quantize_value(double value, FxFormat fmt, std::size_t* saturated = nullptr);
QTensor quantize(const FTensor& t, FxFormat fmt, std::size_t* saturated = nullptr);

double dequantize_value(std::int8_t stored, FxFormat fmt);
FTensor dequantize(const QTensor& q);

/// Exact real value of each accumulator entry.
FTensor dequantize_acc(const AccTensor& acc);

/// Arithmetic right shift by (in_frac_bits - out.frac_bits) with
/// round-half-to-even, then saturation to 8 bits.
std::int8_t requantize_value(std::int32_t acc, int in_frac_bits, FxFormat out,
                             std::size_t* saturated = nullptr);
QTensor requantize(const AccTensor& acc, FxFormat out, std::size_t* saturated = nullptr);

}  // namespace heatvit
