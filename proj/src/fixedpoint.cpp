#include "heatvit/fixedpoint.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace heatvit {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
  }
}

std::size_t dim_or_throw(const Shape& shape, std::size_t axis) {
  if (shape.size() != 2) throw std::invalid_argument("expected a rank-2 tensor");
  return shape[axis];
}

}  // namespace

FxFormat::FxFormat(int frac) : frac_bits(frac) {
  if (frac < 0 || frac > 7) {
    throw std::invalid_argument("frac_bits must be in [0,7], got " + std::to_string(frac));
  }
}

double FxFormat::step() const { return std::ldexp(1.0, -frac_bits); }
double FxFormat::min_value() const { return std::ldexp(static_cast<double>(kMinStored), -frac_bits); }
double FxFormat::max_value() const { return std::ldexp(static_cast<double>(kMaxStored), -frac_bits); }

FTensor::FTensor(Shape s) : shape(std::move(s)) {
  check_shape(shape);
  data.assign(numel(shape), 0.0);
}

FTensor::FTensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  check_shape(shape);
  if (data.size() != numel(shape)) throw std::invalid_argument("FTensor data length does not match shape");
}

std::size_t FTensor::rows() const { return dim_or_throw(shape, 0); }
std::size_t FTensor::cols() const { return dim_or_throw(shape, 1); }

QTensor::QTensor(Shape s, FxFormat f) : shape(std::move(s)), fmt(f) {
  check_shape(shape);
  data.assign(numel(shape), 0);
}

QTensor::QTensor(Shape s, std::vector<std::int8_t> values, FxFormat f)
    : shape(std::move(s)), data(std::move(values)), fmt(f) {
  check_shape(shape);
  if (data.size() != numel(shape)) throw std::invalid_argument("QTensor data length does not match shape");
}

std::size_t QTensor::rows() const { return dim_or_throw(shape, 0); }
std::size_t QTensor::cols() const { return dim_or_throw(shape, 1); }

AccTensor::AccTensor(Shape s, int frac) : shape(std::move(s)), in_frac_bits(frac) {
  check_shape(shape);
  data.assign(numel(shape), 0);
}

std::size_t AccTensor::rows() const { return dim_or_throw(shape, 0); }
std::size_t AccTensor::cols() const { return dim_or_throw(shape, 1); }

FxFormat choose_format(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("choose_format: empty input");
  double lo = 0.0;
  double hi = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("choose_format: non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  // Rounding is monotone, so only the extremes can saturate.
  for (int f = 7; f > 0; --f) {
    const double qhi = std::nearbyint(std::ldexp(hi, f));
    const double qlo = std::nearbyint(std::ldexp(lo, f));
    if (qhi <= FxFormat::kMaxStored && qlo >= FxFormat::kMinStored) return FxFormat(f);
  }
  return FxFormat(0);
}

std::int8_t quantize_value(double value, FxFormat fmt, std::size_t* saturated) {
  const double r = std::nearbyint(std::ldexp(value, fmt.frac_bits));
  if (r > FxFormat::kMaxStored) {
    if (saturated) ++*saturated;
    return FxFormat::kMaxStored;
  }
  if (r < FxFormat::kMinStored) {
    if (saturated) ++*saturated;
    return FxFormat::kMinStored;
  }
  return static_cast<std::int8_t>(r);
}

QTensor quantize(const FTensor& t, FxFormat fmt, std::size_t* saturated) {
  QTensor q(t.shape, fmt);
  for (std::size_t i = 0; i < t.data.size(); ++i) q.data[i] = quantize_value(t.data[i], fmt, saturated);
  return q;
}

double dequantize_value(std::int8_t stored, FxFormat fmt) { return std::ldexp(static_cast<double>(stored), -fmt.frac_bits); }

FTensor dequantize(const QTensor& q) {
  FTensor t(q.shape);
  for (std::size_t i = 0; i < q.data.size(); ++i) t.data[i] = dequantize_value(q.data[i], q.fmt);
  return t;
}

FTensor dequantize_acc(const AccTensor& acc) {
  FTensor t(acc.shape);
  for (std::size_t i = 0; i < acc.data.size(); ++i) t.data[i] = std::ldexp(static_cast<double>(acc.data[i]), -acc.in_frac_bits);
  return t;
}

std::int8_t requantize_value(std::int32_t acc, int in_frac_bits, FxFormat out, std::size_t* saturated) {
  const int shift = in_frac_bits - out.frac_bits;
  if (shift < 0) throw std::invalid_argument("requantize: upshift is not supported");
  std::int64_t v = acc;
  if (shift > 0) {
    const std::int64_t q = v >> shift;  // floor
    const std::int64_t rem = v - (q << shift);
    const std::int64_t half = std::int64_t{1} << (shift - 1);
    v = q;
    if (rem > half || (rem == half && (q & 1) != 0)) ++v;
  }
  if (v > FxFormat::kMaxStored) {
    if (saturated) ++*saturated;
    return FxFormat::kMaxStored;
  }
  if (v < FxFormat::kMinStored) {
    if (saturated) ++*saturated;
    return FxFormat::kMinStored;
  }
  return static_cast<std::int8_t>(v);
}

QTensor requantize(const AccTensor& acc, FxFormat out, std::size_t* saturated) {
  if (acc.in_frac_bits < out.frac_bits) throw std::invalid_argument("requantize: upshift is not supported");
  QTensor q(acc.shape, out);
  for (std::size_t i = 0; i < acc.data.size(); ++i) {
    q.data[i] = requantize_value(acc.data[i], acc.in_frac_bits, out, saturated);
  }
  return q;
}

}  // namespace heatvit
