#include "heatvit/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace heatvit {

Param Param::from_real(FTensor t) {
  Param p;
  p.quant = quantize(t, choose_format(t));
  p.real = std::move(t);
  return p;
}

Param Param::from_quant(QTensor q) {
  Param p;
  p.real = dequantize(q);
  p.quant = std::move(q);
  return p;
}

namespace {

FxFormat activation_format(const FTensor& x, const ExecContext& ctx) {
  return ctx.activation_frac ? FxFormat(*ctx.activation_frac) : choose_format(x);
}

FTensor requantize_to_activation(AccTensor acc, ExecContext& ctx) {
  int frac;
  if (ctx.activation_frac) {
    frac = *ctx.activation_frac;
  } else {
    frac = choose_format(dequantize_acc(acc)).frac_bits;
  }
  frac = std::min(frac, acc.in_frac_bits);
  return dequantize(requantize(acc, FxFormat(frac), &ctx.saturations));
}

void add_bias_at_acc_scale(AccTensor& acc, const FTensor& bias) {
  if (bias.data.empty()) return;
  const std::size_t cols = acc.cols();
  if (bias.size() != cols) throw std::invalid_argument("linear: bias length does not match output width");
  constexpr double lo = std::numeric_limits<std::int32_t>::min();
  constexpr double hi = std::numeric_limits<std::int32_t>::max();
  std::vector<std::int64_t> b(cols);
  for (std::size_t c = 0; c < cols; ++c) {
    b[c] = static_cast<std::int64_t>(std::clamp(std::nearbyint(std::ldexp(bias.data[c], acc.in_frac_bits)), lo, hi));
  }
  for (std::size_t r = 0; r < acc.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      auto& v = acc.data[r * cols + c];
      v = static_cast<std::int32_t>(std::clamp<std::int64_t>(v + b[c], static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
    }
  }
}

}  // namespace

FTensor snap(const FTensor& x, ExecContext& ctx) {
  if (ctx.precision == Precision::Real) return x;
  return dequantize(quantize(x, activation_format(x, ctx), &ctx.saturations));
}

FTensor linear(const FTensor& x, const Linear& layer, ExecContext& ctx) {
  if (x.shape.size() != 2 || x.cols() != layer.in_dim()) throw std::invalid_argument("linear: input width mismatch");
  if (ctx.precision == Precision::Fixed8) {
    const QTensor qx = quantize(x, activation_format(x, ctx), &ctx.saturations);
    AccTensor acc = tiled_gemm(qx, layer.weight.quant, GemmMode::accumulate(), ctx.tiling);
    add_bias_at_acc_scale(acc, layer.bias);
    return requantize_to_activation(std::move(acc), ctx);
  }
  const std::size_t n = x.rows(), din = layer.in_dim(), dout = layer.out_dim();
  if (!layer.bias.data.empty() && layer.bias.size() != dout) {
    throw std::invalid_argument("linear: bias length does not match output width");
  }
  FTensor y({n, dout});
  const auto& w = layer.weight.real.data;
  for (std::size_t r = 0; r < n; ++r) {
    auto out = y.row(r);
    if (!layer.bias.data.empty()) std::copy(layer.bias.data.begin(), layer.bias.data.end(), out.begin());
    for (std::size_t i = 0; i < din; ++i) {
      const double xv = x.at(r, i);
      const double* wrow = w.data() + i * dout;
      for (std::size_t o = 0; o < dout; ++o) out[o] += xv * wrow[o];
    }
  }
  return y;
}

FTensor per_head_matmul(const FTensor& a, const FTensor& w_stacked, int heads, ExecContext& ctx) {
  if (ctx.precision == Precision::Fixed8) {
    const QTensor qa = quantize(a, activation_format(a, ctx), &ctx.saturations);
    const QTensor qw = quantize(w_stacked, activation_format(w_stacked, ctx), &ctx.saturations);
    return requantize_to_activation(tiled_gemm(qa, qw, GemmMode::per_head(heads), ctx.tiling), ctx);
  }
  const std::size_t n = a.rows(), di = a.cols(), dout = w_stacked.cols();
  const auto h = static_cast<std::size_t>(heads);
  if (heads <= 0 || di % h != 0 || dout % h != 0) throw std::invalid_argument("per_head_matmul: indivisible dims");
  const std::size_t di_g = di / h, do_g = dout / h;
  if (w_stacked.rows() != di_g) throw std::invalid_argument("per_head_matmul: inner dimension mismatch");
  FTensor y({n, dout});
  for (std::size_t g = 0; g < h; ++g) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t i = 0; i < di_g; ++i) {
        const double av = a.at(r, g * di_g + i);
        for (std::size_t o = 0; o < do_g; ++o) y.at(r, g * do_g + o) += av * w_stacked.at(i, g * do_g + o);
      }
    }
  }
  return y;
}

FTensor layer_norm(const FTensor& x, const FTensor& scale, const FTensor& bias) {
  const std::size_t n = x.rows(), d = x.cols();
  if (d < 2) throw std::invalid_argument("layer_norm: width must be >= 2");
  if (scale.size() != d || bias.size() != d) throw std::invalid_argument("layer_norm: parameter width mismatch");
  FTensor y({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    auto out = y.row(r);
    for (std::size_t c = 0; c < d; ++c) out[c] = (row[c] - mean) * inv * scale.data[c] + bias.data[c];
  }
  return y;
}

FTensor add(const FTensor& a, const FTensor& b) {
  if (a.shape != b.shape) throw std::invalid_argument("add: shape mismatch");
  FTensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += b.data[i];
  return y;
}

FTensor slice_cols(const FTensor& x, std::size_t c0, std::size_t width) {
  if (c0 + width > x.cols() || width == 0) throw std::invalid_argument("slice_cols: out of range");
  FTensor y({x.rows(), width});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(r * x.cols() + c0), width,
                y.data.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return y;
}

}  // namespace heatvit
