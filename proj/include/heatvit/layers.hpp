#pragma once

// Linear layers and the execution context shared by the backbone and the
// token selector.
//
// Activations travel between operators as FTensor. Under Precision::Fixed8
// every activation is snapped onto an 8-bit grid, linear layers run on
// tiled_gemm and their accumulators are requantized, so the values are
// exactly those an int8 pipeline would hold. Under Precision::Real the same
// operators run in double arithmetic.

#include <optional>

#include "heatvit/fixedpoint.hpp"
#include "heatvit/gemm.hpp"
#include "heatvit/kernels.hpp"

namespace heatvit {

enum class Precision { Fixed8, Real };

/// A weight tensor with its real master copy and 8-bit image.
struct Param {
  FTensor real;
  QTensor quant;

  static Param from_real(FTensor t);   ///< quantizes with choose_format
  static Param from_quant(QTensor q);  ///< real copy is the exact dequantization
};

/// y = x * W + b, W stored [in x out].
struct Linear {
  Param weight;
  FTensor bias;  ///< [out]; always real, added at accumulator precision

  std::size_t in_dim() const { return weight.real.shape.at(0); }
  std::size_t out_dim() const { return weight.real.shape.at(1); }
};

struct ExecContext {
  Precision precision = Precision::Fixed8;
  TilingConfig tiling{};
  ApproxParams approx{};
  /// Fixed activation format; nullopt chooses a format per tensor.
  std::optional<int> activation_frac;
  std::size_t saturations = 0;
};

/// Identity under Real; otherwise rounds onto the activation 8-bit grid.
FTensor snap(const FTensor& x, ExecContext& ctx);

FTensor linear(const FTensor& x, const Linear& layer, ExecContext& ctx);

/// Per-head product of two activations (see GemmMode::PerHead for the
/// stacked operand layout).
FTensor per_head_matmul(const FTensor& a, const FTensor& w_stacked, int heads, ExecContext& ctx);

/// Per-token LayerNorm (population variance, eps 1e-6) then affine.
/// Always real arithmetic.
FTensor layer_norm(const FTensor& x, const FTensor& scale, const FTensor& bias);
inline constexpr double kLayerNormEps = 1e-6;

FTensor add(const FTensor& a, const FTensor& b);

/// Columns [c0, c0+width) of a rank-2 tensor.
FTensor slice_cols(const FTensor& x, std::size_t c0, std::size_t width);

}  // namespace heatvit
