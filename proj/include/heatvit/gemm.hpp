#pragma once

// Tiled int8 GEMM with the extra head tiling dimension used by attention.
//
// Accumulate:   out[N x Do]  = A[N x Di] * W[Di x Do]
// PerHead(h):   A is [N x h*di], W is [di x h*do] (per-head operands stacked
//               side by side), and
//                 out[:, g*do:(g+1)*do] = A[:, g*di:(g+1)*di] * W[:, g*do:(g+1)*do]
//               with no accumulation across groups.
//
// tiled_gemm is the OpenMP-parallel engine; gemm_reference is the serial
// triple loop kept for verification and benchmarking.

#include <cstdint>

#include "heatvit/fixedpoint.hpp"

namespace heatvit {

struct TilingConfig {
  static constexpr std::int64_t kDefaultMacBudget = 2048;

  int ti = 16;  ///< input-dimension tile
  int to = 32;  ///< output-dimension tile
  int th = 1;   ///< head tile

  /// Throws std::invalid_argument when a factor is non-positive, the product
  /// exceeds mac_budget, or th exceeds the model's head count.
  void validate(int heads, std::int64_t mac_budget = kDefaultMacBudget) const;

  /// Ti=16, To=32, Th=min(heads,4): 2048 parallel MACs for h >= 4.
  static TilingConfig for_heads(int heads);
};

struct GemmMode {
  enum class Kind { Accumulate, PerHead };
  Kind kind = Kind::Accumulate;
  int heads = 1;

  static GemmMode accumulate() { return {}; }
  static GemmMode per_head(int h) { return {Kind::PerHead, h}; }
  int groups() const { return kind == Kind::PerHead ? heads : 1; }
};

/// Exact integer product via the tiled engine. Result independent of tiling.
AccTensor tiled_gemm(const QTensor& a, const QTensor& w, GemmMode mode, const TilingConfig& tiling);

/// Serial naive product with the same contract as tiled_gemm.
AccTensor gemm_reference(const QTensor& a, const QTensor& w, GemmMode mode);

// ---------------------------------------------------------------------------
// Cost model

/// The six GEMM layers of one transformer block.
enum class LayerId : int {
  QkvProjection = 1,  ///< linear transformation producing Q, K, V
  AttnScores = 2,     ///< Q x K^T, per head
  AttnContext = 3,    ///< softmax(QK^T) x V, per head
  OutProjection = 4,
  Fc1 = 5,
  Fc2 = 6,
};

struct LayerDims {
  std::int64_t n = 0;   ///< tokens (rows)
  std::int64_t di = 0;  ///< total input dimension
  std::int64_t dout = 0;  ///< total output dimension
  LayerId layer = LayerId::QkvProjection;
  GemmMode mode{};
};

/// Per-block MACs: 4*N*Dch*h*Dattn + 2*N^2*h*Dattn + 8*N*Dch*Dfc.
std::int64_t mac_count(std::int64_t n, std::int64_t d_ch, std::int64_t heads, std::int64_t d_attn,
                       std::int64_t d_fc);

/// MACs of one layer: N*Di*Do, divided by h for per-head layers.
std::int64_t layer_macs(const LayerDims& dims);

/// Six layers of a block with N tokens. The Q/K/V projections are fused
/// into one N x Dch -> 3*h*Dattn layer.
std::vector<LayerDims> block_layers(std::int64_t n, std::int64_t d_ch, std::int64_t heads, std::int64_t d_fc);

inline constexpr double kClockCyclesPerMs = 150'000.0;  // 150 MHz
inline constexpr std::int64_t kDefaultPipelineFill = 12;

/// One tile-MAC per cycle plus a fixed pipeline fill:
///   Accumulate:  N * ceil(Di/Ti) * ceil(Do/To) + fill
///   PerHead(h):  ceil(h/Th) * N * ceil(di/Ti) * ceil(do/To) + fill
std::int64_t cycle_estimate(const LayerDims& dims, const TilingConfig& tiling,
                            std::int64_t pipeline_fill = kDefaultPipelineFill);

inline double cycles_to_ms(std::int64_t cycles) { return static_cast<double>(cycles) / kClockCyclesPerMs; }

/// Sum of cycle_estimate over block_layers(n, ...).
std::int64_t block_cycles(std::int64_t n, std::int64_t d_ch, std::int64_t heads, std::int64_t d_fc,
                          const TilingConfig& tiling, std::int64_t pipeline_fill = kDefaultPipelineFill);

}  // namespace heatvit
