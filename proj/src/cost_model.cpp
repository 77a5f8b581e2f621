#include <stdexcept>

#include "heatvit/gemm.hpp"

namespace heatvit {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace

std::int64_t mac_count(std::int64_t n, std::int64_t d_ch, std::int64_t heads, std::int64_t d_attn,
                       std::int64_t d_fc) {
  if (n <= 0 || d_ch <= 0 || heads <= 0 || d_attn <= 0 || d_fc <= 0) {
    throw std::invalid_argument("mac_count: all parameters must be positive");
  }
  return 4 * n * d_ch * heads * d_attn + 2 * n * n * heads * d_attn + 8 * n * d_ch * d_fc;
}

std::int64_t layer_macs(const LayerDims& dims) { return dims.n * dims.di * dims.dout / dims.mode.groups(); }

std::vector<LayerDims> block_layers(std::int64_t n, std::int64_t d_ch, std::int64_t heads, std::int64_t d_fc) {
  if (n <= 0 || d_ch <= 0 || heads <= 0 || d_fc <= 0 || d_ch % heads != 0) {
    throw std::invalid_argument("block_layers: invalid block dimensions");
  }
  const std::int64_t inner = d_ch;  // h * D_attn
  const auto ph = GemmMode::per_head(static_cast<int>(heads));
  return {
      {n, d_ch, 3 * inner, LayerId::QkvProjection, GemmMode::accumulate()},
      {n, inner, heads * n, LayerId::AttnScores, ph},
      {n, heads * n, inner, LayerId::AttnContext, ph},
      {n, inner, d_ch, LayerId::OutProjection, GemmMode::accumulate()},
      {n, d_ch, 4 * d_fc, LayerId::Fc1, GemmMode::accumulate()},
      {n, 4 * d_fc, d_ch, LayerId::Fc2, GemmMode::accumulate()},
  };
}

std::int64_t cycle_estimate(const LayerDims& dims, const TilingConfig& tiling, std::int64_t pipeline_fill) {
  if (dims.n <= 0 || dims.di <= 0 || dims.dout <= 0) throw std::invalid_argument("cycle_estimate: invalid dims");
  if (tiling.ti <= 0 || tiling.to <= 0 || tiling.th <= 0) throw std::invalid_argument("tiling factors must be positive");
  if (dims.mode.kind == GemmMode::Kind::Accumulate) {
    return dims.n * ceil_div(dims.di, tiling.ti) * ceil_div(dims.dout, tiling.to) + pipeline_fill;
  }
  const std::int64_t h = dims.mode.heads;
  if (dims.di % h != 0 || dims.dout % h != 0) throw std::invalid_argument("cycle_estimate: dims not divisible by heads");
  return ceil_div(h, tiling.th) * dims.n * ceil_div(dims.di / h, tiling.ti) * ceil_div(dims.dout / h, tiling.to) +
         pipeline_fill;
}

std::int64_t block_cycles(std::int64_t n, std::int64_t d_ch, std::int64_t heads, std::int64_t d_fc,
                          const TilingConfig& tiling, std::int64_t pipeline_fill) {
  std::int64_t total = 0;
  for (const auto& layer : block_layers(n, d_ch, heads, d_fc)) total += cycle_estimate(layer, tiling, pipeline_fill);
  return total;
}

}  // namespace heatvit
