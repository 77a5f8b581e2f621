#pragma once

// Vision transformer forward pass over the GEMM engine, with token
// selectors inserted before configured blocks.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "heatvit/layers.hpp"
#include "heatvit/selector.hpp"

namespace heatvit {

struct ViTConfig {
  std::string name = "custom";
  int depth = 12;
  int heads = 3;
  int dim = 192;  ///< D_ch; FFN hidden width is 4 * dim
  int patch = 16;
  int image_side = 224;
  int channels = 3;
  int classes = 1000;
  std::vector<int> selector_blocks;  ///< 1-indexed, ascending

  int head_dim() const { return dim / heads; }
  int mlp_hidden() const { return 4 * dim; }
  int num_patches() const { return (image_side / patch) * (image_side / patch); }
  int num_tokens() const { return num_patches() + 1; }

  void validate() const;

  /// deit-t, deit-s, deit-b, lvvit-s, lvvit-m; selectors at the default
  /// placement for the preset's depth.
  static ViTConfig preset(std::string_view name);
  /// {4,7,10} for depth 12, scaled proportionally for other depths.
  static std::vector<int> default_selector_blocks(int depth);
};

struct BlockWeights {
  FTensor ln1_scale, ln1_bias;
  Linear q, k, v, proj;
  FTensor ln2_scale, ln2_bias;
  Linear fc1, fc2;
};

struct ModelWeights {
  Linear patch_embed;  ///< [P*P*C x D]
  Param pos_embed;     ///< [N x D]
  Param cls_token;     ///< [1 x D]
  std::vector<BlockWeights> blocks;
  FTensor norm_scale, norm_bias;
  Linear head;                              ///< [D x classes]
  std::map<int, SelectorParams> selectors;  ///< keyed by 1-indexed block id

  /// Throws std::invalid_argument when shapes disagree with cfg.
  void validate(const ViTConfig& cfg) const;
};

/// Deterministic uniform initialization. Selectors are created for every
/// block in `selector_blocks`.
ModelWeights random_weights(const ViTConfig& cfg, std::uint64_t seed, std::span<const int> selector_blocks);

struct ForwardOptions {
  Precision precision = Precision::Fixed8;
  DecisionMode decision = DecisionMode::threshold(0.5);
  ApproxParams approx{};
  std::optional<TilingConfig> tiling;  ///< defaults to TilingConfig::for_heads
  std::optional<int> activation_frac;
  /// When non-empty (one per selector), each selector keeps the top
  /// floor(ratio * (N-1)) image tokens instead of thresholding.
  std::vector<double> stage_keep_ratios;
};

struct StageRecord {
  int stage = 0;
  int block = 0;  ///< block the selector precedes; 0 for the embedding output
  std::vector<int> kept;             ///< origins after the stage
  std::vector<int> package_members;  ///< origins folded into the package
};

struct TokenTrace {
  std::vector<StageRecord> stages;
  std::vector<std::size_t> block_tokens;  ///< tokens entering each block
  DecisionMask original_mask;             ///< composed keep mask over [CLS, patches...]

  /// `stage,kept_indices,package_members`; lists are space separated with
  /// `cls` and `pkg<stage>` for the special tokens.
  void write_csv(std::ostream& out) const;
};

struct ForwardResult {
  FTensor logits;  ///< [classes]
  TokenTrace trace;
  std::size_t saturations = 0;
};

TokenSet patch_embed(const FTensor& image, const ModelWeights& w, const ViTConfig& cfg, ExecContext& ctx);

/// x + Attention(LayerNorm(x)). Writes softmax rows [N x h*N] to
/// *attention when given.
FTensor msa_block(const FTensor& x, const BlockWeights& w, const ViTConfig& cfg, ExecContext& ctx,
                  FTensor* attention = nullptr);

/// x + FC2(GELU(FC1(LayerNorm(x)))).
FTensor ffn_block(const FTensor& x, const BlockWeights& w, ExecContext& ctx);

ForwardResult forward(const FTensor& image, const ModelWeights& w, const ViTConfig& cfg, const ForwardOptions& opt);

/// Token count entering each block under the analytic stage model:
/// floor(ratio*(N-1)) + CLS + package from the first selector on.
std::vector<std::int64_t> stage_token_counts(const ViTConfig& cfg, std::span<const double> stage_ratios);

/// Embedding + blocks + selectors + head MACs. One ratio per selector block,
/// each in (0,1]; throws std::invalid_argument otherwise.
std::int64_t model_macs(const ViTConfig& cfg, std::span<const double> stage_ratios);

struct LayerCost {
  std::string layer_id;
  std::int64_t n = 0;
  std::int64_t macs = 0;
  std::int64_t cycles = 0;
  double ms = 0.0;
};

/// Per-layer MACs and cycle estimates; the last row is the `total`.
std::vector<LayerCost> model_cost(const ViTConfig& cfg, std::span<const double> stage_ratios,
                                  const TilingConfig& tiling, std::int64_t pipeline_fill = kDefaultPipelineFill);

}  // namespace heatvit
