#pragma once

// Token selector: attention-based multi-head token classifier, keep/prune
// decision, token packager and dense repacking.
//
// For a token matrix X [N x D] split into h heads of width d = D/h:
//   E_local_i  = MLP_local(x_i)                       [N x d/2]
//   E_global_i = mean over tokens of MLP_local(x_i)   [1 x d/2]
//   s_i        = softmax(MLP_score([E_local_i | E_global_i]))  [N x 2]
//   Xbar       = per-head channel mean of X           [N x h]
//   A          = sigmoid(MLP_attn(Xbar))              [N x h]
//   S          = sum_i s_i * a_i / sum_i a_i          [N x 2]
// Column 0 of every score map is the keep probability.

#include <cstdint>
#include <optional>
#include <vector>

#include "heatvit/layers.hpp"

namespace heatvit {

inline constexpr int kClsOrigin = -1;

/// Origin marker of the package token created by stage `stage` (>= 1):
/// -2 for stage 1, -3 for stage 2, ...
constexpr int package_origin(int stage) { return -1 - stage; }
constexpr bool is_package_origin(int origin) { return origin <= -2; }
constexpr int package_stage(int origin) { return -1 - origin; }

/// Dense token matrix plus the original patch index of every row
/// (kClsOrigin / package_origin(stage) for the special tokens). A package
/// kept by a later stage travels on as an ordinary token, so a set holds at
/// most one package per earlier stage.
struct TokenSet {
  FTensor tokens;
  std::vector<int> origin;
  int stage = 0;

  std::size_t size() const { return origin.size(); }
  /// Index of the CLS row. Throws if there is not exactly one.
  std::size_t cls_index() const;
  /// Throws std::invalid_argument when the invariants are broken.
  void validate() const;
};

struct SelectorParams {
  int heads = 1;
  std::vector<Linear> local;         ///< per head, d -> d/2
  std::vector<Linear> score_hidden;  ///< per head, d -> d/2
  std::vector<Linear> score_out;     ///< per head, d/2 -> 2
  Linear head_attention;             ///< h -> h

  std::size_t head_dim() const { return local.at(0).in_dim(); }
  /// Throws unless all layer shapes agree with token width `width`.
  void validate(std::size_t width) const;
};

struct ScoreMap {
  std::vector<FTensor> head_scores;  ///< h tensors, each [N x 2]
  FTensor head_weights;              ///< A, [N x h]
  FTensor fused;                     ///< S, [N x 2]
};

struct DecisionMode {
  enum class Kind { Threshold, Gumbel };
  Kind kind = Kind::Threshold;
  double tau = 0.5;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  static DecisionMode threshold(double tau) { return {Kind::Threshold, tau, 1.0, 0}; }
  static DecisionMode gumbel(double temperature, std::uint64_t seed) { return {Kind::Gumbel, 0.5, temperature, seed}; }
  void validate() const;
};

struct DecisionMask {
  std::vector<std::uint8_t> keep;  ///< 1 = keep

  std::size_t size() const { return keep.size(); }
  std::size_t kept() const;
  bool any_pruned() const { return kept() < keep.size(); }
};

ScoreMap classify(const FTensor& tokens, const SelectorParams& params, ExecContext& ctx);

/// S = sum_i s_i a_i / sum_i a_i; falls back to the plain mean of the head
/// maps for rows whose head weights are all zero.
FTensor fuse_scores(const std::vector<FTensor>& head_scores, const FTensor& head_weights);

/// Threshold: keep iff S[j][0] >= tau. Gumbel: keep iff
///   log S[j][0] / T + g0 >= log S[j][1] / T + g1,   g ~ Gumbel(0,1)
/// so T = 1 samples the categorical and T -> 0 approaches Threshold(0.5).
/// The row at cls_index is always kept.
DecisionMask decide(const FTensor& fused, const DecisionMode& mode, std::size_t cls_index = 0);

/// Keeps the CLS row plus the `keep_count` highest keep scores among the
/// other rows (earlier rows win ties).
DecisionMask decide_top_k(const FTensor& fused, std::size_t keep_count, std::size_t cls_index = 0);

/// Keep-score-weighted mean of the pruned rows. Throws std::invalid_argument
/// when nothing is pruned; uses the unweighted mean when all pruned keep
/// scores are zero.
std::vector<double> package(const FTensor& tokens, const FTensor& fused, const DecisionMask& mask);

/// Kept rows in original order, then `package_token` (if any) last, tagged
/// package_origin(x.stage + 1).
TokenSet repack(const TokenSet& x, const DecisionMask& mask, const std::optional<std::vector<double>>& package_token);

/// Element-wise AND. Throws std::invalid_argument on length mismatch.
DecisionMask compose_mask(const DecisionMask& m, const DecisionMask& m_next);

struct SelectionResult {
  TokenSet tokens;
  ScoreMap scores;
  DecisionMask mask;
  std::vector<int> package_members;  ///< origins of the rows folded into the package
};

/// classify -> decide -> package -> repack. When `keep_count` is set the
/// decision is decide_top_k instead of `mode`; earlier package tokens
/// compete like any other token.
SelectionResult run_selector(const TokenSet& x, const SelectorParams& params, const DecisionMode& mode,
                             ExecContext& ctx, std::optional<std::size_t> keep_count = std::nullopt);

/// GEMM MACs of one selector invocation on n tokens of width d_ch.
std::int64_t selector_macs(std::int64_t n, std::int64_t d_ch, std::int64_t heads);

}  // namespace heatvit
