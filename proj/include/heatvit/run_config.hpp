#pragma once

// Run configuration shared by the command-line tools.
//
//   {
//     "model": "deit-t",             preset, or "custom"
//     "depth": 12, "heads": 3, ...   optional overrides of ViTConfig fields
//     "selector_blocks": [4, 7, 10],
//     "ratios": [0.7, 0.39, 0.21],   one keep ratio per selector block
//     "delta1": 0.5, "delta2": 0.5,
//     "mode": "threshold",           threshold | gumbel | topk
//     "tau": 0.5, "temperature": 1.0, "seed": 0,
//     "activation_frac": "dynamic",  or an integer in [0,7]
//     "precision": "fixed8"          fixed8 | real
//   }
//
// Every key is optional. Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "heatvit/vit.hpp"

namespace heatvit {

enum class DecisionKind { Threshold, Gumbel, TopK };

struct RunConfig {
  ViTConfig model = ViTConfig::preset("deit-t");
  std::vector<double> ratios;
  double delta1 = 0.5;
  double delta2 = 0.5;
  DecisionKind mode = DecisionKind::Threshold;
  double tau = 0.5;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::optional<int> activation_frac;
  Precision precision = Precision::Fixed8;

  /// Ratios in (0,1] and one per selector block (when given), tau in (0,1),
  /// deltas in (0,1]. Throws std::invalid_argument.
  void validate() const;

  /// Ratios to cost: the configured ones, or all ones per selector block.
  std::vector<double> stage_ratios() const;

  ForwardOptions forward_options() const;
};

/// Throws FormatError on malformed JSON or wrong value types and
/// std::invalid_argument on out-of-range values.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

std::vector<double> parse_ratio_list(const std::string& text);
std::vector<int> parse_block_list(const std::string& text);

DecisionKind parse_decision_kind(const std::string& name);

}  // namespace heatvit
