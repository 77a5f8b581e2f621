#pragma once

// Latency-aware block-to-stage planning.
//
// Step 1 walks blocks from the last one down to block 4, lowering each
// block's keep ratio one latency-table step at a time while the accuracy
// oracle stays under a_drop, and stops as soon as the whole-model latency
// meets the limit. Step 2 merges consecutive blocks with similar ratios into
// stages that share the first block's ratio.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace heatvit {

/// Per-block latency indexed by keep ratio.
class LatencyTable {
 public:
  LatencyTable() = default;
  /// Entries in any order; validated (ratios in (0,1], 1.0 present, latency
  /// strictly increasing with ratio). Throws std::invalid_argument.
  LatencyTable(std::string model, std::vector<std::pair<double, double>> entries);

  /// Built-in measured tables: "deit-t", "deit-s".
  static LatencyTable builtin(const std::string& model);

  const std::string& model() const { return model_; }
  /// Sorted by descending keep ratio.
  const std::vector<std::pair<double, double>>& entries() const { return entries_; }

  /// Exact hit, else linear interpolation; ratios below the smallest entry
  /// clamp to its latency. Throws for ratios outside (0,1].
  double lookup(double ratio) const;

  /// Ratio whose interpolated latency equals latency_ms (clamped to the
  /// table range).
  double ratio_for_latency(double latency_ms) const;

  /// Largest table latency strictly below latency_ms, if any.
  std::optional<double> next_lower_latency(double latency_ms) const;

  double min_ratio() const { return entries_.back().first; }

 private:
  std::string model_;
  std::vector<std::pair<double, double>> entries_;
};

/// Accuracy drop (percentage points) for per-block keep ratios.
using AccuracyOracle = std::function<double(std::span<const double> ratios)>;

/// drop = coefficient * sum_i (1 - ratio_i)^2
AccuracyOracle quadratic_oracle(double coefficient);

struct Stage {
  int start_block = 0;  ///< 1-indexed
  int length = 0;
  double ratio = 1.0;
};

struct Plan {
  std::vector<double> ratios;      ///< per block, index 0 is block 1
  std::vector<int> selector_blocks;
  std::vector<Stage> stages;       ///< runs over blocks 4..L
  double est_latency_ms = 0.0;
  double oracle_drop = 0.0;
};

inline constexpr int kFirstPrunableBlock = 4;

double model_latency(std::span<const double> ratios, const LatencyTable& table);

/// sum_i (kappa_i - mean_b (1/N) sum_j D_j^{i,b})^2.
/// masks[i][b] is image b's keep decision over the N original tokens at
/// stage i. Throws on an empty batch or ragged input.
double ratio_loss(std::span<const double> targets,
                  const std::vector<std::vector<std::vector<std::uint8_t>>>& masks);

double total_loss(double cls, double distill, double ratio, double lambda_distill = 0.5, double lambda_ratio = 2.0);

struct PlanRequest {
  int depth = 12;
  double a_drop = 0.5;
  double rho_init = 0.9;
  double latency_limit_ms = 0.0;
};

enum class PlanStatus { Feasible, Infeasible };

struct PlanResult {
  PlanStatus status = PlanStatus::Infeasible;
  Plan plan;                 ///< last plan examined when infeasible
  std::string binding;       ///< constraint that failed, empty when feasible
  int oracle_calls = 0;
};

PlanResult plan_step1(const PlanRequest& req, const LatencyTable& table, const AccuracyOracle& oracle);

/// Stages over blocks 4..L; a block joins the open stage while
/// |ratio - stage ratio| < epsilon. Blocks 1..3 are untouched.
Plan merge_stages(const Plan& plan, const LatencyTable& table, double epsilon = 0.085);

/// plan_step1, merge_stages, then one oracle re-evaluation of the merged plan.
PlanResult plan_model(const PlanRequest& req, const LatencyTable& table, const AccuracyOracle& oracle,
                      double epsilon = 0.085);

/// `model,<name>` line, then `keep_ratio,latency_ms` and one row per entry.
LatencyTable read_latency_csv(std::istream& in);
void write_latency_csv(std::ostream& out, const LatencyTable& table);

/// JSON object: blocks, ratios, selector_blocks, stages, est_latency_ms,
/// oracle_drop.
std::string plan_to_json(const Plan& plan);

}  // namespace heatvit
