#pragma once

// Hardware-friendly approximations of the transformer nonlinearities.
//
//   erf    second-order polynomial with saturation, scaled by delta1
//   GELU   x/2 * (1 + erf_aprx(x/sqrt(2)))
//   exp    x = -ln2*z + p, exp(p) by a quadratic, then >> z
//   softmax  delta2 * exp_aprx(x - max) / sum
//   sigmoid  piece-wise linear (PLAN)
//
// delta1/delta2 < 1 damp propagation of quantization error through
// GELU and Softmax respectively.

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace heatvit {

struct ApproxParams {
  static constexpr double kErfA = -0.2888;
  static constexpr double kErfB = -1.769;
  static constexpr double kExpC0 = 0.3585;
  static constexpr double kExpC1 = 1.353;
  static constexpr double kExpC2 = 0.344;

  double delta1 = 0.5;
  double delta2 = 0.5;

  /// Throws std::invalid_argument unless both deltas are in (0,1].
  void validate() const;
};

double erf_aprx(double x, double delta1);
double gelu_aprx(double x, double delta1);

/// Defined for x <= 0 only; throws std::domain_error otherwise.
double exp_aprx(double x);

std::vector<double> softmax_aprx(std::span<const double> x, double delta2);
/// In-place variant used on attention rows.
void softmax_aprx_inplace(std::span<double> x, double delta2);

double sigmoid_plan(double x);

enum class ApproxFn { Erf, Gelu, Exp, Sigmoid };

/// Parses "erf", "gelu", "exp" or "sigmoid". Throws std::invalid_argument.
ApproxFn parse_approx_fn(std::string_view name);
std::string_view to_string(ApproxFn fn);

struct SweepRow {
  double x;
  double approx;
  double exact;
  double abs_err;
};

/// Samples fn on lo, lo+step, ... <= hi (a single row when lo == hi).
/// delta is delta1 for erf/gelu and ignored otherwise. Exact values use
/// long double references.
std::vector<SweepRow> error_sweep(ApproxFn fn, double lo, double hi, double step, double delta = 1.0);

/// CSV with header `x,approx,exact,abs_err`, 9 significant digits.
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

}  // namespace heatvit
