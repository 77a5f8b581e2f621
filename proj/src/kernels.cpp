#include "heatvit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace heatvit {

void ApproxParams::validate() const {
  if (!(delta1 > 0.0 && delta1 <= 1.0)) throw std::invalid_argument("delta1 must be in (0,1]");
  if (!(delta2 > 0.0 && delta2 <= 1.0)) throw std::invalid_argument("delta2 must be in (0,1]");
}

double erf_aprx(double x, double delta1) {
  if (x == 0.0) return 0.0;
  const double clipped = std::min(std::abs(x), -ApproxParams::kErfB);
  const double t = clipped + ApproxParams::kErfB;
  const double mag = delta1 * (ApproxParams::kErfA * t * t + 1.0);
  return x > 0.0 ? mag : -mag;
}

double gelu_aprx(double x, double delta1) {
  return 0.5 * x * (1.0 + erf_aprx(x / std::numbers::sqrt2, delta1));
}

double exp_aprx(double x) {
  if (x > 0.0) throw std::domain_error("exp_aprx: input must be <= 0 (subtract the row max first)");
  const double z = std::floor(-x / std::numbers::ln2);
  if (z > 2000.0) return 0.0;
  const double p = x + z * std::numbers::ln2;
  const double t = p + ApproxParams::kExpC1;
  const double poly = ApproxParams::kExpC0 * t * t + ApproxParams::kExpC2;
  return std::ldexp(poly, -static_cast<int>(z));
}

void softmax_aprx_inplace(std::span<double> x, double delta2) {
  if (x.empty()) throw std::invalid_argument("softmax_aprx: empty input");
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double& v : x) {
    v = exp_aprx(v - mx);
    sum += v;
  }
  // The max element contributes exp_aprx(0) > 0, so sum > 0.
  const double scale = delta2 / sum;
  for (double& v : x) v *= scale;
}

std::vector<double> softmax_aprx(std::span<const double> x, double delta2) {
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("softmax_aprx: non-finite input");
  }
  std::vector<double> out(x.begin(), x.end());
  softmax_aprx_inplace(out, delta2);
  return out;
}

double sigmoid_plan(double x) {
  const double y = std::abs(x);
  double r;
  if (y >= 5.0) {
    r = 1.0;
  } else if (y >= 2.375) {
    r = 0.03125 * y + 0.84375;
  } else if (y >= 1.0) {
    r = 0.125 * y + 0.625;
  } else {
    r = 0.25 * y + 0.5;
  }
  return x < 0.0 ? 1.0 - r : r;
}

ApproxFn parse_approx_fn(std::string_view name) {
  if (name == "erf") return ApproxFn::Erf;
  if (name == "gelu") return ApproxFn::Gelu;
  if (name == "exp") return ApproxFn::Exp;
  if (name == "sigmoid") return ApproxFn::Sigmoid;
  throw std::invalid_argument("unknown function id '" + std::string(name) + "'");
}

std::string_view to_string(ApproxFn fn) {
  switch (fn) {
    case ApproxFn::Erf: return "erf";
    case ApproxFn::Gelu: return "gelu";
    case ApproxFn::Exp: return "exp";
    case ApproxFn::Sigmoid: return "sigmoid";
  }
  return "?";
}

namespace {

long double exact_value(ApproxFn fn, long double x) {
  switch (fn) {
    case ApproxFn::Erf: return std::erf(x);
    case ApproxFn::Gelu: return 0.5L * x * (1.0L + std::erf(x / std::sqrt(2.0L)));
    case ApproxFn::Exp: return std::exp(x);
    case ApproxFn::Sigmoid: return 1.0L / (1.0L + std::exp(-x));
  }
  return 0.0L;
}

double approx_value(ApproxFn fn, double x, double delta) {
  switch (fn) {
    case ApproxFn::Erf: return erf_aprx(x, delta);
    case ApproxFn::Gelu: return gelu_aprx(x, delta);
    case ApproxFn::Exp: return exp_aprx(x);
    case ApproxFn::Sigmoid: return sigmoid_plan(x);
  }
  return 0.0;
}

}  // namespace

std::vector<SweepRow> error_sweep(ApproxFn fn, double lo, double hi, double step, double delta) {
  if (!(step > 0.0) || !std::isfinite(step)) throw std::invalid_argument("error_sweep: step must be positive");
  if (!std::isfinite(lo) || !std::isfinite(hi) || hi < lo) throw std::invalid_argument("error_sweep: invalid range");
  if (fn == ApproxFn::Exp && hi > 0.0) throw std::invalid_argument("error_sweep: exp is defined on x <= 0 only");

  const auto count = static_cast<long>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<SweepRow> rows(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(static)
  for (long k = 0; k < count; ++k) {
    const double x = lo + static_cast<double>(k) * step;
    const double a = approx_value(fn, x, delta);
    const auto e = exact_value(fn, static_cast<long double>(x));
    rows[static_cast<std::size_t>(k)] = {x, a, static_cast<double>(e),
                                         static_cast<double>(std::abs(static_cast<long double>(a) - e))};
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "x,approx,exact,abs_err\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g\n", r.x, r.approx, r.exact, r.abs_err);
    out << buf;
  }
}

}  // namespace heatvit
