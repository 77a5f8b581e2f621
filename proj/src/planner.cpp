#include "heatvit/planner.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "heatvit/errors.hpp"
#include "json.hpp"

namespace heatvit {

LatencyTable::LatencyTable(std::string model, std::vector<std::pair<double, double>> entries)
    : model_(std::move(model)), entries_(std::move(entries)) {
  if (entries_.empty()) throw std::invalid_argument("latency table is empty");
  std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  if (entries_.front().first != 1.0) throw std::invalid_argument("latency table must contain keep ratio 1.0");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto [r, ms] = entries_[i];
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("latency table ratios must be in (0,1]");
    if (!(ms > 0.0) || !std::isfinite(ms)) throw std::invalid_argument("latency table latencies must be positive");
    if (i > 0 && !(r < entries_[i - 1].first && ms < entries_[i - 1].second)) {
      throw std::invalid_argument("latency table must strictly decrease with the keep ratio");
    }
  }
}

LatencyTable LatencyTable::builtin(const std::string& model) {
  if (model == "deit-t") {
    return {model, {{1.0, 1.034}, {0.9, 0.945}, {0.8, 0.881}, {0.7, 0.764}, {0.6, 0.702}, {0.5, 0.636}}};
  }
  if (model == "deit-s") {
    return {model, {{1.0, 3.161}, {0.9, 2.837}, {0.8, 2.565}, {0.7, 2.255}, {0.6, 1.973}, {0.5, 1.682}}};
  }
  throw std::invalid_argument("no built-in latency table for '" + model + "'");
}

double LatencyTable::lookup(double ratio) const {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("lookup: keep ratio must be in (0,1]");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto [r, ms] = entries_[i];
    if (ratio == r) return ms;
    if (ratio > r) {
      // i > 0 because entries_[0] is 1.0
      const auto [r_hi, ms_hi] = entries_[i - 1];
      return ms + (ms_hi - ms) * (ratio - r) / (r_hi - r);
    }
  }
  return entries_.back().second;
}

double LatencyTable::ratio_for_latency(double latency_ms) const {
  if (latency_ms >= entries_.front().second) return entries_.front().first;
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    const auto [r, ms] = entries_[i];
    if (latency_ms == ms) return r;
    if (latency_ms > ms) {
      const auto [r_hi, ms_hi] = entries_[i - 1];
      return r + (r_hi - r) * (latency_ms - ms) / (ms_hi - ms);
    }
  }
  return entries_.back().first;
}

std::optional<double> LatencyTable::next_lower_latency(double latency_ms) const {
  for (const auto& [r, ms] : entries_) {
    if (ms < latency_ms) return ms;
  }
  return std::nullopt;
}

AccuracyOracle quadratic_oracle(double coefficient) {
  return [coefficient](std::span<const double> ratios) {
    double s = 0.0;
    for (double r : ratios) s += (1.0 - r) * (1.0 - r);
    return coefficient * s;
  };
}

double model_latency(std::span<const double> ratios, const LatencyTable& table) {
  double t = 0.0;
  for (double r : ratios) t += table.lookup(r);
  return t;
}

double ratio_loss(std::span<const double> targets,
                  const std::vector<std::vector<std::vector<std::uint8_t>>>& masks) {
  if (targets.size() != masks.size()) throw std::invalid_argument("ratio_loss: one target per stage expected");
  double loss = 0.0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& batch = masks[i];
    if (batch.empty()) throw std::invalid_argument("ratio_loss: empty batch");
    double mean = 0.0;
    for (const auto& m : batch) {
      if (m.empty() || m.size() != batch.front().size()) throw std::invalid_argument("ratio_loss: ragged masks");
      mean += static_cast<double>(std::count(m.begin(), m.end(), std::uint8_t{1})) / static_cast<double>(m.size());
    }
    mean /= static_cast<double>(batch.size());
    loss += (targets[i] - mean) * (targets[i] - mean);
  }
  return loss;
}

double total_loss(double cls, double distill, double ratio, double lambda_distill, double lambda_ratio) {
  return cls + lambda_distill * distill + lambda_ratio * ratio;
}

namespace {

void assign_singleton_stages(Plan& plan) {
  plan.stages.clear();
  plan.selector_blocks.clear();
  for (std::size_t i = kFirstPrunableBlock - 1; i < plan.ratios.size(); ++i) {
    if (plan.ratios[i] < 1.0) {
      const int block = static_cast<int>(i) + 1;
      plan.stages.push_back({block, 1, plan.ratios[i]});
      plan.selector_blocks.push_back(block);
    }
  }
}

}  // namespace

PlanResult plan_step1(const PlanRequest& req, const LatencyTable& table, const AccuracyOracle& oracle) {
  if (!(req.rho_init > 0.0 && req.rho_init <= 1.0)) throw std::invalid_argument("rho_init must be in (0,1]");
  if (!(req.a_drop > 0.0)) throw std::invalid_argument("a_drop must be positive");
  if (req.depth <= 0) throw std::invalid_argument("depth must be positive");

  PlanResult res;
  Plan& plan = res.plan;
  plan.ratios.assign(static_cast<std::size_t>(req.depth), 1.0);
  double a = 0.0;
  double t = 0.0;
  auto evaluate = [&] {
    a = oracle(plan.ratios);
    t = model_latency(plan.ratios, table);
    ++res.oracle_calls;
  };
  auto finish = [&](PlanStatus status, std::string binding) {
    plan.est_latency_ms = model_latency(plan.ratios, table);
    plan.oracle_drop = oracle(plan.ratios);
    ++res.oracle_calls;
    assign_singleton_stages(plan);
    res.status = status;
    res.binding = std::move(binding);
    return res;
  };

  evaluate();
  if (a < req.a_drop && t <= req.latency_limit_ms) return finish(PlanStatus::Feasible, "");

  bool accuracy_bound = false;
  for (int block = req.depth; block >= kFirstPrunableBlock; --block) {
    double& rho = plan.ratios[static_cast<std::size_t>(block - 1)];
    double last_ok = rho;
    rho = req.rho_init;
    evaluate();
    bool exhausted = false;
    while (a < req.a_drop) {
      last_ok = rho;
      if (t <= req.latency_limit_ms) return finish(PlanStatus::Feasible, "");
      const auto lower = table.next_lower_latency(table.lookup(rho));
      if (!lower) {
        exhausted = true;
        break;
      }
      rho = table.ratio_for_latency(*lower);
      evaluate();
    }
    if (!exhausted) accuracy_bound = true;
    rho = last_ok;
  }
  return finish(PlanStatus::Infeasible, accuracy_bound ? "accuracy drop" : "latency limit");
}

Plan merge_stages(const Plan& plan, const LatencyTable& table, double epsilon) {
  Plan out = plan;
  out.stages.clear();
  out.selector_blocks.clear();
  for (std::size_t i = kFirstPrunableBlock - 1; i < out.ratios.size(); ++i) {
    const int block = static_cast<int>(i) + 1;
    if (!out.stages.empty() && std::abs(out.ratios[i] - out.stages.back().ratio) < epsilon) {
      ++out.stages.back().length;
      out.ratios[i] = out.stages.back().ratio;
    } else {
      out.stages.push_back({block, 1, out.ratios[i]});
    }
  }
  for (const auto& s : out.stages) {
    if (s.ratio < 1.0) out.selector_blocks.push_back(s.start_block);
  }
  out.est_latency_ms = model_latency(out.ratios, table);
  return out;
}

PlanResult plan_model(const PlanRequest& req, const LatencyTable& table, const AccuracyOracle& oracle,
                      double epsilon) {
  PlanResult res = plan_step1(req, table, oracle);
  if (res.status != PlanStatus::Feasible) return res;
  res.plan = merge_stages(res.plan, table, epsilon);
  res.plan.oracle_drop = oracle(res.plan.ratios);
  ++res.oracle_calls;
  if (res.plan.est_latency_ms > req.latency_limit_ms) {
    res.status = PlanStatus::Infeasible;
    res.binding = "latency limit after merging stages";
  } else if (res.plan.oracle_drop >= req.a_drop) {
    res.status = PlanStatus::Infeasible;
    res.binding = "accuracy drop after merging stages";
  }
  return res;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& field, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw FormatError("latency table: invalid number '" + field + "'", line);
  }
}

}  // namespace

LatencyTable read_latency_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      line = trim(line);
      if (!line.empty()) return true;
    }
    return false;
  };
  if (!next() || line.rfind("model,", 0) != 0) throw FormatError("latency table: expected 'model,<name>' line", lineno);
  const std::string model = trim(line.substr(6));
  if (model.empty()) throw FormatError("latency table: empty model name", lineno);
  if (!next() || line != "keep_ratio,latency_ms") throw FormatError("latency table: expected 'keep_ratio,latency_ms' header", lineno);
  std::vector<std::pair<double, double>> entries;
  while (next()) {
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw FormatError("latency table: expected two columns", lineno);
    }
    entries.emplace_back(parse_number(trim(line.substr(0, comma)), lineno), parse_number(trim(line.substr(comma + 1)), lineno));
  }
  try {
    return LatencyTable(model, std::move(entries));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("latency table: ") + e.what(), lineno);
  }
}

void write_latency_csv(std::ostream& out, const LatencyTable& table) {
  out << "model," << table.model() << "\nkeep_ratio,latency_ms\n";
  for (const auto& [r, ms] : table.entries()) out << r << ',' << ms << '\n';
}

std::string plan_to_json(const Plan& plan) {
  nlohmann::ordered_json j;
  std::vector<int> blocks(plan.ratios.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i] = static_cast<int>(i) + 1;
  j["blocks"] = blocks;
  j["ratios"] = plan.ratios;
  j["selector_blocks"] = plan.selector_blocks;
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& s : plan.stages) {
    j["stages"].push_back({{"start_block", s.start_block}, {"length", s.length}, {"ratio", s.ratio}});
  }
  j["est_latency_ms"] = plan.est_latency_ms;
  j["oracle_drop"] = plan.oracle_drop;
  return j.dump(2);
}

}  // namespace heatvit
