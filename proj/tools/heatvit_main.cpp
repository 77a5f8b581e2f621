// heatvit: command-line front end.
//
//   heatvit random-weights --model deit-t --selector-blocks 4,7,10 --out w.hvtw
//   heatvit make-input     --model deit-t --out image.hvtw [--zero]
//   heatvit quantize       --weights w.hvtw --out wq.hvtw
//   heatvit infer          --weights wq.hvtw --input image.hvtw --out logits.hvtw
//   heatvit bench          --model deit-s --ratios 0.7,0.39,0.21
//   heatvit plan           --model deit-t --limit-ms 9
//   heatvit approx-check   --fn gelu --lo -6 --hi 6 --step 0.001
//
// Exit status: 0 on success, 2 on malformed input files, 1 on any other error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "heatvit/container.hpp"
#include "heatvit/errors.hpp"
#include "heatvit/kernels.hpp"
#include "heatvit/planner.hpp"
#include "heatvit/run_config.hpp"
#include "heatvit/vit.hpp"

using namespace heatvit;

namespace {

constexpr int kExitError = 1;
constexpr int kExitFormat = 2;

// Flags shared by every command that needs a model configuration. Flags
// given on the command line override the --config file.
struct ModelFlags {
  std::string config_path;
  std::string model;
  std::string selector_blocks;
  std::string ratios;
  std::optional<double> delta1, delta2, tau, temperature;
  std::string mode;
  std::optional<std::uint64_t> seed;
  std::string frac_policy;
  std::string precision;

  void attach(CLI::App* cmd, bool decisions) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    cmd->add_option("--model", model, "Model preset")
        ->check(CLI::IsMember({"deit-t", "deit-s", "deit-b", "lvvit-s", "lvvit-m"}));
    cmd->add_option("--selector-blocks", selector_blocks, "Comma-separated 1-indexed blocks, or 'none'");
    cmd->add_option("--ratios", ratios, "Comma-separated keep ratios, one per selector block");
    if (!decisions) return;
    cmd->add_option("--delta1", delta1, "erf scaling factor");
    cmd->add_option("--delta2", delta2, "softmax scaling factor");
    cmd->add_option("--tau", tau, "Keep threshold");
    cmd->add_option("--mode", mode, "Decision mode")->check(CLI::IsMember({"threshold", "gumbel", "topk"}));
    cmd->add_option("--temperature", temperature, "Gumbel temperature");
    cmd->add_option("--seed", seed, "Gumbel seed");
    cmd->add_option("--frac-policy", frac_policy, "Activation format: 'dynamic' or frac bits 0..7");
    cmd->add_option("--precision", precision, "fixed8 or real")->check(CLI::IsMember({"fixed8", "real"}));
  }

  RunConfig resolve() const {
    RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (!model.empty()) {
      const auto blocks = rc.model.selector_blocks;
      rc.model = ViTConfig::preset(model);
      if (!config_path.empty()) rc.model.selector_blocks = blocks;
    }
    if (selector_blocks == "none") {
      rc.model.selector_blocks.clear();
    } else if (!selector_blocks.empty()) {
      rc.model.selector_blocks = parse_block_list(selector_blocks);
    }
    if (!ratios.empty()) rc.ratios = parse_ratio_list(ratios);
    if (delta1) rc.delta1 = *delta1;
    if (delta2) rc.delta2 = *delta2;
    if (tau) rc.tau = *tau;
    if (temperature) rc.temperature = *temperature;
    if (seed) rc.seed = *seed;
    if (!mode.empty()) rc.mode = parse_decision_kind(mode);
    if (frac_policy == "dynamic") {
      rc.activation_frac.reset();
    } else if (!frac_policy.empty()) {
      rc.activation_frac = std::stoi(frac_policy);
    }
    if (precision == "real") rc.precision = Precision::Real;
    if (precision == "fixed8") rc.precision = Precision::Fixed8;
    rc.validate();
    return rc;
  }
};

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file_atomic(path, text);
  }
}

int cmd_random_weights(const ModelFlags& flags, std::uint64_t seed, const std::string& out) {
  const RunConfig rc = flags.resolve();
  const ModelWeights w = random_weights(rc.model, seed, rc.model.selector_blocks);
  write_container(out, weights_to_container(w, false));
  return 0;
}

int cmd_make_input(const ModelFlags& flags, std::uint64_t seed, bool zero, const std::string& out) {
  const RunConfig rc = flags.resolve();
  const auto side = static_cast<std::size_t>(rc.model.image_side);
  FTensor image({side, side, static_cast<std::size_t>(rc.model.channels)});
  if (!zero) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    // float32 round trip keeps the container copy identical to what infer reads
    for (double& v : image.data) v = static_cast<float>(u(rng));
  }
  WeightContainer c;
  c.tensors.push_back({"input", std::move(image)});
  write_container(out, c);
  return 0;
}

int cmd_quantize(const std::string& in_path, const std::string& out_path) {
  const WeightContainer in = read_container(in_path);
  WeightContainer out;
  double worst_excess = 0.0;
  for (const auto& t : in.tensors) {
    if (t.is_quantized()) throw std::invalid_argument("tensor '" + t.name + "' is already dtype 1");
    const auto& real = std::get<FTensor>(t.value);
    if (keeps_real_precision(t.name)) {
      out.tensors.push_back(t);
      continue;
    }
    const FxFormat fmt = choose_format(real);
    const QTensor q = quantize(real, fmt);
    const FTensor back = dequantize(q);
    for (std::size_t i = 0; i < real.data.size(); ++i) {
      worst_excess = std::max(worst_excess, std::abs(back.data[i] - real.data[i]) - fmt.step() / 2);
    }
    out.tensors.push_back({t.name, q});
  }
  if (worst_excess > 0.0) throw std::runtime_error("round-trip error exceeds half a quantization step");
  write_container(out_path, out);
  std::cerr << "quantized " << out.tensors.size() << " tensors\n";
  return 0;
}

int cmd_infer(const ModelFlags& flags, const std::string& weights_path, const std::string& input_path,
              const std::string& out_path, const std::string& trace_path) {
  const RunConfig rc = flags.resolve();
  const ModelWeights w = weights_from_container(read_container(weights_path), rc.model);
  const WeightContainer input = read_container(input_path);
  if (input.tensors.size() != 1) throw std::invalid_argument("input file must hold exactly one tensor");
  const FTensor image = input.real(input.tensors.front().name);

  const ForwardResult res = forward(image, w, rc.model, rc.forward_options());

  WeightContainer logits;
  logits.tensors.push_back({"logits", res.logits});
  write_container(out_path, logits);

  std::ostringstream trace;
  res.trace.write_csv(trace);
  write_file_atomic(trace_path.empty() ? out_path + ".trace.csv" : trace_path, trace.str());

  std::cout << "block,tokens\n";
  for (std::size_t b = 0; b < res.trace.block_tokens.size(); ++b) {
    std::cout << b + 1 << ',' << res.trace.block_tokens[b] << '\n';
  }
  std::cerr << "saturations: " << res.saturations << '\n';
  return 0;
}

int cmd_bench(const ModelFlags& flags, const std::string& out) {
  const RunConfig rc = flags.resolve();
  const auto ratios = rc.stage_ratios();
  const auto rows = model_cost(rc.model, ratios, TilingConfig::for_heads(rc.model.heads));
  std::ostringstream csv;
  csv << "layer_id,N,macs,cycles,ms\n";
  char ms[32];
  for (const auto& r : rows) {
    std::snprintf(ms, sizeof ms, "%.6f", r.ms);
    csv << r.layer_id << ',' << r.n << ',' << r.macs << ',' << r.cycles << ',' << ms << '\n';
  }
  write_text(out, csv.str());
  char gmacs[32];
  std::snprintf(gmacs, sizeof gmacs, "%.4f", static_cast<double>(rows.back().macs) / 1e9);
  std::cerr << "GMACs: " << gmacs << '\n';
  return 0;
}

AccuracyOracle parse_oracle(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  if (kind == "quadratic") {
    double c = 0.1;
    if (colon != std::string::npos) {
      std::size_t used = 0;
      const std::string arg = spec.substr(colon + 1);
      try {
        c = std::stod(arg, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != arg.size() || !(c >= 0.0)) throw std::invalid_argument("bad oracle coefficient '" + arg + "'");
    }
    return quadratic_oracle(c);
  }
  throw std::invalid_argument("unknown oracle '" + spec + "' (expected quadratic[:c])");
}

int cmd_plan(const std::string& model, const std::string& table_path, const std::string& oracle_spec, double limit_ms,
             double a_drop, double rho_init, double epsilon, int depth, const std::string& out) {
  LatencyTable table;
  if (!table_path.empty()) {
    std::ifstream in(table_path);
    if (!in) throw std::runtime_error("cannot open latency table '" + table_path + "'");
    table = read_latency_csv(in);
  } else {
    table = LatencyTable::builtin(model);
  }
  PlanRequest req;
  req.depth = depth > 0 ? depth : 12;
  req.a_drop = a_drop;
  req.rho_init = rho_init;
  req.latency_limit_ms = limit_ms;
  const PlanResult res = plan_model(req, table, parse_oracle(oracle_spec), epsilon);
  if (res.status == PlanStatus::Infeasible) {
    write_text(out, "infeasible: " + res.binding + "\n");
    return 0;
  }
  write_text(out, plan_to_json(res.plan) + "\n");
  return 0;
}

int cmd_approx_check(const std::string& fn, double lo, double hi, double step, double delta, const std::string& out) {
  const auto rows = error_sweep(parse_approx_fn(fn), lo, hi, step, delta);
  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  write_text(out, csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-pruned vision transformer toolkit"};
  app.require_subcommand(1);

  ModelFlags flags;
  std::string weights, input, out, trace, table_path, oracle = "quadratic:0.1", fn = "gelu";
  std::uint64_t seed = 0;
  bool zero = false;
  double limit_ms = 0.0, a_drop = 0.5, rho_init = 0.9, epsilon = 0.085;
  double lo = -6.0, hi = 6.0, step = 0.001, delta = 1.0;
  int depth = 0;

  auto* rw = app.add_subcommand("random-weights", "Write a randomly initialized float container");
  flags.attach(rw, false);
  rw->add_option("--seed", seed, "Initialization seed");
  rw->add_option("--out", out, "Output container")->required();

  auto* mi = app.add_subcommand("make-input", "Write an input image tensor");
  flags.attach(mi, false);
  mi->add_option("--seed", seed, "Pixel seed");
  mi->add_flag("--zero", zero, "All-zero image");
  mi->add_option("--out", out, "Output tensor file")->required();

  auto* qz = app.add_subcommand("quantize", "Quantize matrices of a float container to int8");
  qz->add_option("--weights", weights, "Float container")->required();
  qz->add_option("--out", out, "Quantized container")->required();

  auto* inf = app.add_subcommand("infer", "Run the forward pass");
  flags.attach(inf, true);
  inf->add_option("--weights", weights, "Weight container")->required();
  inf->add_option("--input", input, "Input tensor file")->required();
  inf->add_option("--out", out, "Logits tensor file")->required();
  inf->add_option("--trace", trace, "Token trace CSV (default <out>.trace.csv)");

  auto* bn = app.add_subcommand("bench", "Per-layer MACs and cycle estimates");
  flags.attach(bn, false);
  bn->add_option("--out", out, "CSV output (default stdout)");

  auto* pl = app.add_subcommand("plan", "Latency-constrained keep-ratio planning");
  std::string plan_model_name = "deit-t";
  pl->add_option("--model", plan_model_name, "Built-in latency table")->check(CLI::IsMember({"deit-t", "deit-s"}));
  pl->add_option("--latency-table", table_path, "Latency table CSV");
  pl->add_option("--oracle", oracle, "Accuracy oracle, quadratic[:c]");
  pl->add_option("--limit-ms", limit_ms, "Latency limit")->required();
  pl->add_option("--a-drop", a_drop, "Accuracy drop budget");
  pl->add_option("--rho-init", rho_init, "Initial keep ratio");
  pl->add_option("--epsilon", epsilon, "Stage merge threshold");
  pl->add_option("--depth", depth, "Number of blocks (default 12)");
  pl->add_option("--out", out, "Plan JSON (default stdout)");

  auto* ac = app.add_subcommand("approx-check", "Error sweep of an approximated function");
  ac->add_option("--fn", fn, "erf, gelu, exp or sigmoid");
  ac->add_option("--lo", lo, "Range start");
  ac->add_option("--hi", hi, "Range end");
  ac->add_option("--step", step, "Grid step");
  ac->add_option("--delta", delta, "Scaling factor");
  ac->add_option("--out", out, "CSV output (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*rw) return cmd_random_weights(flags, seed, out);
    if (*mi) return cmd_make_input(flags, seed, zero, out);
    if (*qz) return cmd_quantize(weights, out);
    if (*inf) return cmd_infer(flags, weights, input, out, trace);
    if (*bn) return cmd_bench(flags, out);
    if (*pl) return cmd_plan(plan_model_name, table_path, oracle, limit_ms, a_drop, rho_init, epsilon, depth, out);
    if (*ac) return cmd_approx_check(fn, lo, hi, step, delta, out);
  } catch (const FormatError& e) {
    std::cerr << "heatvit: " << e.what() << '\n';
    return kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << "heatvit: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
