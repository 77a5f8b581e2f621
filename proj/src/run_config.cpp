#include "heatvit/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "heatvit/errors.hpp"
#include "json.hpp"

namespace heatvit {

void RunConfig::validate() const {
  model.validate();
  for (double r : ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("keep ratios must be in (0,1]");
  }
  if (!ratios.empty() && ratios.size() != model.selector_blocks.size()) {
    throw std::invalid_argument("expected " + std::to_string(model.selector_blocks.size()) +
                                " keep ratios (one per selector block), got " + std::to_string(ratios.size()));
  }
  if (mode == DecisionKind::TopK && ratios.empty() && !model.selector_blocks.empty()) {
    throw std::invalid_argument("topk mode needs keep ratios");
  }
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must be in (0,1)");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  ApproxParams{delta1, delta2}.validate();
  if (activation_frac && (*activation_frac < 0 || *activation_frac > 7)) {
    throw std::invalid_argument("activation_frac must be in [0,7]");
  }
}

std::vector<double> RunConfig::stage_ratios() const {
  if (!ratios.empty()) return ratios;
  return std::vector<double>(model.selector_blocks.size(), 1.0);
}

ForwardOptions RunConfig::forward_options() const {
  validate();
  ForwardOptions opt;
  opt.precision = precision;
  opt.approx = ApproxParams{delta1, delta2};
  opt.activation_frac = activation_frac;
  switch (mode) {
    case DecisionKind::Threshold: opt.decision = DecisionMode::threshold(tau); break;
    case DecisionKind::Gumbel: opt.decision = DecisionMode::gumbel(temperature, seed); break;
    case DecisionKind::TopK:
      opt.decision = DecisionMode::threshold(tau);
      opt.stage_keep_ratios = ratios;
      break;
  }
  return opt;
}

DecisionKind parse_decision_kind(const std::string& name) {
  if (name == "threshold") return DecisionKind::Threshold;
  if (name == "gumbel") return DecisionKind::Gumbel;
  if (name == "topk") return DecisionKind::TopK;
  throw std::invalid_argument("unknown decision mode '" + name + "' (threshold, gumbel, topk)");
}

namespace {

using nlohmann::json;

template <class T>
T get_as(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: bad value for '") + key + "': " + e.what(), 0);
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config: ") + e.what(), e.byte);
  }
  if (!j.is_object()) throw FormatError("config: top level must be an object", 0);

  static const std::set<std::string> kKnown = {
      "model",  "depth", "heads",       "dim",  "patch",           "image_side", "channels",
      "classes", "selector_blocks", "ratios", "delta1", "delta2", "mode", "tau",
      "temperature", "seed", "activation_frac", "precision"};
  for (const auto& [key, value] : j.items()) {
    if (!kKnown.count(key)) throw FormatError("config: unknown key '" + key + "'", 0);
  }

  RunConfig rc;
  if (j.contains("model")) {
    const auto name = get_as<std::string>(j, "model");
    if (name == "custom") {
      rc.model = ViTConfig{};
      rc.model.selector_blocks.clear();
    } else {
      rc.model = ViTConfig::preset(name);
    }
  }
  auto override_int = [&](const char* key, int& field) {
    if (j.contains(key)) field = get_as<int>(j, key);
  };
  override_int("depth", rc.model.depth);
  override_int("heads", rc.model.heads);
  override_int("dim", rc.model.dim);
  override_int("patch", rc.model.patch);
  override_int("image_side", rc.model.image_side);
  override_int("channels", rc.model.channels);
  override_int("classes", rc.model.classes);
  if (j.contains("selector_blocks")) {
    rc.model.selector_blocks = get_as<std::vector<int>>(j, "selector_blocks");
  } else if (j.contains("depth")) {
    rc.model.selector_blocks = ViTConfig::default_selector_blocks(rc.model.depth);
  }
  if (j.contains("ratios")) rc.ratios = get_as<std::vector<double>>(j, "ratios");
  if (j.contains("delta1")) rc.delta1 = get_as<double>(j, "delta1");
  if (j.contains("delta2")) rc.delta2 = get_as<double>(j, "delta2");
  if (j.contains("mode")) rc.mode = parse_decision_kind(get_as<std::string>(j, "mode"));
  if (j.contains("tau")) rc.tau = get_as<double>(j, "tau");
  if (j.contains("temperature")) rc.temperature = get_as<double>(j, "temperature");
  if (j.contains("seed")) rc.seed = get_as<std::uint64_t>(j, "seed");
  if (j.contains("activation_frac")) {
    const auto& v = j.at("activation_frac");
    if (v.is_string() && v.get<std::string>() == "dynamic") {
      rc.activation_frac.reset();
    } else {
      rc.activation_frac = get_as<int>(j, "activation_frac");
    }
  }
  if (j.contains("precision")) {
    const auto p = get_as<std::string>(j, "precision");
    if (p == "fixed8") {
      rc.precision = Precision::Fixed8;
    } else if (p == "real") {
      rc.precision = Precision::Real;
    } else {
      throw std::invalid_argument("config: precision must be fixed8 or real");
    }
  }
  rc.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

namespace {

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::string field;
  std::istringstream in(text);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (text.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<double> parse_ratio_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& f : split_commas(text)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(f, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != f.size()) throw std::invalid_argument("invalid ratio '" + f + "'");
    if (!(v > 0.0 && v <= 1.0)) throw std::invalid_argument("ratio " + f + " outside (0,1]");
    out.push_back(v);
  }
  return out;
}

std::vector<int> parse_block_list(const std::string& text) {
  std::vector<int> out;
  for (const auto& f : split_commas(text)) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(f, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != f.size()) throw std::invalid_argument("invalid block index '" + f + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace heatvit
