#include "heatvit/vit.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

namespace heatvit {

void ViTConfig::validate() const {
  if (depth <= 0 || heads <= 0 || dim <= 0 || patch <= 0 || image_side <= 0 || channels <= 0 || classes <= 0) {
    throw std::invalid_argument("ViTConfig: all sizes must be positive");
  }
  if (dim % heads != 0) throw std::invalid_argument("ViTConfig: dim must be divisible by heads");
  if (image_side % patch != 0) throw std::invalid_argument("ViTConfig: image side must be divisible by patch");
  if (dim < 2) throw std::invalid_argument("ViTConfig: dim must be >= 2");
  int prev = 0;
  for (int b : selector_blocks) {
    if (b <= prev || b > depth) throw std::invalid_argument("ViTConfig: selector blocks must be ascending within [1, depth]");
    prev = b;
  }
}

std::vector<int> ViTConfig::default_selector_blocks(int depth) {
  std::vector<int> out;
  if (depth < 4) return out;
  for (int base : {4, 7, 10}) {
    const int b = std::clamp(static_cast<int>(std::lround(base * depth / 12.0)), 4, depth);
    if (out.empty() || out.back() < b) out.push_back(b);
  }
  return out;
}

ViTConfig ViTConfig::preset(std::string_view name) {
  ViTConfig c;
  c.name = std::string(name);
  if (name == "deit-t") {
    c.heads = 3, c.dim = 192, c.depth = 12;
  } else if (name == "deit-s") {
    c.heads = 6, c.dim = 384, c.depth = 12;
  } else if (name == "deit-b") {
    c.heads = 12, c.dim = 768, c.depth = 12;
  } else if (name == "lvvit-s") {
    c.heads = 6, c.dim = 384, c.depth = 16;
  } else if (name == "lvvit-m") {
    c.heads = 8, c.dim = 512, c.depth = 20;
  } else {
    throw std::invalid_argument("unknown model preset '" + std::string(name) + "'");
  }
  c.selector_blocks = default_selector_blocks(c.depth);
  return c;
}

namespace {

void expect_shape(const FTensor& t, const Shape& shape, const std::string& what) {
  if (t.shape != shape) throw std::invalid_argument("weights: bad shape for " + what);
}

void expect_linear(const Linear& l, std::size_t in, std::size_t out, const std::string& what) {
  expect_shape(l.weight.real, {in, out}, what + ".weight");
  if (l.weight.quant.shape != l.weight.real.shape) throw std::invalid_argument("weights: quantized shape mismatch for " + what);
  if (!l.bias.data.empty()) expect_shape(l.bias, {out}, what + ".bias");
}

}  // namespace

void ModelWeights::validate(const ViTConfig& cfg) const {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.dim);
  const auto patch_in = static_cast<std::size_t>(cfg.patch * cfg.patch * cfg.channels);
  expect_linear(patch_embed, patch_in, d, "patch_embed");
  expect_shape(pos_embed.real, {static_cast<std::size_t>(cfg.num_tokens()), d}, "pos_embed");
  expect_shape(cls_token.real, {1, d}, "cls_token");
  if (blocks.size() != static_cast<std::size_t>(cfg.depth)) throw std::invalid_argument("weights: block count mismatch");
  const auto hidden = static_cast<std::size_t>(cfg.mlp_hidden());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string p = "blocks." + std::to_string(i + 1);
    expect_shape(b.ln1_scale, {d}, p + ".ln1.scale");
    expect_shape(b.ln1_bias, {d}, p + ".ln1.bias");
    expect_shape(b.ln2_scale, {d}, p + ".ln2.scale");
    expect_shape(b.ln2_bias, {d}, p + ".ln2.bias");
    expect_linear(b.q, d, d, p + ".q");
    expect_linear(b.k, d, d, p + ".k");
    expect_linear(b.v, d, d, p + ".v");
    expect_linear(b.proj, d, d, p + ".proj");
    expect_linear(b.fc1, d, hidden, p + ".fc1");
    expect_linear(b.fc2, hidden, d, p + ".fc2");
  }
  expect_shape(norm_scale, {d}, "norm.scale");
  expect_shape(norm_bias, {d}, "norm.bias");
  expect_linear(head, d, static_cast<std::size_t>(cfg.classes), "head");
  for (const auto& [block, sel] : selectors) {
    if (block < 1 || block > cfg.depth) throw std::invalid_argument("weights: selector for nonexistent block");
    if (sel.heads != cfg.heads) throw std::invalid_argument("weights: selector head count mismatch");
    sel.validate(d);
  }
}

namespace {

class UniformRng {
 public:
  explicit UniformRng(std::uint64_t seed) : gen_(seed) {}
  double operator()(double bound) {
    const double u = static_cast<double>(gen_() >> 11) * 0x1.0p-53;  // [0,1)
    return (2.0 * u - 1.0) * bound;
  }

 private:
  std::mt19937_64 gen_;
};

FTensor random_tensor(Shape shape, double bound, UniformRng& rng) {
  FTensor t(std::move(shape));
  for (double& v : t.data) v = rng(bound);
  return t;
}

FTensor filled(std::size_t n, double value) { return FTensor({n}, std::vector<double>(n, value)); }

Linear random_linear(std::size_t in, std::size_t out, UniformRng& rng) {
  Linear l;
  l.weight = Param::from_real(random_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  l.bias = random_tensor({out}, 0.02, rng);
  return l;
}

}  // namespace

ModelWeights random_weights(const ViTConfig& cfg, std::uint64_t seed, std::span<const int> selector_blocks) {
  cfg.validate();
  UniformRng rng(seed);
  const auto d = static_cast<std::size_t>(cfg.dim);
  const auto hidden = static_cast<std::size_t>(cfg.mlp_hidden());
  ModelWeights w;
  w.patch_embed = random_linear(static_cast<std::size_t>(cfg.patch * cfg.patch * cfg.channels), d, rng);
  w.pos_embed = Param::from_real(random_tensor({static_cast<std::size_t>(cfg.num_tokens()), d}, 0.02, rng));
  w.cls_token = Param::from_real(random_tensor({1, d}, 0.02, rng));
  for (int b = 0; b < cfg.depth; ++b) {
    BlockWeights bw;
    bw.ln1_scale = filled(d, 1.0);
    bw.ln1_bias = filled(d, 0.0);
    bw.q = random_linear(d, d, rng);
    bw.k = random_linear(d, d, rng);
    bw.v = random_linear(d, d, rng);
    bw.proj = random_linear(d, d, rng);
    bw.ln2_scale = filled(d, 1.0);
    bw.ln2_bias = filled(d, 0.0);
    bw.fc1 = random_linear(d, hidden, rng);
    bw.fc2 = random_linear(hidden, d, rng);
    w.blocks.push_back(std::move(bw));
  }
  w.norm_scale = filled(d, 1.0);
  w.norm_bias = filled(d, 0.0);
  w.head = random_linear(d, static_cast<std::size_t>(cfg.classes), rng);

  const auto h = static_cast<std::size_t>(cfg.heads);
  const std::size_t hd = d / h;
  for (int block : selector_blocks) {
    SelectorParams sp;
    sp.heads = cfg.heads;
    for (std::size_t i = 0; i < h; ++i) {
      sp.local.push_back(random_linear(hd, hd / 2, rng));
      sp.score_hidden.push_back(random_linear(hd, hd / 2, rng));
      sp.score_out.push_back(random_linear(hd / 2, 2, rng));
    }
    sp.head_attention = random_linear(h, h, rng);
    w.selectors.emplace(block, std::move(sp));
  }
  return w;
}

TokenSet patch_embed(const FTensor& image, const ModelWeights& w, const ViTConfig& cfg, ExecContext& ctx) {
  const auto side = static_cast<std::size_t>(cfg.image_side);
  const auto p = static_cast<std::size_t>(cfg.patch);
  const auto c = static_cast<std::size_t>(cfg.channels);
  if (image.shape != Shape{side, side, c}) throw std::invalid_argument("patch_embed: image shape does not match config");
  const std::size_t grid = side / p;
  const std::size_t np = grid * grid;

  FTensor patches({np, p * p * c});
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      auto row = patches.row(gy * grid + gx);
      for (std::size_t iy = 0; iy < p; ++iy) {
        for (std::size_t ix = 0; ix < p; ++ix) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            row[(iy * p + ix) * c + ch] = image.data[((gy * p + iy) * side + gx * p + ix) * c + ch];
          }
        }
      }
    }
  }
  const FTensor emb = linear(snap(patches, ctx), w.patch_embed, ctx);

  const std::size_t d = emb.cols();
  TokenSet ts;
  ts.tokens = FTensor({np + 1, d});
  for (std::size_t col = 0; col < d; ++col) ts.tokens.at(0, col) = w.cls_token.real.at(0, col) + w.pos_embed.real.at(0, col);
  for (std::size_t r = 0; r < np; ++r) {
    for (std::size_t col = 0; col < d; ++col) ts.tokens.at(r + 1, col) = emb.at(r, col) + w.pos_embed.real.at(r + 1, col);
  }
  ts.tokens = snap(ts.tokens, ctx);
  ts.origin.resize(np + 1);
  ts.origin[0] = kClsOrigin;
  for (std::size_t r = 0; r < np; ++r) ts.origin[r + 1] = static_cast<int>(r);
  return ts;
}

FTensor msa_block(const FTensor& x, const BlockWeights& w, const ViTConfig& cfg, ExecContext& ctx, FTensor* attention) {
  const std::size_t n = x.rows();
  const auto h = static_cast<std::size_t>(cfg.heads);
  const std::size_t d = x.cols() / h;

  const FTensor ln = snap(layer_norm(x, w.ln1_scale, w.ln1_bias), ctx);
  const FTensor q = linear(ln, w.q, ctx);
  const FTensor k = linear(ln, w.k, ctx);
  const FTensor v = linear(ln, w.v, ctx);

  // K^T per head, stacked side by side: [d x h*N]
  FTensor kt({d, h * n});
  for (std::size_t g = 0; g < h; ++g) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < d; ++i) kt.at(i, g * n + j) = k.at(j, g * d + i);
    }
  }
  FTensor scores = per_head_matmul(q, kt, cfg.heads, ctx);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t r = 0; r < n; ++r) {
    auto row = scores.row(r);
    for (double& s : row) s *= scale;
    for (std::size_t g = 0; g < h; ++g) softmax_aprx_inplace(row.subspan(g * n, n), ctx.approx.delta2);
  }
  const FTensor probs = snap(scores, ctx);
  if (attention) *attention = probs;

  const FTensor context = per_head_matmul(probs, v, cfg.heads, ctx);
  return snap(add(x, linear(context, w.proj, ctx)), ctx);
}

FTensor ffn_block(const FTensor& x, const BlockWeights& w, ExecContext& ctx) {
  const FTensor ln = snap(layer_norm(x, w.ln2_scale, w.ln2_bias), ctx);
  FTensor hidden = linear(ln, w.fc1, ctx);
  for (double& v : hidden.data) v = gelu_aprx(v, ctx.approx.delta1);
  hidden = snap(hidden, ctx);
  return snap(add(x, linear(hidden, w.fc2, ctx)), ctx);
}

namespace {

std::size_t keep_count_for_ratio(double ratio, int num_patches) {
  return static_cast<std::size_t>(std::floor(ratio * num_patches + 1e-9));
}

void check_ratios(const ViTConfig& cfg, std::span<const double> ratios) {
  if (ratios.size() != cfg.selector_blocks.size()) {
    throw std::invalid_argument("expected " + std::to_string(cfg.selector_blocks.size()) + " stage keep ratios, got " +
                                std::to_string(ratios.size()));
  }
  for (double r : ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("keep ratios must be in (0,1]");
  }
}

}  // namespace

ForwardResult forward(const FTensor& image, const ModelWeights& w, const ViTConfig& cfg, const ForwardOptions& opt) {
  w.validate(cfg);
  opt.approx.validate();
  if (!opt.stage_keep_ratios.empty()) check_ratios(cfg, opt.stage_keep_ratios);
  ExecContext ctx;
  ctx.precision = opt.precision;
  ctx.approx = opt.approx;
  ctx.tiling = opt.tiling.value_or(TilingConfig::for_heads(cfg.heads));
  ctx.tiling.validate(cfg.heads);
  ctx.activation_frac = opt.activation_frac;
  if (ctx.activation_frac) (void)FxFormat(*ctx.activation_frac);

  ForwardResult res;
  TokenSet ts = patch_embed(image, w, cfg, ctx);
  res.trace.original_mask.keep.assign(ts.size(), 1);
  res.trace.stages.push_back({0, 0, ts.origin, {}});

  std::size_t stage = 0;
  for (int b = 1; b <= cfg.depth; ++b) {
    if (std::find(cfg.selector_blocks.begin(), cfg.selector_blocks.end(), b) != cfg.selector_blocks.end()) {
      const auto it = w.selectors.find(b);
      if (it == w.selectors.end()) throw std::invalid_argument("no selector weights for block " + std::to_string(b));
      DecisionMode mode = opt.decision;
      mode.seed += stage;
      std::optional<std::size_t> keep;
      if (!opt.stage_keep_ratios.empty()) keep = keep_count_for_ratio(opt.stage_keep_ratios[stage], cfg.num_patches());
      SelectionResult sel = run_selector(ts, it->second, mode, ctx, keep);

      DecisionMask now;
      now.keep.assign(res.trace.original_mask.size(), 1);
      for (std::size_t r = 0; r < sel.mask.size(); ++r) {
        if (!sel.mask.keep[r] && ts.origin[r] >= 0) now.keep[static_cast<std::size_t>(ts.origin[r]) + 1] = 0;
      }
      res.trace.original_mask = compose_mask(res.trace.original_mask, now);
      ++stage;
      ts = std::move(sel.tokens);
      ts.stage = static_cast<int>(stage);
      res.trace.stages.push_back({static_cast<int>(stage), b, ts.origin, std::move(sel.package_members)});
    }
    res.trace.block_tokens.push_back(ts.size());
    const BlockWeights& bw = w.blocks[static_cast<std::size_t>(b - 1)];
    ts.tokens = ffn_block(msa_block(ts.tokens, bw, cfg, ctx), bw, ctx);
  }

  const std::size_t cls = ts.cls_index();
  FTensor cls_row({1, ts.tokens.cols()});
  std::copy_n(ts.tokens.row(cls).begin(), ts.tokens.cols(), cls_row.data.begin());
  const FTensor normed = snap(layer_norm(cls_row, w.norm_scale, w.norm_bias), ctx);
  FTensor logits = linear(normed, w.head, ctx);
  const std::size_t classes = logits.size();
  res.logits = FTensor({classes}, std::move(logits.data));
  res.saturations = ctx.saturations;
  return res;
}

void TokenTrace::write_csv(std::ostream& out) const {
  auto write_list = [&](const std::vector<int>& ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out << ' ';
      if (ids[i] == kClsOrigin) {
        out << "cls";
      } else if (is_package_origin(ids[i])) {
        out << "pkg" << package_stage(ids[i]);
      } else {
        out << ids[i];
      }
    }
  };
  out << "stage,kept_indices,package_members\n";
  for (const auto& s : stages) {
    out << s.stage << ',';
    write_list(s.kept);
    out << ',';
    write_list(s.package_members);
    out << '\n';
  }
}

std::vector<std::int64_t> stage_token_counts(const ViTConfig& cfg, std::span<const double> stage_ratios) {
  cfg.validate();
  check_ratios(cfg, stage_ratios);
  const std::int64_t n = cfg.num_tokens();
  std::vector<std::int64_t> counts;
  std::size_t stage = 0;
  for (int b = 1; b <= cfg.depth; ++b) {
    while (stage < cfg.selector_blocks.size() && cfg.selector_blocks[stage] <= b) ++stage;
    if (stage == 0) {
      counts.push_back(n);
    } else {
      counts.push_back(static_cast<std::int64_t>(keep_count_for_ratio(stage_ratios[stage - 1], cfg.num_patches())) + 2);
    }
  }
  return counts;
}

std::int64_t model_macs(const ViTConfig& cfg, std::span<const double> stage_ratios) {
  std::int64_t total = 0;
  for (const auto& row : model_cost(cfg, stage_ratios, TilingConfig::for_heads(cfg.heads))) {
    if (row.layer_id == "total") total = row.macs;
  }
  return total;
}

std::vector<LayerCost> model_cost(const ViTConfig& cfg, std::span<const double> stage_ratios,
                                  const TilingConfig& tiling, std::int64_t pipeline_fill) {
  const auto counts = stage_token_counts(cfg, stage_ratios);
  const std::int64_t d = cfg.dim, h = cfg.heads, hd = cfg.head_dim();
  const std::int64_t n0 = cfg.num_tokens();
  std::vector<LayerCost> rows;
  auto push = [&](std::string id, const LayerDims& dims) {
    const std::int64_t cycles = cycle_estimate(dims, tiling, pipeline_fill);
    rows.push_back({std::move(id), dims.n, layer_macs(dims), cycles, cycles_to_ms(cycles)});
  };

  push("embed", {n0 - 1, static_cast<std::int64_t>(cfg.patch) * cfg.patch * cfg.channels, d, LayerId::QkvProjection,
                 GemmMode::accumulate()});
  std::int64_t prev = n0;
  for (int b = 1; b <= cfg.depth; ++b) {
    const std::string prefix = "b" + std::to_string(b) + ".";
    if (std::find(cfg.selector_blocks.begin(), cfg.selector_blocks.end(), b) != cfg.selector_blocks.end()) {
      const auto ph = GemmMode::per_head(static_cast<int>(h));
      push(prefix + "S1", {prev, h * hd, h * (hd / 2), LayerId::QkvProjection, ph});
      push(prefix + "S2", {prev, h * hd, h * (hd / 2), LayerId::QkvProjection, ph});
      push(prefix + "S3", {prev, h * (hd / 2), h * 2, LayerId::QkvProjection, ph});
      push(prefix + "S4", {prev, h, h, LayerId::QkvProjection, GemmMode::accumulate()});
    }
    const std::int64_t n = counts[static_cast<std::size_t>(b - 1)];
    for (const auto& layer : block_layers(n, d, h, d)) {
      push(prefix + "L" + std::to_string(static_cast<int>(layer.layer)), layer);
    }
    prev = n;
  }
  push("head", {1, d, cfg.classes, LayerId::QkvProjection, GemmMode::accumulate()});

  LayerCost total{"total", 0, 0, 0, 0.0};
  for (const auto& r : rows) {
    total.macs += r.macs;
    total.cycles += r.cycles;
  }
  total.ms = cycles_to_ms(total.cycles);
  rows.push_back(total);
  return rows;
}

}  // namespace heatvit
