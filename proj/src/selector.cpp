#include "heatvit/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace heatvit {

std::size_t TokenSet::cls_index() const {
  std::size_t found = origin.size();
  for (std::size_t i = 0; i < origin.size(); ++i) {
    if (origin[i] == kClsOrigin) {
      if (found != origin.size()) throw std::invalid_argument("TokenSet: more than one CLS token");
      found = i;
    }
  }
  if (found == origin.size()) throw std::invalid_argument("TokenSet: missing CLS token");
  return found;
}

void TokenSet::validate() const {
  if (tokens.shape.size() != 2 || tokens.rows() != origin.size()) {
    throw std::invalid_argument("TokenSet: origin length does not match token count");
  }
  (void)cls_index();
  std::vector<int> packages;
  for (int o : origin) {
    if (is_package_origin(o)) packages.push_back(o);
  }
  std::sort(packages.begin(), packages.end());
  if (std::adjacent_find(packages.begin(), packages.end()) != packages.end()) {
    throw std::invalid_argument("TokenSet: two package tokens from the same stage");
  }
}

void SelectorParams::validate(std::size_t width) const {
  const auto h = static_cast<std::size_t>(heads);
  if (heads <= 0 || width % h != 0) throw std::invalid_argument("selector: width not divisible by heads");
  const std::size_t d = width / h;
  if (d % 2 != 0) throw std::invalid_argument("selector: head dim must be even");
  if (local.size() != h || score_hidden.size() != h || score_out.size() != h) {
    throw std::invalid_argument("selector: expected one MLP per head");
  }
  for (std::size_t i = 0; i < h; ++i) {
    if (local[i].in_dim() != d || local[i].out_dim() != d / 2 || score_hidden[i].in_dim() != d ||
        score_hidden[i].out_dim() != d / 2 || score_out[i].in_dim() != d / 2 || score_out[i].out_dim() != 2) {
      throw std::invalid_argument("selector: MLP shape mismatch for head " + std::to_string(i));
    }
  }
  if (head_attention.in_dim() != h || head_attention.out_dim() != h) {
    throw std::invalid_argument("selector: attention MLP must be h -> h");
  }
}

void DecisionMode::validate() const {
  if (kind == Kind::Threshold && !(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must be in (0,1)");
  if (kind == Kind::Gumbel && !(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
}

std::size_t DecisionMask::kept() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
}

namespace {

FTensor apply_gelu(FTensor x, double delta1) {
  for (double& v : x.data) v = gelu_aprx(v, delta1);
  return x;
}

}  // namespace

ScoreMap classify(const FTensor& tokens, const SelectorParams& params, ExecContext& ctx) {
  const std::size_t n = tokens.rows(), width = tokens.cols();
  params.validate(width);
  const auto h = static_cast<std::size_t>(params.heads);
  const std::size_t d = width / h;

  ScoreMap out;
  out.head_scores.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    const FTensor x_i = slice_cols(tokens, i * d, d);
    const FTensor local = snap(apply_gelu(linear(x_i, params.local[i], ctx), ctx.approx.delta1), ctx);

    // [E_local | E_global broadcast to every token]
    FTensor e({n, d});
    std::vector<double> global(d / 2, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d / 2; ++c) global[c] += local.at(r, c);
    }
    for (double& g : global) g /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d / 2; ++c) {
        e.at(r, c) = local.at(r, c);
        e.at(r, d / 2 + c) = global[c];
      }
    }
    e = snap(e, ctx);

    const FTensor hidden = snap(apply_gelu(linear(e, params.score_hidden[i], ctx), ctx.approx.delta1), ctx);
    FTensor s = linear(hidden, params.score_out[i], ctx);
    for (std::size_t r = 0; r < n; ++r) softmax_aprx_inplace(s.row(r), 1.0);
    out.head_scores.push_back(snap(s, ctx));
  }

  FTensor xbar({n, h});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < h; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < d; ++c) sum += tokens.at(r, i * d + c);
      xbar.at(r, i) = sum / static_cast<double>(d);
    }
  }
  xbar = snap(xbar, ctx);
  FTensor a = linear(xbar, params.head_attention, ctx);
  for (double& v : a.data) v = sigmoid_plan(v);
  out.head_weights = snap(a, ctx);
  out.fused = fuse_scores(out.head_scores, out.head_weights);
  return out;
}

FTensor fuse_scores(const std::vector<FTensor>& head_scores, const FTensor& head_weights) {
  const std::size_t h = head_scores.size();
  if (h == 0 || head_weights.cols() != h) throw std::invalid_argument("fuse_scores: head count mismatch");
  const std::size_t n = head_weights.rows();
  FTensor fused({n, 2});
  for (std::size_t r = 0; r < n; ++r) {
    double wsum = 0.0;
    for (std::size_t i = 0; i < h; ++i) wsum += head_weights.at(r, i);
    for (std::size_t k = 0; k < 2; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < h; ++i) {
        const double w = wsum > 0.0 ? head_weights.at(r, i) : 1.0;
        acc += head_scores[i].at(r, k) * w;
      }
      fused.at(r, k) = acc / (wsum > 0.0 ? wsum : static_cast<double>(h));
    }
  }
  return fused;
}

DecisionMask decide(const FTensor& fused, const DecisionMode& mode, std::size_t cls_index) {
  mode.validate();
  const std::size_t n = fused.rows();
  if (fused.cols() != 2) throw std::invalid_argument("decide: expected [N x 2] scores");
  DecisionMask m;
  m.keep.assign(n, 0);
  if (mode.kind == DecisionMode::Kind::Threshold) {
    for (std::size_t r = 0; r < n; ++r) m.keep[r] = fused.at(r, 0) >= mode.tau ? 1 : 0;
  } else {
    std::mt19937_64 rng(mode.seed);
    constexpr double kScale = 0x1.0p-53;
    auto gumbel = [&] {
      // u in (0,1)
      const double u = (static_cast<double>(rng() >> 11) + 0.5) * kScale;
      return -std::log(-std::log(u));
    };
    for (std::size_t r = 0; r < n; ++r) {
      const double g_keep = gumbel();
      const double g_prune = gumbel();
      const double keep = std::log(fused.at(r, 0)) / mode.temperature + g_keep;
      const double prune = std::log(fused.at(r, 1)) / mode.temperature + g_prune;
      m.keep[r] = keep >= prune ? 1 : 0;
    }
  }
  if (cls_index < n) m.keep[cls_index] = 1;
  return m;
}

DecisionMask decide_top_k(const FTensor& fused, std::size_t keep_count, std::size_t cls_index) {
  const std::size_t n = fused.rows();
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (r != cls_index) order.push_back(r);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fused.at(a, 0) > fused.at(b, 0); });
  DecisionMask m;
  m.keep.assign(n, 0);
  for (std::size_t i = 0; i < std::min(keep_count, order.size()); ++i) m.keep[order[i]] = 1;
  if (cls_index < n) m.keep[cls_index] = 1;
  return m;
}

std::vector<double> package(const FTensor& tokens, const FTensor& fused, const DecisionMask& mask) {
  const std::size_t n = tokens.rows(), d = tokens.cols();
  if (mask.size() != n || fused.rows() != n) throw std::invalid_argument("package: length mismatch");
  if (!mask.any_pruned()) throw std::invalid_argument("package: no pruned tokens");
  double wsum = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!mask.keep[r]) wsum += fused.at(r, 0);
  }
  std::vector<double> p(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    if (mask.keep[r]) continue;
    const double w = wsum > 0.0 ? fused.at(r, 0) : 1.0;
    for (std::size_t c = 0; c < d; ++c) p[c] += tokens.at(r, c) * w;
  }
  const double denom = wsum > 0.0 ? wsum : static_cast<double>(n - mask.kept());
  for (double& v : p) v /= denom;
  return p;
}

TokenSet repack(const TokenSet& x, const DecisionMask& mask, const std::optional<std::vector<double>>& package_token) {
  const std::size_t n = x.size(), d = x.tokens.cols();
  if (mask.size() != n) throw std::invalid_argument("repack: mask length does not match token count");
  const std::size_t out_n = mask.kept() + (package_token ? 1 : 0);
  TokenSet out;
  out.stage = x.stage + 1;
  out.tokens = FTensor({out_n, d});
  out.origin.reserve(out_n);
  std::size_t w = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!mask.keep[r]) continue;
    std::copy_n(x.tokens.row(r).begin(), d, out.tokens.row(w).begin());
    out.origin.push_back(x.origin[r]);
    ++w;
  }
  if (package_token) {
    if (package_token->size() != d) throw std::invalid_argument("repack: package width mismatch");
    std::copy(package_token->begin(), package_token->end(), out.tokens.row(w).begin());
    out.origin.push_back(package_origin(out.stage));
  }
  return out;
}

DecisionMask compose_mask(const DecisionMask& m, const DecisionMask& m_next) {
  if (m.size() != m_next.size()) throw std::invalid_argument("compose_mask: length mismatch");
  DecisionMask out;
  out.keep.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out.keep[i] = (m.keep[i] && m_next.keep[i]) ? 1 : 0;
  return out;
}

SelectionResult run_selector(const TokenSet& x, const SelectorParams& params, const DecisionMode& mode,
                             ExecContext& ctx, std::optional<std::size_t> keep_count) {
  x.validate();
  SelectionResult res;
  res.scores = classify(x.tokens, params, ctx);
  const std::size_t cls = x.cls_index();
  res.mask = keep_count ? decide_top_k(res.scores.fused, *keep_count, cls) : decide(res.scores.fused, mode, cls);
  std::optional<std::vector<double>> pkg;
  if (res.mask.any_pruned()) {
    auto p = package(x.tokens, res.scores.fused, res.mask);
    const std::size_t width = p.size();
    FTensor row({1, width}, std::move(p));
    pkg = snap(row, ctx).data;
    for (std::size_t r = 0; r < x.size(); ++r) {
      if (!res.mask.keep[r]) res.package_members.push_back(x.origin[r]);
    }
  }
  res.tokens = repack(x, res.mask, pkg);
  return res;
}

std::int64_t selector_macs(std::int64_t n, std::int64_t d_ch, std::int64_t heads) {
  const std::int64_t d = d_ch / heads;
  // local MLP d->d/2, scoring MLP d->d/2->2 (per head), attention MLP h->h
  return n * (heads * d * (d / 2) + heads * (d * (d / 2) + (d / 2) * 2) + heads * heads);
}

}  // namespace heatvit
