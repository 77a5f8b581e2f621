#include "heatvit/gemm.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace heatvit {

void TilingConfig::validate(int heads, std::int64_t mac_budget) const {
  if (ti <= 0 || to <= 0 || th <= 0) throw std::invalid_argument("tiling factors must be positive");
  if (std::int64_t{ti} * to * th > mac_budget) {
    throw std::invalid_argument("tiling Ti*To*Th=" + std::to_string(std::int64_t{ti} * to * th) +
                                " exceeds the MAC budget " + std::to_string(mac_budget));
  }
  if (th > heads) throw std::invalid_argument("tiling Th exceeds the head count");
}

TilingConfig TilingConfig::for_heads(int heads) { return {16, 32, std::clamp(heads, 1, 4)}; }

namespace {

struct GemmShape {
  std::size_t n, di, dout, groups, di_g, do_g;
};

GemmShape check_operands(const QTensor& a, const QTensor& w, GemmMode mode) {
  if (a.shape.size() != 2 || w.shape.size() != 2) throw std::invalid_argument("gemm: operands must be rank 2");
  if (mode.kind == GemmMode::Kind::PerHead && mode.heads <= 0) throw std::invalid_argument("gemm: head count must be positive");
  GemmShape s{};
  s.n = a.rows();
  s.di = a.cols();
  s.dout = w.cols();
  s.groups = static_cast<std::size_t>(mode.groups());
  if (s.di % s.groups != 0 || s.dout % s.groups != 0) {
    throw std::invalid_argument("gemm: dimensions are not divisible into " + std::to_string(s.groups) + " head groups");
  }
  s.di_g = s.di / s.groups;
  s.do_g = s.dout / s.groups;
  if (w.rows() != s.di_g) {
    throw std::invalid_argument("gemm: inner dimension mismatch (" + std::to_string(s.di_g) + " vs " +
                                std::to_string(w.rows()) + ")");
  }
  // |a*w| <= 128*128, so each group's sum stays within int32 for di_g < 2^17.
  constexpr std::size_t kMaxInner = std::numeric_limits<std::int32_t>::max() / (128 * 128);
  if (s.di_g > kMaxInner) throw std::invalid_argument("gemm: inner dimension too large for 32-bit accumulation");
  return s;
}

}  // namespace

AccTensor tiled_gemm(const QTensor& a, const QTensor& w, GemmMode mode, const TilingConfig& tiling) {
  if (tiling.ti <= 0 || tiling.to <= 0 || tiling.th <= 0) throw std::invalid_argument("tiling factors must be positive");
  const GemmShape s = check_operands(a, w, mode);
  AccTensor out({s.n, s.dout}, a.fmt.frac_bits + w.fmt.frac_bits);

  const auto ti = static_cast<std::size_t>(tiling.ti);
  const auto to = static_cast<std::size_t>(tiling.to);
  const auto out_tiles = static_cast<long>((s.do_g + to - 1) / to);
  const auto groups = static_cast<long>(s.groups);
  const std::int8_t* ap = a.data.data();
  const std::int8_t* wp = w.data.data();
  std::int32_t* op = out.data.data();

  // Each (group, output tile) pair owns a disjoint column block of `out`.
#pragma omp parallel for collapse(2) schedule(static)
  for (long g = 0; g < groups; ++g) {
    for (long ot = 0; ot < out_tiles; ++ot) {
      const std::size_t o0 = static_cast<std::size_t>(ot) * to;
      const std::size_t o1 = std::min(o0 + to, s.do_g);
      const std::size_t a_off = static_cast<std::size_t>(g) * s.di_g;
      const std::size_t c_off = static_cast<std::size_t>(g) * s.do_g;
      for (std::size_t i0 = 0; i0 < s.di_g; i0 += ti) {
        const std::size_t i1 = std::min(i0 + ti, s.di_g);
        for (std::size_t n = 0; n < s.n; ++n) {
          const std::int8_t* arow = ap + n * s.di + a_off;
          std::int32_t* orow = op + n * s.dout + c_off;
          for (std::size_t i = i0; i < i1; ++i) {
            const std::int32_t av = arow[i];
            if (av == 0) continue;
            const std::int8_t* wrow = wp + i * s.dout + c_off;
            for (std::size_t o = o0; o < o1; ++o) orow[o] += av * static_cast<std::int32_t>(wrow[o]);
          }
        }
      }
    }
  }
  return out;
}

AccTensor gemm_reference(const QTensor& a, const QTensor& w, GemmMode mode) {
  const GemmShape s = check_operands(a, w, mode);
  AccTensor out({s.n, s.dout}, a.fmt.frac_bits + w.fmt.frac_bits);
  for (std::size_t g = 0; g < s.groups; ++g) {
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t o = 0; o < s.do_g; ++o) {
        std::int32_t acc = 0;
        for (std::size_t i = 0; i < s.di_g; ++i) {
          acc += static_cast<std::int32_t>(a.data[n * s.di + g * s.di_g + i]) *
                 static_cast<std::int32_t>(w.data[i * s.dout + g * s.do_g + o]);
        }
        out.data[n * s.dout + g * s.do_g + o] = acc;
      }
    }
  }
  return out;
}

}  // namespace heatvit
