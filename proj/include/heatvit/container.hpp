#pragma once

// HVTW tensor container.
//
//   "HVTW"                magic
//   u32 version           1
//   u32 count
//   count x {
//     u16 name_len, name (UTF-8)
//     u8  dtype           0 = float32, 1 = int8 fixed point
//     u8  frac_bits       dtype 1 only
//     u8  ndim
//     u32 dims[ndim]
//     payload             prod(dims) * (4 | 1) bytes
//   }
//
// Everything is little-endian. Readers reject duplicate names, truncated
// payloads and trailing bytes with heatvit::FormatError.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "heatvit/errors.hpp"
#include "heatvit/fixedpoint.hpp"

namespace heatvit {

struct ModelWeights;
struct ViTConfig;

struct NamedTensor {
  std::string name;
  std::variant<FTensor, QTensor> value;

  bool is_quantized() const { return std::holds_alternative<QTensor>(value); }
};

struct WeightContainer {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  /// Real view of a tensor (dequantized when stored as int8).
  FTensor real(const std::string& name) const;
};

std::vector<std::uint8_t> encode_container(const WeightContainer& c);
WeightContainer decode_container(std::span<const std::uint8_t> bytes);

WeightContainer read_container(const std::filesystem::path& path);
/// Writes to a temporary sibling file, then renames over `path`.
void write_container(const std::filesystem::path& path, const WeightContainer& c);

/// Writes `contents` atomically (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// Tensors are named patch_embed.weight, pos_embed, cls_token,
/// blocks.<b>.{ln1,ln2}.{scale,bias}, blocks.<b>.{q,k,v,proj,fc1,fc2}.{weight,bias},
/// norm.{scale,bias}, head.{weight,bias} and
/// selectors.<b>.{local,score_hidden,score_out}.<head>.{weight,bias},
/// selectors.<b>.attention.{weight,bias}. Matrices are stored quantized when
/// `quantized` is set; LayerNorm parameters and biases are always float.
WeightContainer weights_to_container(const ModelWeights& w, bool quantized);
ModelWeights weights_from_container(const WeightContainer& c, const ViTConfig& cfg);

/// Biases and LayerNorm parameters stay in float32 under quantization.
bool keeps_real_precision(const std::string& tensor_name);

}  // namespace heatvit
