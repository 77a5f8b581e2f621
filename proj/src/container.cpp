#include "heatvit/container.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <regex>
#include <set>
#include <system_error>
#include <unistd.h>

#include "heatvit/vit.hpp"

namespace heatvit {

namespace {

constexpr char kMagic[4] = {'H', 'V', 'T', 'W'};
constexpr std::uint8_t kDtypeFloat = 0;
constexpr std::uint8_t kDtypeFixed = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf_(b) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated ") + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return buf_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(buf_[pos_] | (buf_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = buf_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor* WeightContainer::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

FTensor WeightContainer::real(const std::string& name) const {
  const NamedTensor* t = find(name);
  if (!t) throw std::invalid_argument("container: missing tensor '" + name + "'");
  if (const auto* q = std::get_if<QTensor>(&t->value)) return dequantize(*q);
  return std::get<FTensor>(t->value);
}

std::vector<std::uint8_t> encode_container(const WeightContainer& c) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(WeightContainer::kVersion);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  std::set<std::string> seen;
  for (const auto& t : c.tensors) {
    if (t.name.empty() || t.name.size() > 0xFFFF) throw std::invalid_argument("container: invalid tensor name length");
    if (!seen.insert(t.name).second) throw std::invalid_argument("container: duplicate tensor name '" + t.name + "'");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    const Shape& shape = std::visit([](const auto& v) -> const Shape& { return v.shape; }, t.value);
    if (shape.empty() || shape.size() > 255) throw std::invalid_argument("container: tensor rank must be in [1,255]");
    if (const auto* q = std::get_if<QTensor>(&t.value)) {
      w.u8(kDtypeFixed);
      w.u8(static_cast<std::uint8_t>(q->fmt.frac_bits));
    } else {
      w.u8(kDtypeFloat);
    }
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
    if (const auto* q = std::get_if<QTensor>(&t.value)) {
      w.bytes(q->data.data(), q->data.size());
    } else {
      for (double v : std::get<FTensor>(t.value).data) w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return w.take();
}

WeightContainer decode_container(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic, expected \"HVTW\"", 0);
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != WeightContainer::kVersion) throw FormatError("unsupported version " + std::to_string(version), version_at);
  const std::uint32_t count = r.u32("tensor count");

  WeightContainer c;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.offset();
    const std::uint16_t name_len = r.u16("name length");
    if (name_len == 0) throw FormatError("empty tensor name", entry_at);
    const auto name_bytes = r.take(name_len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    if (!seen.insert(name).second) throw FormatError("duplicate tensor name '" + name + "'", entry_at);

    const std::size_t dtype_at = r.offset();
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != kDtypeFloat && dtype != kDtypeFixed) throw FormatError("unknown dtype " + std::to_string(dtype), dtype_at);
    int frac = 0;
    if (dtype == kDtypeFixed) {
      const std::size_t frac_at = r.offset();
      frac = r.u8("frac_bits");
      if (frac > 7) throw FormatError("frac_bits out of range", frac_at);
    }
    const std::size_t ndim_at = r.offset();
    const std::uint8_t ndim = r.u8("ndim");
    if (ndim == 0) throw FormatError("tensor rank must be positive", ndim_at);
    Shape shape;
    std::size_t elems = 1;
    const std::size_t elem_size = dtype == kDtypeFloat ? 4 : 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const std::size_t dim_at = r.offset();
      const std::uint32_t dim = r.u32("dims");
      if (dim == 0) throw FormatError("zero dimension", dim_at);
      if (elems > r.remaining() / dim) throw FormatError("payload larger than file", dim_at);
      elems *= dim;
      shape.push_back(dim);
    }
    if (elems > r.remaining() / elem_size) throw FormatError("truncated payload for '" + name + "'", r.offset());
    const auto payload = r.take(elems * elem_size, "payload");
    if (dtype == kDtypeFixed) {
      std::vector<std::int8_t> data(elems);
      std::memcpy(data.data(), payload.data(), elems);
      c.tensors.push_back({std::move(name), QTensor(std::move(shape), std::move(data), FxFormat(frac))});
    } else {
      std::vector<double> data(elems);
      for (std::size_t k = 0; k < elems; ++k) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[k * 4 + static_cast<std::size_t>(b)]) << (8 * b);
        const float f = std::bit_cast<float>(bits);
        if (!std::isfinite(f)) throw FormatError("non-finite value in '" + name + "'", entry_at);
        data[k] = f;
      }
      c.tensors.push_back({std::move(name), FTensor(std::move(shape), std::move(data))});
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor", r.offset());
  return c;
}

WeightContainer read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot rename onto '" + path.string() + "': " + ec.message());
  }
}

void write_container(const std::filesystem::path& path, const WeightContainer& c) {
  const auto bytes = encode_container(c);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

bool keeps_real_precision(const std::string& name) {
  const auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".bias") || ends_with(".scale");
}

namespace {

void put(WeightContainer& c, std::string name, const Param& p, bool quantized) {
  if (quantized) {
    c.tensors.push_back({std::move(name), p.quant});
  } else {
    c.tensors.push_back({std::move(name), p.real});
  }
}

void put_real(WeightContainer& c, std::string name, const FTensor& t) { c.tensors.push_back({std::move(name), t}); }

void put_linear(WeightContainer& c, const std::string& prefix, const Linear& l, bool quantized) {
  put(c, prefix + ".weight", l.weight, quantized);
  put_real(c, prefix + ".bias", l.bias);
}

Param get_param(const WeightContainer& c, const std::string& name) {
  const NamedTensor* t = c.find(name);
  if (!t) throw std::invalid_argument("container: missing tensor '" + name + "'");
  if (const auto* q = std::get_if<QTensor>(&t->value)) return Param::from_quant(*q);
  return Param::from_real(std::get<FTensor>(t->value));
}

Linear get_linear(const WeightContainer& c, const std::string& prefix) {
  return {get_param(c, prefix + ".weight"), c.real(prefix + ".bias")};
}

}  // namespace

WeightContainer weights_to_container(const ModelWeights& w, bool quantized) {
  WeightContainer c;
  put_linear(c, "patch_embed", w.patch_embed, quantized);
  put(c, "pos_embed", w.pos_embed, quantized);
  put(c, "cls_token", w.cls_token, quantized);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    const auto& b = w.blocks[i];
    const std::string p = "blocks." + std::to_string(i + 1);
    put_real(c, p + ".ln1.scale", b.ln1_scale);
    put_real(c, p + ".ln1.bias", b.ln1_bias);
    put_linear(c, p + ".q", b.q, quantized);
    put_linear(c, p + ".k", b.k, quantized);
    put_linear(c, p + ".v", b.v, quantized);
    put_linear(c, p + ".proj", b.proj, quantized);
    put_real(c, p + ".ln2.scale", b.ln2_scale);
    put_real(c, p + ".ln2.bias", b.ln2_bias);
    put_linear(c, p + ".fc1", b.fc1, quantized);
    put_linear(c, p + ".fc2", b.fc2, quantized);
  }
  put_real(c, "norm.scale", w.norm_scale);
  put_real(c, "norm.bias", w.norm_bias);
  put_linear(c, "head", w.head, quantized);
  for (const auto& [block, s] : w.selectors) {
    const std::string p = "selectors." + std::to_string(block);
    for (std::size_t h = 0; h < s.local.size(); ++h) {
      put_linear(c, p + ".local." + std::to_string(h), s.local[h], quantized);
      put_linear(c, p + ".score_hidden." + std::to_string(h), s.score_hidden[h], quantized);
      put_linear(c, p + ".score_out." + std::to_string(h), s.score_out[h], quantized);
    }
    put_linear(c, p + ".attention", s.head_attention, quantized);
  }
  return c;
}

ModelWeights weights_from_container(const WeightContainer& c, const ViTConfig& cfg) {
  cfg.validate();
  ModelWeights w;
  w.patch_embed = get_linear(c, "patch_embed");
  w.pos_embed = get_param(c, "pos_embed");
  w.cls_token = get_param(c, "cls_token");
  for (int i = 1; i <= cfg.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i);
    BlockWeights b;
    b.ln1_scale = c.real(p + ".ln1.scale");
    b.ln1_bias = c.real(p + ".ln1.bias");
    b.q = get_linear(c, p + ".q");
    b.k = get_linear(c, p + ".k");
    b.v = get_linear(c, p + ".v");
    b.proj = get_linear(c, p + ".proj");
    b.ln2_scale = c.real(p + ".ln2.scale");
    b.ln2_bias = c.real(p + ".ln2.bias");
    b.fc1 = get_linear(c, p + ".fc1");
    b.fc2 = get_linear(c, p + ".fc2");
    w.blocks.push_back(std::move(b));
  }
  w.norm_scale = c.real("norm.scale");
  w.norm_bias = c.real("norm.bias");
  w.head = get_linear(c, "head");

  static const std::regex kSelector(R"(selectors\.(\d+)\.attention\.weight)");
  for (const auto& t : c.tensors) {
    std::smatch m;
    if (!std::regex_match(t.name, m, kSelector)) continue;
    const int block = std::stoi(m[1].str());
    const std::string p = "selectors." + std::to_string(block);
    SelectorParams s;
    s.heads = cfg.heads;
    for (int h = 0; h < cfg.heads; ++h) {
      s.local.push_back(get_linear(c, p + ".local." + std::to_string(h)));
      s.score_hidden.push_back(get_linear(c, p + ".score_hidden." + std::to_string(h)));
      s.score_out.push_back(get_linear(c, p + ".score_out." + std::to_string(h)));
    }
    s.head_attention = get_linear(c, p + ".attention");
    w.selectors.emplace(block, std::move(s));
  }
  w.validate(cfg);
  return w;
}

}  // namespace heatvit
