#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "zootune/backbone.hpp"
#include "zootune/errors.hpp"
#include "zootune/fs_util.hpp"
#include "zootune/tensor.hpp"
#include "zootune/zoo_layers.hpp"

// ZOOC binary container: magic "ZOOC", version u32 LE, metadata block (count,
// then length-prefixed UTF-8 key/value pairs), tensor count, then per tensor
// a u16-prefixed name, dtype byte (0 single / 1 double), ndim byte, u32 dims
// and raw little-endian values. Round-trips are bit-exact.

namespace zootune {

struct NamedTensor {
  std::string name;
  DType dtype = DType::f32;
  std::vector<int> dims;
  // Held in double regardless of dtype; a single-precision payload survives
  // the widening exactly.
  std::vector<double> values;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<NamedTensor> tensors;

  void set_meta(const std::string& key, const std::string& value) {
    for (auto& kv : meta) {
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    }
    meta.emplace_back(key, value);
  }

  std::optional<std::string> get_meta(const std::string& key) const {
    for (const auto& kv : meta) {
      if (kv.first == key) return kv.second;
    }
    return std::nullopt;
  }

  std::string require_meta(const std::string& key) const {
    auto v = get_meta(key);
    if (!v) throw FormatError("checkpoint metadata is missing key '" + key + "'");
    return *v;
  }

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > bytes.size()) {
      throw TruncationError(std::string("checkpoint ends inside ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(bytes[pos++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) {
      v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[pos++])) << (8 * i);
    }
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos++])) << (8 * i);
    }
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes[pos++])) << (8 * i);
    }
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out;
  out += "ZOOC";
  detail::put_u32(out, ckpt.version);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    detail::put_u32(out, static_cast<std::uint32_t>(k.size()));
    out += k;
    detail::put_u32(out, static_cast<std::uint32_t>(v.size()));
    out += v;
  }
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::set<std::string> seen;
  for (const NamedTensor& t : ckpt.tensors) {
    if (!seen.insert(t.name).second) {
      throw IntegrityError("duplicate tensor name '" + t.name + "'");
    }
    if (t.name.size() > 0xffff) {
      throw FormatError("tensor name too long: '" + t.name.substr(0, 32) + "...'");
    }
    detail::put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    out.push_back(static_cast<char>(t.dtype));
    std::size_t count = 1;
    for (int d : t.dims) {
      if (d <= 0) throw FormatError("tensor '" + t.name + "' has non-positive dim");
      count *= static_cast<std::size_t>(d);
    }
    if (t.dims.empty() || t.dims.size() > 0xff) {
      throw FormatError("tensor '" + t.name + "' has invalid rank");
    }
    if (count != t.values.size()) {
      throw FormatError("tensor '" + t.name + "' dims do not match value count");
    }
    out.push_back(static_cast<char>(t.dims.size()));
    for (int d : t.dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
    if (t.dtype == DType::f32) {
      for (double v : t.values) {
        detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    } else {
      for (double v : t.values) {
        detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  detail::ByteReader r{bytes};
  std::string magic = r.str(4, "magic");
  if (magic != "ZOOC") {
    throw FormatError("bad magic '" + magic + "', expected 'ZOOC'");
  }
  Checkpoint ckpt;
  ckpt.version = r.u32("version");
  if (ckpt.version != 1) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(ckpt.version));
  }
  std::uint32_t meta_count = r.u32("metadata count");
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::uint32_t klen = r.u32("metadata key length");
    std::string k = r.str(klen, "metadata key");
    std::uint32_t vlen = r.u32("metadata value length");
    std::string v = r.str(vlen, "metadata value");
    ckpt.meta.emplace_back(std::move(k), std::move(v));
  }
  std::uint32_t tensor_count = r.u32("tensor count");
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    NamedTensor t;
    std::uint16_t nlen = r.u16("tensor name length");
    t.name = r.str(nlen, "tensor name");
    if (!seen.insert(t.name).second) {
      throw IntegrityError("duplicate tensor name '" + t.name + "'");
    }
    std::uint8_t dtype = r.u8("tensor dtype");
    if (dtype > 1) {
      throw FormatError("tensor '" + t.name + "' has unknown dtype " +
                        std::to_string(dtype));
    }
    t.dtype = static_cast<DType>(dtype);
    std::uint8_t ndim = r.u8("tensor rank");
    if (ndim == 0) throw FormatError("tensor '" + t.name + "' has rank 0");
    std::size_t count = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      std::uint32_t dim = r.u32("tensor dim");
      if (dim == 0) throw FormatError("tensor '" + t.name + "' has zero dim");
      t.dims.push_back(static_cast<int>(dim));
      count *= dim;
    }
    t.values.reserve(count);
    if (t.dtype == DType::f32) {
      for (std::size_t j = 0; j < count; ++j) {
        t.values.push_back(static_cast<double>(
            std::bit_cast<float>(r.u32("tensor values"))));
      }
    } else {
      for (std::size_t j = 0; j < count; ++j) {
        t.values.push_back(std::bit_cast<double>(r.u64("tensor values")));
      }
    }
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  atomic_write_file(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path));
}

template <typename T>
NamedTensor to_named(const std::string& name, const Tensor<T>& t) {
  NamedTensor nt;
  nt.name = name;
  nt.dtype = dtype_of<T>();
  nt.dims = t.shape();
  nt.values.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    nt.values.push_back(static_cast<double>(t[i]));
  }
  return nt;
}

template <typename T>
Tensor<T> from_named(const NamedTensor& nt) {
  std::vector<T> data;
  data.reserve(nt.values.size());
  for (double v : nt.values) data.push_back(static_cast<T>(v));
  return Tensor<T>(nt.dims, std::move(data));
}

template <typename T>
std::map<std::string, Tensor<T>> tensor_map(const Checkpoint& ckpt) {
  std::map<std::string, Tensor<T>> out;
  for (const NamedTensor& t : ckpt.tensors) out[t.name] = from_named<T>(t);
  return out;
}

// ---- backbone config metadata ----

inline BackboneConfig parse_config_string(const std::string& s) {
  BackboneConfig c;
  c.stages.clear();
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) {
    throw FormatError("bad backbone descriptor '" + s + "': " + why);
  };
  auto to_int = [&](const std::string& v) {
    try {
      std::size_t used = 0;
      int x = std::stoi(v, &used);
      if (used != v.size()) fail("stray characters in number '" + v + "'");
      return x;
    } catch (const std::exception&) {
      fail("invalid number '" + v + "'");
      return 0;
    }
  };
  while (pos <= s.size()) {
    std::size_t end = s.find(';', pos);
    std::string item = s.substr(pos, end == std::string::npos ? end : end - pos);
    pos = end == std::string::npos ? s.size() + 1 : end + 1;
    if (item.empty()) continue;
    std::size_t eq = item.find('=');
    if (eq == std::string::npos) fail("missing '=' in '" + item + "'");
    std::string key = item.substr(0, eq);
    std::string value = item.substr(eq + 1);
    if (key == "in") {
      c.in_channels = to_int(value);
    } else if (key == "stem") {
      c.stem_channels = to_int(value);
    } else if (key == "classes") {
      c.classes = to_int(value);
    } else if (key == "side") {
      c.side = to_int(value);
    } else if (key == "alignpw") {
      c.align_pointwise = value == "1";
    } else if (key == "stages") {
      std::size_t p = 0;
      while (p < value.size()) {
        std::size_t comma = value.find(',', p);
        std::string part =
            value.substr(p, comma == std::string::npos ? comma : comma - p);
        p = comma == std::string::npos ? value.size() : comma + 1;
        std::size_t x = part.find('x');
        if (x == std::string::npos) fail("stage '" + part + "' is not BLOCKSxCHANNELS");
        c.stages.push_back(
            {to_int(part.substr(0, x)), to_int(part.substr(x + 1))});
      }
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  validate_config(c);
  return c;
}

inline const char* kind_plain = "plain";
inline const char* kind_zoo = "zoo";

template <typename T>
Checkpoint model_to_checkpoint(Model<T>& m, bool include_head = true) {
  Checkpoint ckpt;
  ckpt.set_meta("kind", m.is_zoo ? kind_zoo : kind_plain);
  ckpt.set_meta("backbone", config_string(m.config));
  ckpt.set_meta("config_digest", config_digest(m.config));
  ckpt.set_meta("body_digest", body_digest(m.config));
  if (m.is_zoo) {
    ckpt.set_meta("zoo_size", std::to_string(m.zoo_size));
    GateMode mode = GateMode::per_sample;
    bool align_enabled = false;
    std::vector<double> frozen;
    m.for_each_conv([&](const ConvUnit<T>& c, const BnUnit<T>&) {
      if (!c.is_zoo) return;
      mode = c.zoo.mode;
      if (c.zoo.kernel() > 1) align_enabled = c.zoo.align_enabled;
      if (!c.zoo.frozen_gates.empty()) frozen = c.zoo.frozen_gates;
    });
    ckpt.set_meta("gate_mode", gate_mode_name(mode));
    ckpt.set_meta("align_enabled", align_enabled ? "1" : "0");
    if (!frozen.empty()) {
      NamedTensor ft;
      ft.name = "frozen.gates";
      ft.dtype = DType::f64;
      ft.dims = {static_cast<int>(frozen.size())};
      ft.values = frozen;
      ckpt.tensors.push_back(std::move(ft));
    }
  }
  for (auto& [name, t] : m.named_tensors()) {
    if (!include_head && name.rfind("head.", 0) == 0) continue;
    ckpt.tensors.push_back(to_named(name, *t));
  }
  return ckpt;
}

inline GateMode parse_gate_mode(const std::string& s) {
  if (s == "per_sample") return GateMode::per_sample;
  if (s == "batch_average") return GateMode::batch_average;
  if (s == "frozen") return GateMode::frozen;
  throw FormatError("unknown gate mode '" + s + "'");
}

template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt) {
  BackboneConfig config = parse_config_string(ckpt.require_meta("backbone"));
  std::string kind = ckpt.require_meta("kind");
  if (kind == kind_plain) {
    return load_plain_from_map(config, tensor_map<T>(ckpt));
  }
  if (kind != kind_zoo) throw FormatError("unknown checkpoint kind '" + kind + "'");
  int m = std::stoi(ckpt.require_meta("zoo_size"));
  if (m < 1) throw FormatError("zoo_size must be positive");
  GateMode mode = parse_gate_mode(ckpt.require_meta("gate_mode"));
  bool align_enabled = ckpt.require_meta("align_enabled") == "1";

  // Build a correctly shaped zoo skeleton, then overwrite every tensor.
  Model<T> plain = make_skeleton<T>(config);
  std::map<std::string, Tensor<T>> zeros;
  for (auto& [name, t] : plain.named_tensors()) {
    if (name.rfind("head.", 0) == 0) continue;
    zeros[name] = *t;
  }
  std::vector<std::map<std::string, Tensor<T>>> dummy(static_cast<std::size_t>(m),
                                                      zeros);
  Model<T> model = convert_to_zoo(config, dummy, 0,
                                  mode == GateMode::frozen ? GateMode::per_sample : mode,
                                  align_enabled);
  for (auto& [name, dst] : model.named_tensors()) {
    const NamedTensor* src = ckpt.find(name);
    if (src == nullptr) {
      throw FormatError("checkpoint is missing tensor '" + name + "'");
    }
    Tensor<T> t = from_named<T>(*src);
    if (!t.same_shape(*dst)) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " +
                        shape_str(t.shape()) + ", expected " +
                        shape_str(dst->shape()));
    }
    *dst = std::move(t);
  }
  if (mode == GateMode::frozen) {
    const NamedTensor* ft = ckpt.find("frozen.gates");
    if (ft == nullptr) {
      throw FormatError("frozen-mode checkpoint is missing tensor 'frozen.gates'");
    }
    model.for_each_conv([&](ConvUnit<T>& c, BnUnit<T>&) {
      if (c.is_zoo) set_frozen_gates(c.zoo, ft->values);
    });
  }
  return model;
}

// ---- temporal ensemble ----

inline Checkpoint te_to_checkpoint(const TEState& te) {
  Checkpoint ckpt;
  ckpt.set_meta("kind", "te");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", te.lambda);
  ckpt.set_meta("lambda", buf);
  for (const auto& [layer, values] : te.values) {
    NamedTensor t;
    t.name = layer;
    t.dtype = DType::f64;
    t.dims = {static_cast<int>(values.size())};
    t.values = values;
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

inline TEState te_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.require_meta("kind") != "te") {
    throw FormatError("checkpoint does not hold temporal-ensemble values");
  }
  TEState te;
  te.lambda = std::stod(ckpt.require_meta("lambda"));
  for (const NamedTensor& t : ckpt.tensors) {
    te.values[t.name] = t.values;
  }
  return te;
}

}  // namespace zootune
