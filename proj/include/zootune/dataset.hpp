#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "zootune/checkpoint.hpp"
#include "zootune/errors.hpp"
#include "zootune/format.hpp"
#include "zootune/fs_util.hpp"
#include "zootune/rng.hpp"
#include "zootune/tensor.hpp"

namespace zootune {

// Latent factors of the synthetic pattern family. Each factor has four
// possible values; a task activates a subset of factors and a subset of
// values per factor, and the class label is the mixed-radix index over the
// active choices. Inactive factors become nuisance variation.
enum class Factor { shape = 0, orientation = 1, color = 2 };

inline const char* factor_name(Factor f) {
  switch (f) {
    case Factor::shape: return "shape";
    case Factor::orientation: return "orientation";
    case Factor::color: return "color";
  }
  throw ValueError("unknown factor");
}

inline Factor factor_from_name(const std::string& s) {
  if (s == "shape") return Factor::shape;
  if (s == "orientation") return Factor::orientation;
  if (s == "color") return Factor::color;
  throw ConfigError("unknown factor name: " + s);
}

struct FactorSpec {
  Factor factor;
  std::vector<int> values;  // subset of {0,1,2,3}, nonempty, unique
};

struct TaskSpec {
  std::vector<FactorSpec> factors;  // active factors; order fixes the radix order
  double noise = 0.1;               // in [0, 0.5]; 0 means fully deterministic renders
  int samples_per_class = 100;
  std::uint64_t seed = 1;
  int side = 16;
  int channels = 3;  // 1 or 3
};

inline void validate_task_spec(const TaskSpec& spec) {
  if (spec.factors.empty()) throw ConfigError("task needs at least one active factor");
  bool seen[3] = {false, false, false};
  for (const auto& fs : spec.factors) {
    int fi = static_cast<int>(fs.factor);
    if (fi < 0 || fi > 2) throw ConfigError("invalid factor id");
    if (seen[fi]) throw ConfigError(std::string("duplicate factor: ") + factor_name(fs.factor));
    seen[fi] = true;
    if (fs.values.empty()) throw ConfigError(std::string("factor has no values: ") + factor_name(fs.factor));
    bool val_seen[4] = {false, false, false, false};
    for (int v : fs.values) {
      if (v < 0 || v > 3) throw ConfigError("factor value out of range [0,3]");
      if (val_seen[v]) throw ConfigError("duplicate factor value");
      val_seen[v] = true;
    }
  }
  if (!(spec.noise >= 0.0 && spec.noise <= 0.5)) throw ConfigError("noise must lie in [0, 0.5]");
  if (spec.samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
  if (spec.side < 8) throw ConfigError("side must be >= 8");
  if (spec.channels != 1 && spec.channels != 3) throw ConfigError("channels must be 1 or 3");
}

inline int task_classes(const TaskSpec& spec) {
  long long n = 1;
  for (const auto& fs : spec.factors) {
    n *= static_cast<long long>(fs.values.size());
    if (n > 4096) throw ConfigError("class count too large");
  }
  return static_cast<int>(n);
}

// Canonical text form: "shape:0123,orientation:01". Digits select factor values.
inline std::string factors_string(const std::vector<FactorSpec>& factors) {
  std::string out;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (i) out += ',';
    out += factor_name(factors[i].factor);
    out += ':';
    for (int v : factors[i].values) out += static_cast<char>('0' + v);
  }
  return out;
}

inline std::vector<FactorSpec> parse_factors(const std::string& text) {
  std::vector<FactorSpec> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string::npos) end = text.size();
    std::string part = text.substr(pos, end - pos);
    std::size_t colon = part.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= part.size())
      throw ConfigError("malformed factor spec (want name:digits): " + part);
    FactorSpec fs;
    fs.factor = factor_from_name(part.substr(0, colon));
    for (std::size_t i = colon + 1; i < part.size(); ++i) {
      char c = part[i];
      if (c < '0' || c > '3') throw ConfigError("factor value must be a digit 0-3");
      fs.values.push_back(c - '0');
    }
    out.push_back(std::move(fs));
    pos = end + 1;
  }
  if (out.empty()) throw ConfigError("empty factor spec");
  return out;
}

struct Dataset {
  Tensor<float> images;  // [N, C, S, S], values in [0, 1]
  std::vector<int> labels;
  int classes = 0;
  std::string provenance;

  int n() const { return images.empty() ? 0 : static_cast<int>(images.dim(0)); }
  int channels() const { return static_cast<int>(images.dim(1)); }
  int side() const { return static_cast<int>(images.dim(2)); }
};

namespace detail {

// Per-value render ingredients.
inline double shape_mask(int shape, double dx, double dy, double r) {
  double d2 = dx * dx + dy * dy;
  switch (shape) {
    case 0: return d2 <= r * r ? 1.0 : 0.0;                                  // disk
    case 1: return (std::fabs(dx) <= r * 0.85 && std::fabs(dy) <= r * 0.85) ? 1.0 : 0.0;  // square
    case 2: return (std::fabs(dx) + std::fabs(dy)) <= r * 1.2 ? 1.0 : 0.0;   // diamond
    case 3: {                                                                // ring
      double d = std::sqrt(d2);
      return (d <= r && d >= 0.55 * r) ? 1.0 : 0.0;
    }
  }
  throw ValueError("invalid shape value");
}

inline double stripe_value(int orientation, double dx, double dy) {
  static const double kPi = 3.14159265358979323846;
  double theta = orientation * (kPi / 4.0);  // 0, 45, 90, 135 degrees
  double u = dx * std::cos(theta) + dy * std::sin(theta);
  return 0.5 + 0.5 * std::sin(2.0 * kPi * u / 4.0);
}

inline void color_tint(int color, double tint[3]) {
  switch (color) {
    case 0: tint[0] = 1.0; tint[1] = 0.2; tint[2] = 0.2; return;  // red
    case 1: tint[0] = 0.2; tint[1] = 1.0; tint[2] = 0.2; return;  // green
    case 2: tint[0] = 0.2; tint[1] = 0.2; tint[2] = 1.0; return;  // blue
    case 3: tint[0] = 1.0; tint[1] = 1.0; tint[2] = 0.2; return;  // yellow
  }
  throw ValueError("invalid color value");
}

// Grayscale stand-in for tints when rendering single-channel images.
inline double gray_level(int color) {
  static const double levels[4] = {0.4, 0.6, 0.8, 1.0};
  return levels[color];
}

inline void render_sample(float* out, int channels, int side, int shape, int orientation,
                          int color, double cx, double cy, double r) {
  double tint[3];
  if (channels == 3) color_tint(color, tint);
  double gray = channels == 1 ? gray_level(color) : 0.0;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double dx = x - cx;
      double dy = y - cy;
      double m = shape_mask(shape, dx, dy, r);
      double s = stripe_value(orientation, dx, dy);
      double intensity = m > 0.0 ? 0.25 + 0.75 * s : 0.05;
      for (int c = 0; c < channels; ++c) {
        double w = channels == 3 ? tint[c] : gray;
        double v = m > 0.0 ? intensity * w : intensity;
        out[(c * side + y) * side + x] = static_cast<float>(v);
      }
    }
  }
}

}  // namespace detail

// Deterministic synthetic task. With noise == 0 every per-sample random choice
// (nuisance factors, position jitter, pixel noise) is suppressed, so renders
// within a class are bit-identical. With noise > 0, inactive factors vary
// uniformly per sample, the pattern center and radius jitter, and uniform
// pixel noise of amplitude `noise` is added before clamping to [0, 1].
inline Dataset gen_synthetic_task(const TaskSpec& spec) {
  validate_task_spec(spec);
  const int classes = task_classes(spec);
  const int n = classes * spec.samples_per_class;
  const int s = spec.side;
  const int ch = spec.channels;

  Dataset d;
  d.images = Tensor<float>({n, ch, s, s});
  d.labels.resize(static_cast<std::size_t>(n));
  d.classes = classes;

  Rng rng(sub_seed(spec.seed, "synth"));
  const bool randomized = spec.noise > 0.0;

  std::size_t idx = 0;
  for (int c = 0; c < classes; ++c) {
    // Decode the mixed-radix class index; first factor is most significant.
    int value_of[3] = {0, 0, 0};  // defaults for inactive factors at noise == 0
    int rem = c;
    for (std::size_t fi = spec.factors.size(); fi-- > 0;) {
      const auto& fs = spec.factors[fi];
      int vi = rem % static_cast<int>(fs.values.size());
      rem /= static_cast<int>(fs.values.size());
      value_of[static_cast<int>(fs.factor)] = fs.values[static_cast<std::size_t>(vi)];
    }
    bool active[3] = {false, false, false};
    for (const auto& fs : spec.factors) active[static_cast<int>(fs.factor)] = true;

    for (int k = 0; k < spec.samples_per_class; ++k, ++idx) {
      int shape = value_of[0];
      int orientation = value_of[1];
      int color = value_of[2];
      double cx = 0.5 * (s - 1);
      double cy = 0.5 * (s - 1);
      double r = 0.35 * s;
      if (randomized) {
        if (!active[0]) shape = static_cast<int>(rng.uniform_int(4));
        if (!active[1]) orientation = static_cast<int>(rng.uniform_int(4));
        if (!active[2]) color = static_cast<int>(rng.uniform_int(4));
        cx += rng.uniform(-2.0, 2.0);
        cy += rng.uniform(-2.0, 2.0);
        r *= rng.uniform(0.85, 1.15);
      }
      float* out = d.images.data() + idx * static_cast<std::size_t>(ch) * s * s;
      detail::render_sample(out, ch, s, shape, orientation, color, cx, cy, r);
      if (randomized) {
        for (int p = 0; p < ch * s * s; ++p) {
          double v = out[p] + rng.uniform(-spec.noise, spec.noise);
          out[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
      d.labels[idx] = c;
    }
  }

  d.provenance = "synth factors=" + factors_string(spec.factors) +
                 " noise=" + format_g(spec.noise) +
                 " spc=" + std::to_string(spec.samples_per_class) +
                 " seed=" + std::to_string(spec.seed) + " side=" + std::to_string(s) +
                 " ch=" + std::to_string(ch);
  return d;
}

namespace detail {

inline Dataset subset(const Dataset& d, const std::vector<int>& idx) {
  const int c = d.images.dim(1), h = d.images.dim(2), w = d.images.dim(3);
  const std::size_t stride = static_cast<std::size_t>(c) * h * w;
  Dataset out;
  out.images = Tensor<float>({static_cast<int>(idx.size()), c, h, w});
  out.labels.resize(idx.size());
  out.classes = d.classes;
  out.provenance = d.provenance;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float* src = d.images.data() + static_cast<std::size_t>(idx[i]) * stride;
    std::copy(src, src + stride, out.images.data() + i * stride);
    out.labels[i] = d.labels[static_cast<std::size_t>(idx[i])];
  }
  return out;
}

}  // namespace detail

// Stratified split: per class, the first floor(train_fraction * count) samples
// in dataset order go to train, the rest to test. Deterministic, disjoint, and
// exhaustive by construction.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& d, double train_fraction = 0.8) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValueError("train_fraction must lie in (0, 1)");
  if (d.n() == 0) throw ValueError("cannot split an empty dataset");
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(d.classes));
  for (int i = 0; i < d.n(); ++i) {
    int lbl = d.labels[static_cast<std::size_t>(i)];
    if (lbl < 0 || lbl >= d.classes) throw ValueError("label out of range in dataset");
    by_class[static_cast<std::size_t>(lbl)].push_back(i);
  }
  std::vector<int> train_idx, test_idx;
  for (const auto& members : by_class) {
    std::size_t cut = static_cast<std::size_t>(train_fraction * static_cast<double>(members.size()));
    for (std::size_t i = 0; i < members.size(); ++i)
      (i < cut ? train_idx : test_idx).push_back(members[i]);
  }
  return {detail::subset(d, train_idx), detail::subset(d, test_idx)};
}

// Assemble a training batch in the compute precision.
template <typename T>
inline Tensor<T> gather_images(const Dataset& d, const std::vector<int>& idx) {
  const int c = d.images.dim(1), h = d.images.dim(2), w = d.images.dim(3);
  const std::size_t stride = static_cast<std::size_t>(c) * h * w;
  Tensor<T> out({static_cast<int>(idx.size()), c, h, w});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float* src = d.images.data() + static_cast<std::size_t>(idx[i]) * stride;
    T* dst = out.data() + i * stride;
    for (std::size_t p = 0; p < stride; ++p) dst[p] = static_cast<T>(src[p]);
  }
  return out;
}

inline std::vector<int> gather_labels(const Dataset& d, const std::vector<int>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = d.labels[static_cast<std::size_t>(idx[i])];
  return out;
}

// ---- IDX image/label container (big-endian, magic 0x803 / 0x801) ----

namespace detail {

inline std::uint32_t read_be32(const std::string& bytes, std::size_t off) {
  if (off + 4 > bytes.size()) throw TruncationError("idx file truncated");
  auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + i])); };
  return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

inline void put_be32(std::string& bytes, std::uint32_t v) {
  bytes.push_back(static_cast<char>((v >> 24) & 0xff));
  bytes.push_back(static_cast<char>((v >> 16) & 0xff));
  bytes.push_back(static_cast<char>((v >> 8) & 0xff));
  bytes.push_back(static_cast<char>(v & 0xff));
}

}  // namespace detail

// Reads an IDX image/label pair into a single-channel dataset with pixel
// values scaled by 1/255 (so a 255 byte maps to exactly 1.0f).
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::string img = read_file(images_path);
  std::string lbl = read_file(labels_path);

  if (detail::read_be32(img, 0) != 0x00000803u)
    throw FormatError("bad idx image magic in " + images_path);
  std::uint32_t n = detail::read_be32(img, 4);
  std::uint32_t rows = detail::read_be32(img, 8);
  std::uint32_t cols = detail::read_be32(img, 12);
  if (rows != cols) throw FormatError("idx images must be square");
  if (rows == 0 || n == 0) throw FormatError("idx image header has zero dimension");
  std::size_t need = 16 + static_cast<std::size_t>(n) * rows * cols;
  if (img.size() < need) throw TruncationError("idx image payload truncated");

  if (detail::read_be32(lbl, 0) != 0x00000801u)
    throw FormatError("bad idx label magic in " + labels_path);
  std::uint32_t ln = detail::read_be32(lbl, 4);
  if (ln != n) throw FormatError("idx image/label counts differ");
  if (lbl.size() < 8 + static_cast<std::size_t>(ln)) throw TruncationError("idx label payload truncated");

  Dataset d;
  d.images = Tensor<float>({static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
  d.labels.resize(n);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    int v = static_cast<unsigned char>(lbl[8 + i]);
    d.labels[i] = v;
    max_label = std::max(max_label, v);
  }
  d.classes = max_label + 1;
  const unsigned char* px = reinterpret_cast<const unsigned char*>(img.data()) + 16;
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * rows * cols; ++i)
    d.images[i] = static_cast<float>(px[i]) / 255.0f;
  d.provenance = "idx " + images_path;
  return d;
}

// Writes a single-channel dataset as an IDX pair, quantizing pixels to bytes.
// Round-trips exactly for data whose pixels are multiples of 1/255.
inline void write_idx(const Dataset& d, const std::string& images_path,
                      const std::string& labels_path) {
  if (d.channels() != 1) throw ValueError("idx export requires single-channel images");
  if (d.side() == 0 || d.n() == 0) throw ValueError("cannot export an empty dataset");
  std::string img;
  detail::put_be32(img, 0x00000803u);
  detail::put_be32(img, static_cast<std::uint32_t>(d.n()));
  detail::put_be32(img, static_cast<std::uint32_t>(d.side()));
  detail::put_be32(img, static_cast<std::uint32_t>(d.side()));
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    double v = std::clamp(static_cast<double>(d.images[i]), 0.0, 1.0);
    img.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  std::string lbl;
  detail::put_be32(lbl, 0x00000801u);
  detail::put_be32(lbl, static_cast<std::uint32_t>(d.n()));
  for (int v : d.labels) {
    if (v < 0 || v > 255) throw ValueError("idx labels must fit in one byte");
    lbl.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  atomic_write_file(images_path, img);
  atomic_write_file(labels_path, lbl);
}

// ---- dataset <-> checkpoint container ----

inline Checkpoint dataset_to_checkpoint(const Dataset& d) {
  Checkpoint ck;
  ck.set_meta("kind", "dataset");
  ck.set_meta("classes", std::to_string(d.classes));
  ck.set_meta("provenance", d.provenance);
  NamedTensor imgs;
  imgs.name = "images";
  imgs.dtype = DType::f32;
  for (std::size_t i = 0; i < d.images.ndim(); ++i) imgs.dims.push_back(d.images.dim(i));
  imgs.values.assign(d.images.data(), d.images.data() + d.images.size());
  ck.tensors.push_back(std::move(imgs));
  NamedTensor lbls;
  lbls.name = "labels";
  lbls.dtype = DType::f32;
  lbls.dims = {static_cast<int>(d.labels.size())};
  lbls.values.assign(d.labels.begin(), d.labels.end());
  ck.tensors.push_back(std::move(lbls));
  return ck;
}

inline Dataset dataset_from_checkpoint(const Checkpoint& ck) {
  if (ck.require_meta("kind") != "dataset") throw FormatError("checkpoint is not a dataset");
  const NamedTensor* imgs = ck.find("images");
  const NamedTensor* lbls = ck.find("labels");
  if (!imgs || !lbls) throw FormatError("dataset checkpoint missing images or labels");
  if (imgs->dims.size() != 4) throw FormatError("dataset images must be 4-d");
  if (lbls->dims.size() != 1 || lbls->dims[0] != imgs->dims[0])
    throw FormatError("dataset labels must be 1-d and match image count");
  Dataset d;
  d.classes = std::stoi(ck.require_meta("classes"));
  if (d.classes < 1) throw FormatError("dataset class count must be positive");
  d.provenance = ck.get_meta("provenance").value_or("");
  d.images = Tensor<float>(imgs->dims);
  for (std::size_t i = 0; i < imgs->values.size(); ++i)
    d.images[i] = static_cast<float>(imgs->values[i]);
  d.images.require_finite("dataset images");
  d.labels.resize(lbls->values.size());
  for (std::size_t i = 0; i < lbls->values.size(); ++i) {
    double v = lbls->values[i];
    int iv = static_cast<int>(v);
    if (static_cast<double>(iv) != v || iv < 0 || iv >= d.classes)
      throw FormatError("dataset label out of range");
    d.labels[i] = iv;
  }
  return d;
}

inline void save_dataset(const Dataset& d, const std::string& path) {
  save_checkpoint(dataset_to_checkpoint(d), path);
}

inline Dataset load_dataset(const std::string& path) {
  return dataset_from_checkpoint(load_checkpoint(path));
}

}  // namespace zootune
