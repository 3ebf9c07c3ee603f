#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "zootune/errors.hpp"
#include "zootune/graph.hpp"
#include "zootune/rng.hpp"
#include "zootune/tensor.hpp"
#include "zootune/zoo_layers.hpp"

// A small residual convolutional classifier: stem conv, stages of residual
// blocks, global average pooling, affine head. Every convolution can be
// either a plain layer or an adaptive-aggregation layer over a zoo of
// sources; batch norms and the head are always single target-owned layers.

namespace zootune {

inline constexpr double kBnMomentum = 0.1;
inline constexpr double kBnEps = 1e-5;

struct StageSpec {
  int blocks = 0;
  int channels = 0;
};

struct BackboneConfig {
  int in_channels = 3;
  int stem_channels = 16;
  std::vector<StageSpec> stages = {{2, 16}, {2, 32}};
  int classes = 8;
  int side = 16;
  // Whether 1x1 shortcut convolutions get channel alignment when converted
  // to zoo layers (spatial convolutions always do).
  bool align_pointwise = false;
};

inline void validate_config(const BackboneConfig& c) {
  if (c.in_channels < 1) throw ConfigError("input channels must be positive");
  if (c.stem_channels < 1) throw ConfigError("stem channels must be positive");
  if (c.stages.empty()) throw ConfigError("backbone needs at least one stage");
  for (const auto& s : c.stages) {
    if (s.blocks < 1 || s.channels < 1) {
      throw ConfigError("stage block and channel counts must be positive");
    }
  }
  if (c.classes < 2) throw ConfigError("classifier needs at least 2 classes");
  if (c.side < 1) throw ConfigError("image side must be positive");
}

inline std::string config_string(const BackboneConfig& c) {
  std::string s = "in=" + std::to_string(c.in_channels) +
                  ";stem=" + std::to_string(c.stem_channels) + ";stages=";
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(c.stages[i].blocks) + "x" + std::to_string(c.stages[i].channels);
  }
  s += ";classes=" + std::to_string(c.classes) + ";side=" + std::to_string(c.side) +
       ";alignpw=" + (c.align_pointwise ? "1" : "0");
  return s;
}

inline std::string config_digest(const BackboneConfig& c) {
  std::uint64_t h = fnv1a64(config_string(c));
  char buf[17];
  static const char* hex = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = hex[h & 0xf];
    h >>= 4;
  }
  buf[16] = '\0';
  return std::string(buf);
}

// The convolutional body shared across tasks: everything except the class
// count and the pointwise-alignment knob. Checkpoints from differently headed
// tasks are zoo-compatible exactly when their body digests match.
inline std::string body_string(const BackboneConfig& c) {
  std::string s = "in=" + std::to_string(c.in_channels) +
                  ";stem=" + std::to_string(c.stem_channels) + ";stages=";
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(c.stages[i].blocks) + "x" + std::to_string(c.stages[i].channels);
  }
  s += ";side=" + std::to_string(c.side);
  return s;
}

inline std::string body_digest(const BackboneConfig& c) {
  std::uint64_t h = fnv1a64(body_string(c));
  char buf[17];
  static const char* hex = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = hex[h & 0xf];
    h >>= 4;
  }
  buf[16] = '\0';
  return std::string(buf);
}

// A convolution slot: plain single weight, or a zoo layer.
template <typename T>
struct ConvUnit {
  std::string name;
  bool is_zoo = false;
  Tensor<T> weight;    // plain form, [c_out, c_in, k, k]
  AdaAggLayer<T> zoo;  // zoo form
  int stride = 1;
  int padding = 1;

  int c_out() const { return is_zoo ? zoo.c_out() : weight.dim(0); }
  int c_in() const { return is_zoo ? zoo.c_in() : weight.dim(1); }
  int kernel() const { return is_zoo ? zoo.kernel() : weight.dim(2); }
};

template <typename T>
struct BnUnit {
  std::string name;
  BnParams<T> p;
};

template <typename T>
struct ResBlock {
  ConvUnit<T> conv1;
  BnUnit<T> bn1;
  ConvUnit<T> conv2;
  BnUnit<T> bn2;
  bool has_down = false;
  ConvUnit<T> down_conv;
  BnUnit<T> down_bn;
};

enum class ParamGroup { source, align, gate, bn, head };

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  ParamGroup group;
};

template <typename T>
struct Model {
  BackboneConfig config;
  bool is_zoo = false;
  int zoo_size = 0;

  ConvUnit<T> stem;
  BnUnit<T> stem_bn;
  std::vector<std::vector<ResBlock<T>>> stages;
  Tensor<T> head_w;  // [classes, c_last]
  Tensor<T> head_b;  // [classes]

  int last_channels() const { return config.stages.back().channels; }

  template <typename Fn>
  void for_each_conv(Fn&& fn) {
    fn(stem, stem_bn);
    for (auto& stage : stages) {
      for (auto& block : stage) {
        fn(block.conv1, block.bn1);
        fn(block.conv2, block.bn2);
        if (block.has_down) fn(block.down_conv, block.down_bn);
      }
    }
  }
  template <typename Fn>
  void for_each_conv(Fn&& fn) const {
    const_cast<Model*>(this)->for_each_conv(
        [&](const ConvUnit<T>& c, const BnUnit<T>& b) { fn(c, b); });
  }

  // Trainable parameters in a stable order; running statistics excluded.
  std::vector<ParamRef<T>> trainable() {
    std::vector<ParamRef<T>> out;
    for_each_conv([&](ConvUnit<T>& c, BnUnit<T>& bn) {
      if (!c.is_zoo) {
        out.push_back({c.name + ".weight", &c.weight, ParamGroup::source});
      } else {
        for (int i = 0; i < c.zoo.m(); ++i) {
          out.push_back({c.name + ".src" + std::to_string(i) + ".weight",
                         &c.zoo.src_weights[static_cast<std::size_t>(i)],
                         ParamGroup::source});
        }
        for (int i = 0; i < static_cast<int>(c.zoo.aligns.size()); ++i) {
          out.push_back({c.name + ".align" + std::to_string(i),
                         &c.zoo.aligns[static_cast<std::size_t>(i)],
                         ParamGroup::align});
        }
        for (int i = 0; i < c.zoo.m(); ++i) {
          auto& g = c.zoo.gates[static_cast<std::size_t>(i)];
          std::string p = c.name + ".gate" + std::to_string(i) + ".";
          out.push_back({p + "reduce_w", &g.reduce_w, ParamGroup::gate});
          out.push_back({p + "reduce_b", &g.reduce_b, ParamGroup::gate});
          out.push_back({p + "expand_w", &g.expand_w, ParamGroup::gate});
          out.push_back({p + "expand_b", &g.expand_b, ParamGroup::gate});
        }
      }
      out.push_back({bn.name + ".gamma", &bn.p.gamma, ParamGroup::bn});
      out.push_back({bn.name + ".beta", &bn.p.beta, ParamGroup::bn});
    });
    out.push_back({"head.weight", &head_w, ParamGroup::head});
    out.push_back({"head.bias", &head_b, ParamGroup::head});
    return out;
  }

  // Everything that belongs in a checkpoint: trainables plus BN running
  // statistics, in a stable order.
  std::vector<std::pair<std::string, Tensor<T>*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (ParamRef<T>& p : trainable()) out.emplace_back(p.name, p.tensor);
    for_each_conv([&](ConvUnit<T>&, BnUnit<T>& bn) {
      out.emplace_back(bn.name + ".running_mean", &bn.p.running_mean);
      out.emplace_back(bn.name + ".running_var", &bn.p.running_var);
    });
    return out;
  }

  std::vector<std::string> zoo_layer_names() const {
    std::vector<std::string> names;
    for_each_conv([&](const ConvUnit<T>& c, const BnUnit<T>&) {
      if (c.is_zoo) names.push_back(c.name);
    });
    return names;
  }
};

namespace detail {

// Channel flow and strides of the residual structure, shared by builders.
struct BlockShape {
  int in_ch, out_ch, stride;
  bool has_down;
};

inline std::vector<std::vector<BlockShape>> block_shapes(const BackboneConfig& c) {
  std::vector<std::vector<BlockShape>> out;
  int prev = c.stem_channels;
  for (std::size_t s = 0; s < c.stages.size(); ++s) {
    std::vector<BlockShape> stage;
    for (int b = 0; b < c.stages[s].blocks; ++b) {
      BlockShape bs;
      bs.in_ch = b == 0 ? prev : c.stages[s].channels;
      bs.out_ch = c.stages[s].channels;
      bs.stride = (b == 0 && s > 0) ? 2 : 1;
      bs.has_down = bs.in_ch != bs.out_ch || bs.stride != 1;
      stage.push_back(bs);
    }
    prev = c.stages[s].channels;
    out.push_back(std::move(stage));
  }
  return out;
}

template <typename T>
BnParams<T> fresh_bn(int channels) {
  BnParams<T> p;
  p.gamma = Tensor<T>::full({channels}, T(1));
  p.beta = Tensor<T>({channels});
  p.running_mean = Tensor<T>({channels});
  p.running_var = Tensor<T>::full({channels}, T(1));
  return p;
}

}  // namespace detail

// Zero-weight plain model with the full structure and naming in place.
template <typename T>
Model<T> make_skeleton(const BackboneConfig& config) {
  validate_config(config);
  Model<T> m;
  m.config = config;
  m.stem.name = "stem.conv";
  m.stem.weight = Tensor<T>({config.stem_channels, config.in_channels, 3, 3});
  m.stem.stride = 1;
  m.stem.padding = 1;
  m.stem_bn.name = "stem.bn";
  m.stem_bn.p = detail::fresh_bn<T>(config.stem_channels);
  auto shapes = detail::block_shapes(config);
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    std::vector<ResBlock<T>> stage;
    for (std::size_t b = 0; b < shapes[s].size(); ++b) {
      const auto& bs = shapes[s][b];
      std::string prefix =
          "s" + std::to_string(s + 1) + ".b" + std::to_string(b) + ".";
      ResBlock<T> block;
      block.conv1.name = prefix + "conv1";
      block.conv1.weight = Tensor<T>({bs.out_ch, bs.in_ch, 3, 3});
      block.conv1.stride = bs.stride;
      block.conv1.padding = 1;
      block.bn1.name = prefix + "bn1";
      block.bn1.p = detail::fresh_bn<T>(bs.out_ch);
      block.conv2.name = prefix + "conv2";
      block.conv2.weight = Tensor<T>({bs.out_ch, bs.out_ch, 3, 3});
      block.conv2.stride = 1;
      block.conv2.padding = 1;
      block.bn2.name = prefix + "bn2";
      block.bn2.p = detail::fresh_bn<T>(bs.out_ch);
      block.has_down = bs.has_down;
      if (bs.has_down) {
        block.down_conv.name = prefix + "down.conv";
        block.down_conv.weight = Tensor<T>({bs.out_ch, bs.in_ch, 1, 1});
        block.down_conv.stride = bs.stride;
        block.down_conv.padding = 0;
        block.down_bn.name = prefix + "down.bn";
        block.down_bn.p = detail::fresh_bn<T>(bs.out_ch);
      }
      stage.push_back(std::move(block));
    }
    m.stages.push_back(std::move(stage));
  }
  m.head_w = Tensor<T>({config.classes, config.stages.back().channels});
  m.head_b = Tensor<T>({config.classes});
  return m;
}

template <typename T>
void init_head(Model<T>& m, Rng& rng) {
  double stddev = std::sqrt(2.0 / static_cast<double>(m.last_channels()));
  for (std::size_t i = 0; i < m.head_w.size(); ++i) {
    m.head_w[i] = static_cast<T>(rng.normal(0.0, stddev));
  }
  for (std::size_t i = 0; i < m.head_b.size(); ++i) m.head_b[i] = T(0);
}

template <typename T>
void reinit_head(Model<T>& m, std::uint64_t seed) {
  Rng rng(seed);
  init_head(m, rng);
}

template <typename T>
Model<T> build_plain_backbone(const BackboneConfig& config, std::uint64_t seed) {
  Model<T> m = make_skeleton<T>(config);
  Rng rng(sub_seed(seed, "init"));
  m.for_each_conv([&](ConvUnit<T>& c, BnUnit<T>&) {
    int fan_in = c.c_in() * c.kernel() * c.kernel();
    double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < c.weight.size(); ++i) {
      c.weight[i] = static_cast<T>(rng.normal(0.0, stddev));
    }
  });
  init_head(m, rng);
  return m;
}

// Fills a plain skeleton from a name->tensor map. Head entries are optional
// (source checkpoints usually omit them); everything else must be present
// with the exact shape.
template <typename T>
Model<T> load_plain_from_map(const BackboneConfig& config,
                             const std::map<std::string, Tensor<T>>& tensors) {
  Model<T> m = make_skeleton<T>(config);
  for (auto& [name, dst] : m.named_tensors()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      if (name.rfind("head.", 0) == 0) continue;
      throw FormatError("checkpoint is missing tensor '" + name + "'");
    }
    if (!it->second.same_shape(*dst)) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " +
                        shape_str(it->second.shape()) + ", expected " +
                        shape_str(dst->shape()));
    }
    *dst = it->second;
  }
  return m;
}

// Turns every convolution into an adaptive-aggregation layer over the given
// source parameter maps. Batch norms warm-start as the source average; the
// head is freshly seeded. Zoo order defines the source index everywhere.
template <typename T>
Model<T> convert_to_zoo(const BackboneConfig& config,
                        const std::vector<std::map<std::string, Tensor<T>>>& zoo,
                        std::uint64_t seed, GateMode mode = GateMode::per_sample,
                        bool align_enabled = true) {
  if (zoo.empty()) throw ZooCompatError("zoo must contain at least one checkpoint");
  Model<T> plain = make_skeleton<T>(config);
  int m = static_cast<int>(zoo.size());

  // Validate all checkpoints against the plain structure first, so the error
  // names the first offending parameter in registry order.
  for (auto& [name, dst] : plain.named_tensors()) {
    if (name.rfind("head.", 0) == 0) continue;
    for (int i = 0; i < m; ++i) {
      auto it = zoo[static_cast<std::size_t>(i)].find(name);
      if (it == zoo[static_cast<std::size_t>(i)].end()) {
        throw ZooCompatError("zoo checkpoint " + std::to_string(i) +
                             " is missing parameter '" + name + "'");
      }
      if (!it->second.same_shape(*dst)) {
        throw ZooCompatError("zoo checkpoint " + std::to_string(i) +
                             " parameter '" + name + "' has shape " +
                             shape_str(it->second.shape()) + ", expected " +
                             shape_str(dst->shape()));
      }
    }
  }

  Model<T> out = make_skeleton<T>(config);
  out.is_zoo = true;
  out.zoo_size = m;
  Rng gates_rng(sub_seed(seed, "gates"));
  out.for_each_conv([&](ConvUnit<T>& c, BnUnit<T>& bn) {
    std::vector<Tensor<T>> weights;
    weights.reserve(static_cast<std::size_t>(m));
    std::vector<BnParams<T>> bns;
    bns.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      const auto& src = zoo[static_cast<std::size_t>(i)];
      weights.push_back(src.at(c.name + ".weight"));
      BnParams<T> p;
      p.gamma = src.at(bn.name + ".gamma");
      p.beta = src.at(bn.name + ".beta");
      p.running_mean = src.at(bn.name + ".running_mean");
      p.running_var = src.at(bn.name + ".running_var");
      bns.push_back(std::move(p));
    }
    bool layer_align =
        align_enabled && (c.kernel() > 1 || config.align_pointwise);
    c.is_zoo = true;
    c.zoo = make_adaagg_layer<T>(std::move(weights), {}, c.stride, c.padding,
                                 layer_align, gates_rng);
    c.zoo.mode = mode;
    c.weight = Tensor<T>();
    bn.p = bn_init_average(bns);
  });
  if (mode == GateMode::frozen) {
    std::vector<double> uniform(static_cast<std::size_t>(m),
                                1.0 / static_cast<double>(m));
    if (m == 1) uniform[0] = 1.0;
    out.for_each_conv([&](ConvUnit<T>& c, BnUnit<T>&) {
      set_frozen_gates(c.zoo, uniform);
    });
  }
  reinit_head(out, sub_seed(seed, "head"));
  return out;
}

template <typename T>
void set_gate_mode(Model<T>& m, GateMode mode) {
  m.for_each_conv([&](ConvUnit<T>& c, BnUnit<T>&) {
    if (c.is_zoo) c.zoo.mode = mode;
  });
}

// ---- training-graph forward ----

template <typename T>
struct LeafMap {
  std::vector<ParamRef<T>> params;
  std::vector<Value> leaves;
  std::map<const Tensor<T>*, Value> by_tensor;

  Value at(const Tensor<T>* t) const {
    auto it = by_tensor.find(t);
    if (it == by_tensor.end()) throw StateError("tensor has no leaf in this graph");
    return it->second;
  }
};

template <typename T>
LeafMap<T> make_leaves(Graph<T>& g, Model<T>& m) {
  LeafMap<T> lm;
  lm.params = m.trainable();
  lm.leaves.reserve(lm.params.size());
  for (const ParamRef<T>& p : lm.params) {
    Value v = g.leaf(*p.tensor, true);
    lm.leaves.push_back(v);
    lm.by_tensor[p.tensor] = v;
  }
  return lm;
}

template <typename T>
struct TrainForward {
  Value logits;
  Value loss;
  double loss_value = 0.0;
  // Batch-mean gate values per zoo layer, in structure order.
  std::vector<std::pair<std::string, std::vector<double>>> gate_means;
};

namespace detail {

template <typename T>
Value conv_unit_graph(Graph<T>& g, ConvUnit<T>& c, const LeafMap<T>& lm, Value x,
                      TrainForward<T>* tf) {
  g.set_layer(c.name);
  if (!c.is_zoo) {
    return g.conv2d(x, lm.at(&c.weight), std::nullopt, c.stride, c.padding);
  }
  AdaAggLeaves leaves;
  for (auto& w : c.zoo.src_weights) leaves.src_w.push_back(lm.at(&w));
  for (auto& a : c.zoo.aligns) leaves.aligns.push_back(lm.at(&a));
  for (auto& gate : c.zoo.gates) {
    leaves.gates.push_back(GateLeaves{lm.at(&gate.reduce_w), lm.at(&gate.reduce_b),
                                      lm.at(&gate.expand_w), lm.at(&gate.expand_b)});
  }
  AdaAggGraphOut<T> out = adaagg_forward_graph(g, c.zoo, leaves, x);
  tf->gate_means.emplace_back(c.name, std::move(out.gate_means));
  return out.out;
}

template <typename T>
Value bn_graph(Graph<T>& g, BnUnit<T>& bn, const LeafMap<T>& lm, Value x,
               bool update_stats) {
  g.set_layer(bn.name);
  return g.batch_norm(x, lm.at(&bn.p.gamma), lm.at(&bn.p.beta),
                      update_stats ? &bn.p.running_mean : nullptr,
                      update_stats ? &bn.p.running_var : nullptr, true,
                      kBnMomentum, kBnEps);
}

}  // namespace detail

// Builds the whole training forward in the graph: train-mode BN (updating
// running statistics in place), zoo layers obeying their gate mode, softmax
// cross-entropy loss.
template <typename T>
TrainForward<T> forward_train(Graph<T>& g, Model<T>& m, const LeafMap<T>& lm,
                              const Tensor<T>& images, const std::vector<int>& labels,
                              bool update_stats = true) {
  if (images.ndim() != 4 || images.dim(1) != m.config.in_channels ||
      images.dim(2) != m.config.side || images.dim(3) != m.config.side) {
    throw ShapeError("batch shape " + shape_str(images.shape()) +
                     " does not match configured input [N," +
                     std::to_string(m.config.in_channels) + "," +
                     std::to_string(m.config.side) + "," +
                     std::to_string(m.config.side) + "]");
  }
  TrainForward<T> tf;
  Value cur = g.constant(images);
  cur = detail::conv_unit_graph(g, m.stem, lm, cur, &tf);
  cur = detail::bn_graph(g, m.stem_bn, lm, cur, update_stats);
  cur = g.relu(cur);
  for (auto& stage : m.stages) {
    for (auto& block : stage) {
      Value in = cur;
      cur = detail::conv_unit_graph(g, block.conv1, lm, cur, &tf);
      cur = detail::bn_graph(g, block.bn1, lm, cur, update_stats);
      cur = g.relu(cur);
      cur = detail::conv_unit_graph(g, block.conv2, lm, cur, &tf);
      cur = detail::bn_graph(g, block.bn2, lm, cur, update_stats);
      Value shortcut = in;
      if (block.has_down) {
        shortcut = detail::conv_unit_graph(g, block.down_conv, lm, in, &tf);
        shortcut = detail::bn_graph(g, block.down_bn, lm, shortcut, update_stats);
      }
      cur = g.relu(g.add(cur, shortcut));
    }
  }
  g.set_layer("head");
  cur = g.gap(cur, MacBucket::base);
  cur = g.reshape(cur, {images.dim(0), m.last_channels()});
  tf.logits = g.affine(cur, lm.at(&m.head_w), lm.at(&m.head_b), MacBucket::base);
  tf.loss = g.softmax_cross_entropy(tf.logits, labels);
  tf.loss_value = static_cast<double>(g.value(tf.loss)[0]);
  return tf;
}

// ---- graph-free evaluation forward ----

// Precomputed per-layer weights for steady-state inference: aligned source
// weights for gated modes, or fully collapsed plain convolutions when a
// temporal ensemble (or frozen gates) fixes the mixture.
template <typename T>
struct EvalPlan {
  std::map<std::string, AlignedView<T>> aligned;
  std::map<std::string, CollapsedConv<T>> collapsed;
  bool use_collapsed = false;
};

template <typename T>
EvalPlan<T> prepare_eval(const Model<T>& m, const TEState* te = nullptr) {
  EvalPlan<T> plan;
  if (!m.is_zoo) return plan;
  bool all_frozen = true;
  m.for_each_conv([&](const ConvUnit<T>& c, const BnUnit<T>&) {
    if (c.is_zoo && c.zoo.mode != GateMode::frozen) all_frozen = false;
  });
  plan.use_collapsed = te != nullptr || all_frozen;
  m.for_each_conv([&](const ConvUnit<T>& c, const BnUnit<T>&) {
    if (!c.is_zoo) return;
    if (plan.use_collapsed) {
      if (te != nullptr) {
        plan.collapsed[c.name] = te_collapse(c.zoo, *te, c.name);
      } else {
        if (c.zoo.frozen_gates.empty()) {
          throw StateError("frozen mode without stored gate values");
        }
        plan.collapsed[c.name] = collapse_with(c.zoo, c.zoo.frozen_gates);
      }
    } else {
      plan.aligned[c.name] = align_all(c.zoo);
    }
  });
  return plan;
}

namespace detail {

template <typename T>
Tensor<T> conv_unit_eval(const ConvUnit<T>& c, const Tensor<T>& x,
                         const EvalPlan<T>* plan, MacCounter* counter) {
  CountScope base{counter, c.name, MacBucket::base};
  if (!c.is_zoo) {
    return conv2d_fwd(x, c.weight, static_cast<const Tensor<T>*>(nullptr), c.stride,
                      c.padding, base);
  }
  if (plan != nullptr && plan->use_collapsed) {
    const CollapsedConv<T>& cc = plan->collapsed.at(c.name);
    return conv2d_fwd(x, cc.weight, cc.bias ? &*cc.bias : nullptr, c.stride,
                      c.padding, base);
  }
  const AlignedView<T>* pre =
      plan != nullptr ? &plan->aligned.at(c.name) : nullptr;
  return adaagg_forward_eval(c.zoo, x, nullptr, pre, counter, c.name);
}

template <typename T>
Tensor<T> bn_eval(const BnUnit<T>& bn, const Tensor<T>& x) {
  BnParams<T>& p = const_cast<BnParams<T>&>(bn.p);
  return batch_norm_fwd(x, p.gamma, p.beta, &p.running_mean, &p.running_var,
                        false, kBnMomentum, kBnEps, static_cast<Tensor<T>*>(nullptr),
                        static_cast<std::vector<double>*>(nullptr));
}

}  // namespace detail

template <typename T>
Tensor<T> forward_eval(const Model<T>& m, const Tensor<T>& images,
                       const EvalPlan<T>* plan = nullptr,
                       MacCounter* counter = nullptr) {
  if (images.ndim() != 4 || images.dim(1) != m.config.in_channels ||
      images.dim(2) != m.config.side || images.dim(3) != m.config.side) {
    throw ShapeError("batch shape " + shape_str(images.shape()) +
                     " does not match configured input [N," +
                     std::to_string(m.config.in_channels) + "," +
                     std::to_string(m.config.side) + "," +
                     std::to_string(m.config.side) + "]");
  }
  Tensor<T> cur = detail::conv_unit_eval(m.stem, images, plan, counter);
  cur = detail::bn_eval(m.stem_bn, cur);
  cur = detail::relu_fwd(cur);
  for (const auto& stage : m.stages) {
    for (const auto& block : stage) {
      Tensor<T> in = cur;
      cur = detail::conv_unit_eval(block.conv1, cur, plan, counter);
      cur = detail::bn_eval(block.bn1, cur);
      cur = detail::relu_fwd(cur);
      cur = detail::conv_unit_eval(block.conv2, cur, plan, counter);
      cur = detail::bn_eval(block.bn2, cur);
      Tensor<T> shortcut = std::move(in);
      if (block.has_down) {
        shortcut = detail::conv_unit_eval(block.down_conv, shortcut, plan, counter);
        shortcut = detail::bn_eval(block.down_bn, shortcut);
      }
      for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += shortcut[i];
      cur = detail::relu_fwd(cur);
    }
  }
  CountScope head{counter, "head", MacBucket::base};
  cur = detail::gap_fwd(cur, head).reshaped({images.dim(0), m.last_channels()});
  return detail::affine_fwd(cur, m.head_w, m.head_b, head);
}

// Collapses every zoo layer of a tuned model into a plain backbone under the
// given temporal-ensemble gates. BN and head carry over unchanged.
template <typename T>
Model<T> collapse_model(const Model<T>& m, const TEState& te) {
  if (!m.is_zoo) throw StateError("collapse requires a zoo model");
  Model<T> out = make_skeleton<T>(m.config);
  Model<T>& src = const_cast<Model<T>&>(m);
  std::vector<ConvUnit<T>*> zoo_convs;
  std::vector<BnUnit<T>*> zoo_bns;
  src.for_each_conv([&](ConvUnit<T>& c, BnUnit<T>& bn) {
    zoo_convs.push_back(&c);
    zoo_bns.push_back(&bn);
  });
  std::size_t idx = 0;
  out.for_each_conv([&](ConvUnit<T>& c, BnUnit<T>& bn) {
    ConvUnit<T>* zc = zoo_convs[idx];
    bn.p = zoo_bns[idx]->p;
    ++idx;
    if (!zc->is_zoo) {
      c.weight = zc->weight;
      return;
    }
    CollapsedConv<T> cc = te_collapse(zc->zoo, te, zc->name);
    c.weight = std::move(cc.weight);
  });
  out.head_w = m.head_w;
  out.head_b = m.head_b;
  return out;
}

}  // namespace zootune
