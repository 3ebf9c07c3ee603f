#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zootune/errors.hpp"
#include "zootune/graph.hpp"
#include "zootune/kernels.hpp"
#include "zootune/mac_counter.hpp"
#include "zootune/rng.hpp"
#include "zootune/tensor.hpp"

// Adaptive aggregation layers: per-source channel alignment, gating networks,
// gate-weighted weight aggregation, the temporal ensemble of batch-mean gates,
// and the collapse of a tuned zoo layer into one plain convolution.
//
// The numeric (graph-free) path and the training-graph path share the same
// kernels, and te_collapse routes through aggregate_weights, so collapsed
// weights match the frozen-mode forward bit for bit.

namespace zootune {

enum class GateMode { per_sample, batch_average, frozen };

inline const char* gate_mode_name(GateMode m) {
  switch (m) {
    case GateMode::per_sample: return "per_sample";
    case GateMode::batch_average: return "batch_average";
    case GateMode::frozen: return "frozen";
  }
  return "?";
}

// Squeeze width of the gating bottleneck.
inline int gate_hidden_dim(int c_in) {
  if (c_in < 1) throw ValueError("gate input channels must be positive");
  return std::max((c_in + 15) / 16, 4);
}

template <typename T>
struct GatingNet {
  Tensor<T> reduce_w;  // [hidden, c_in]
  Tensor<T> reduce_b;  // [hidden]
  Tensor<T> expand_w;  // [1, hidden]
  Tensor<T> expand_b;  // [1]

  int hidden() const { return reduce_w.dim(0); }
  int c_in() const { return reduce_w.dim(1); }
};

// Initial gate output is exactly sigmoid(logit(1/m)) for any input: the
// expand stage starts as a constant. m=1 would need logit(1), so it clamps
// to an output of 0.999.
template <typename T>
GatingNet<T> init_gate(int c_in, int m, Rng& rng) {
  if (m < 1) throw ValueError("zoo size must be at least 1");
  int hidden = gate_hidden_dim(c_in);
  GatingNet<T> g;
  g.reduce_w = Tensor<T>({hidden, c_in});
  double stddev = std::sqrt(2.0 / static_cast<double>(c_in));
  for (std::size_t i = 0; i < g.reduce_w.size(); ++i) {
    g.reduce_w[i] = static_cast<T>(rng.normal(0.0, stddev));
  }
  g.reduce_b = Tensor<T>({hidden});
  g.expand_w = Tensor<T>({1, hidden});
  g.expand_b = Tensor<T>({1});
  double target = m == 1 ? 0.999 : 1.0 / static_cast<double>(m);
  g.expand_b[0] = static_cast<T>(std::log(target / (1.0 - target)));
  return g;
}

template <typename T>
struct TEStateT {
  double lambda = 0.9;
  // layer name -> per-source running gate averages, always kept in double.
  std::map<std::string, std::vector<double>> values;

  bool has(const std::string& layer) const { return values.count(layer) != 0; }
  const std::vector<double>& at(const std::string& layer) const {
    auto it = values.find(layer);
    if (it == values.end()) {
      throw StateError("temporal ensemble has no values for layer '" + layer + "'");
    }
    return it->second;
  }
};
using TEState = TEStateT<double>;

struct BatchStats {
  int batch = 0;
  std::vector<double> means;
};

// First update seeds the running average with the batch mean; later updates
// apply abar <- lambda*abar + (1-lambda)*mean.
inline void te_update(TEState& te, const std::string& layer,
                      const std::vector<double>& batch_means) {
  if (te.lambda < 0.0 || te.lambda >= 1.0) {
    throw ValueError("temporal ensemble decay must lie in [0,1)");
  }
  for (double m : batch_means) {
    if (!(m > 0.0 && m < 1.0)) {
      throw ValueError("batch-mean gate value " + std::to_string(m) +
                       " outside (0,1)");
    }
  }
  auto it = te.values.find(layer);
  if (it == te.values.end()) {
    te.values[layer] = batch_means;
    return;
  }
  if (it->second.size() != batch_means.size()) {
    throw ShapeError("temporal ensemble for layer '" + layer + "' holds " +
                     std::to_string(it->second.size()) + " sources, got " +
                     std::to_string(batch_means.size()));
  }
  for (std::size_t i = 0; i < batch_means.size(); ++i) {
    it->second[i] = te.lambda * it->second[i] + (1.0 - te.lambda) * batch_means[i];
  }
}

inline void te_update(TEState& te, const std::string& layer, const BatchStats& stats) {
  te_update(te, layer, stats.means);
}

template <typename T>
struct AdaAggLayer {
  std::vector<Tensor<T>> src_weights;  // m x [c_out, c_in, k, k]
  std::vector<Tensor<T>> src_biases;   // empty, or m x [c_out]
  std::vector<Tensor<T>> aligns;       // m x [c_out, c_out] when align_enabled
  std::vector<GatingNet<T>> gates;     // m
  int stride = 1;
  int padding = 1;
  GateMode mode = GateMode::per_sample;
  // Gate values used by frozen mode when no temporal ensemble is supplied
  // (the fixed-gate ablation). In (0,1]; exactly 1 covers the single-source
  // case.
  std::vector<double> frozen_gates;
  bool align_enabled = true;

  int m() const { return static_cast<int>(src_weights.size()); }
  int c_out() const { return src_weights.at(0).dim(0); }
  int c_in() const { return src_weights.at(0).dim(1); }
  int kernel() const { return src_weights.at(0).dim(2); }
  bool has_bias() const { return !src_biases.empty(); }
};

template <typename T>
void init_gates_uniform(AdaAggLayer<T>& layer, Rng& rng) {
  layer.gates.clear();
  layer.gates.reserve(static_cast<std::size_t>(layer.m()));
  for (int i = 0; i < layer.m(); ++i) {
    layer.gates.push_back(init_gate<T>(layer.c_in(), layer.m(), rng));
  }
}

template <typename T>
AdaAggLayer<T> make_adaagg_layer(std::vector<Tensor<T>> weights,
                                 std::vector<Tensor<T>> biases, int stride,
                                 int padding, bool align_enabled, Rng& gate_rng) {
  if (weights.empty()) throw ValueError("zoo layer needs at least one source");
  const auto& ref = weights[0];
  if (ref.ndim() != 4 || ref.dim(2) != ref.dim(3)) {
    throw ShapeError("source weight must be [c_out,c_in,k,k], got " +
                     shape_str(ref.shape()));
  }
  for (std::size_t i = 1; i < weights.size(); ++i) {
    if (!weights[i].same_shape(ref)) {
      throw ShapeError("source " + std::to_string(i) + " weight shape " +
                       shape_str(weights[i].shape()) + " differs from source 0 " +
                       shape_str(ref.shape()));
    }
  }
  if (!biases.empty()) {
    if (biases.size() != weights.size()) {
      throw ShapeError("bias count " + std::to_string(biases.size()) +
                       " does not match source count " +
                       std::to_string(weights.size()));
    }
    for (std::size_t i = 0; i < biases.size(); ++i) {
      if (!(biases[i].ndim() == 1 && biases[i].dim(0) == ref.dim(0))) {
        throw ShapeError("source " + std::to_string(i) + " bias shape " +
                         shape_str(biases[i].shape()) +
                         " does not match output channels " +
                         std::to_string(ref.dim(0)));
      }
    }
  }
  AdaAggLayer<T> layer;
  layer.src_weights = std::move(weights);
  layer.src_biases = std::move(biases);
  layer.stride = stride;
  layer.padding = padding;
  layer.align_enabled = align_enabled;
  if (align_enabled) {
    layer.aligns.reserve(layer.src_weights.size());
    for (std::size_t i = 0; i < layer.src_weights.size(); ++i) {
      layer.aligns.push_back(Tensor<T>::identity(ref.dim(0)));
    }
  }
  init_gates_uniform(layer, gate_rng);
  return layer;
}

template <typename T>
void set_frozen_gates(AdaAggLayer<T>& layer, std::vector<double> values) {
  if (static_cast<int>(values.size()) != layer.m()) {
    throw ShapeError("frozen gate count " + std::to_string(values.size()) +
                     " does not match source count " + std::to_string(layer.m()));
  }
  for (double v : values) {
    if (!(v > 0.0 && v <= 1.0) || !std::isfinite(v)) {
      throw ValueError("frozen gate value " + std::to_string(v) +
                       " outside (0,1]");
    }
  }
  layer.frozen_gates = std::move(values);
  layer.mode = GateMode::frozen;
}

// W~[o,...] = sum_o' t[o,o'] * w[o',...]: a 1x1 convolution over the output
// channel axis, with the rest of the weight tensor as the spatial plane.
template <typename T>
Tensor<T> align_weights(const Tensor<T>& t, const Tensor<T>& w,
                        const CountScope& cs = {}) {
  if (w.ndim() != 4) {
    throw ShapeError("align_weights expects a 4-d weight, got " +
                     shape_str(w.shape()));
  }
  if (!(t.ndim() == 2 && t.dim(0) == t.dim(1) && t.dim(0) == w.dim(0))) {
    throw ShapeError("alignment matrix " + shape_str(t.shape()) +
                     " does not match weight output channels " +
                     std::to_string(w.dim(0)));
  }
  int co = w.dim(0);
  int rest = static_cast<int>(w.size()) / co;
  Tensor<T> flat = w.reshaped({co, rest});
  return detail::matmul_nn(t, flat, cs).reshaped(w.shape());
}

// Aligned weights of every source; points at the raw sources when alignment
// is disabled so no copies are made.
template <typename T>
struct AlignedView {
  std::vector<Tensor<T>> storage;
  std::vector<const Tensor<T>*> ptrs;
};

template <typename T>
AlignedView<T> align_all(const AdaAggLayer<T>& layer, const CountScope& cs = {}) {
  AlignedView<T> view;
  view.ptrs.reserve(static_cast<std::size_t>(layer.m()));
  if (!layer.align_enabled) {
    for (const auto& w : layer.src_weights) view.ptrs.push_back(&w);
    return view;
  }
  view.storage.reserve(static_cast<std::size_t>(layer.m()));
  for (int i = 0; i < layer.m(); ++i) {
    view.storage.push_back(align_weights(layer.aligns[static_cast<std::size_t>(i)],
                                         layer.src_weights[static_cast<std::size_t>(i)],
                                         cs));
  }
  for (const auto& w : view.storage) view.ptrs.push_back(&w);
  return view;
}

template <typename T>
Tensor<T> gate_pool(const Tensor<T>& h, const CountScope& cs = {}) {
  if (h.ndim() != 4) {
    throw ShapeError("gate input must be [N,C,H,W], got " + shape_str(h.shape()));
  }
  return detail::gap_fwd(h, cs).reshaped({h.dim(0), h.dim(1)});
}

template <typename T>
Tensor<T> gate_from_pooled(const GatingNet<T>& gate, const Tensor<T>& pooled,
                           const CountScope& cs = {}) {
  if (pooled.dim(1) != gate.c_in()) {
    throw ShapeError("gate expects " + std::to_string(gate.c_in()) +
                     " channels, got " + std::to_string(pooled.dim(1)));
  }
  Tensor<T> z = detail::affine_fwd(pooled, gate.reduce_w, gate.reduce_b, cs);
  z = detail::relu_fwd(z);
  Tensor<T> o = detail::affine_fwd(z, gate.expand_w, gate.expand_b, cs);
  o = detail::sigmoid_fwd(o);
  return o.reshaped({pooled.dim(0)});
}

// a = sigmoid(expand(relu(reduce(GAP(h))))), one value per sample in (0,1).
template <typename T>
Tensor<T> gate_forward(const GatingNet<T>& gate, const Tensor<T>& h,
                       const CountScope& cs = {}) {
  if (h.ndim() != 4 || h.dim(1) != gate.c_in()) {
    throw ShapeError("gate expects [N," + std::to_string(gate.c_in()) +
                     ",H,W] input, got " + shape_str(h.shape()));
  }
  return gate_from_pooled(gate, gate_pool(h, cs), cs);
}

// W^ = sum_i a_i * (T_i * W_i); with alignment disabled, W^ = sum_i a_i * W_i.
template <typename T>
Tensor<T> aggregate_weights(const AdaAggLayer<T>& layer, const std::vector<T>& coeffs,
                            MacCounter* counter = nullptr,
                            const std::string& name = {}) {
  if (static_cast<int>(coeffs.size()) != layer.m()) {
    throw ShapeError("gate value count " + std::to_string(coeffs.size()) +
                     " does not match source count " + std::to_string(layer.m()));
  }
  for (T c : coeffs) {
    if (!std::isfinite(static_cast<double>(c))) {
      throw ValueError("gate value is not finite");
    }
  }
  AlignedView<T> av = align_all(layer, CountScope{counter, name, MacBucket::align});
  return detail::weighted_sum(av.ptrs, coeffs, CountScope{counter, name, MacBucket::agg});
}

template <typename T>
std::optional<Tensor<T>> aggregate_biases(const AdaAggLayer<T>& layer,
                                          const std::vector<T>& coeffs,
                                          MacCounter* counter = nullptr,
                                          const std::string& name = {}) {
  if (!layer.has_bias()) return std::nullopt;
  std::vector<const Tensor<T>*> ptrs;
  ptrs.reserve(layer.src_biases.size());
  for (const auto& b : layer.src_biases) ptrs.push_back(&b);
  return detail::weighted_sum(ptrs, coeffs, CountScope{counter, name, MacBucket::agg});
}

template <typename T>
struct CollapsedConv {
  Tensor<T> weight;
  std::optional<Tensor<T>> bias;
};

template <typename T>
CollapsedConv<T> collapse_with(const AdaAggLayer<T>& layer,
                               const std::vector<double>& abar,
                               MacCounter* counter = nullptr,
                               const std::string& name = {}) {
  std::vector<T> coeffs;
  coeffs.reserve(abar.size());
  for (double v : abar) coeffs.push_back(static_cast<T>(v));
  CollapsedConv<T> out;
  out.weight = aggregate_weights(layer, coeffs, counter, name);
  out.bias = aggregate_biases(layer, coeffs, counter, name);
  return out;
}

// Pre-computes the plain convolution the tuned layer is equivalent to under
// the stored temporal-ensemble gates. Shares aggregate_weights with the
// frozen-mode forward, so both produce bit-identical tensors.
template <typename T>
CollapsedConv<T> te_collapse(const AdaAggLayer<T>& layer, const TEState& te,
                             const std::string& layer_name,
                             MacCounter* counter = nullptr) {
  const std::vector<double>& abar = te.at(layer_name);
  if (static_cast<int>(abar.size()) != layer.m()) {
    throw ShapeError("temporal ensemble for layer '" + layer_name + "' holds " +
                     std::to_string(abar.size()) + " sources, layer has " +
                     std::to_string(layer.m()));
  }
  return collapse_with(layer, abar, counter, layer_name);
}

template <typename T>
std::vector<double> batch_mean_gates(const std::vector<Tensor<T>>& gate_values) {
  std::vector<double> means;
  means.reserve(gate_values.size());
  for (const auto& g : gate_values) {
    double acc = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) acc += static_cast<double>(g[j]);
    means.push_back(acc / static_cast<double>(g.size()));
  }
  return means;
}

// Graph-free forward. frozen_override, when set, replaces layer.frozen_gates
// (used to evaluate under a temporal ensemble). prealigned, when set, skips
// the alignment computation (used after Model preparation so inference-time
// alignment cost is genuinely zero).
template <typename T>
Tensor<T> adaagg_forward_eval(const AdaAggLayer<T>& layer, const Tensor<T>& h,
                              const std::vector<double>* frozen_override = nullptr,
                              const AlignedView<T>* prealigned = nullptr,
                              MacCounter* counter = nullptr,
                              const std::string& name = {}) {
  if (h.ndim() != 4 || h.dim(1) != layer.c_in()) {
    throw ShapeError("layer expects [N," + std::to_string(layer.c_in()) +
                     ",H,W] input, got " + shape_str(h.shape()));
  }
  CountScope cs_align{counter, name, MacBucket::align};
  CountScope cs_gating{counter, name, MacBucket::gating};
  CountScope cs_agg{counter, name, MacBucket::agg};
  CountScope cs_base{counter, name, MacBucket::base};
  GateMode mode = frozen_override != nullptr ? GateMode::frozen : layer.mode;

  if (mode == GateMode::frozen) {
    const std::vector<double>* values =
        frozen_override != nullptr ? frozen_override : &layer.frozen_gates;
    if (values->empty()) {
      throw StateError("frozen mode without stored gate values");
    }
    CollapsedConv<T> c = collapse_with(layer, *values, counter, name);
    return detail::conv2d_fwd(h, c.weight, c.bias ? &*c.bias : nullptr, layer.stride,
                              layer.padding, cs_base);
  }

  Tensor<T> pooled = gate_pool(h, cs_gating);
  std::vector<Tensor<T>> gates;
  gates.reserve(layer.gates.size());
  for (const auto& gnet : layer.gates) {
    gates.push_back(gate_from_pooled(gnet, pooled, cs_gating));
  }

  AlignedView<T> local;
  const AlignedView<T>* av = prealigned;
  if (av == nullptr) {
    local = align_all(layer, cs_align);
    av = &local;
  }

  if (mode == GateMode::batch_average) {
    std::vector<double> means = batch_mean_gates(gates);
    std::vector<T> coeffs;
    coeffs.reserve(means.size());
    for (double v : means) coeffs.push_back(static_cast<T>(v));
    Tensor<T> w = detail::weighted_sum(av->ptrs, coeffs, cs_agg);
    std::optional<Tensor<T>> b = aggregate_biases(layer, coeffs, counter, name);
    return detail::conv2d_fwd(h, w, b ? &*b : nullptr, layer.stride, layer.padding,
                              cs_base);
  }

  // per_sample: each sample gets its own aggregated weight.
  int n = h.dim(0);
  Tensor<T> out;
  std::size_t plane = 0;
  for (int j = 0; j < n; ++j) {
    std::vector<T> coeffs;
    coeffs.reserve(gates.size());
    for (const auto& g : gates) coeffs.push_back(g[static_cast<std::size_t>(j)]);
    Tensor<T> wj = detail::weighted_sum(av->ptrs, coeffs, cs_agg);
    std::optional<Tensor<T>> bj = aggregate_biases(layer, coeffs, counter, name);
    Tensor<T> xj({1, h.dim(1), h.dim(2), h.dim(3)});
    const T* src = h.data() + static_cast<std::size_t>(j) * xj.size();
    for (std::size_t i = 0; i < xj.size(); ++i) xj[i] = src[i];
    Tensor<T> yj = detail::conv2d_fwd(xj, wj, bj ? &*bj : nullptr, layer.stride,
                                      layer.padding, cs_base);
    if (j == 0) {
      plane = yj.size();
      out = Tensor<T>({n, yj.dim(1), yj.dim(2), yj.dim(3)});
    }
    T* dst = out.data() + static_cast<std::size_t>(j) * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = yj[i];
  }
  return out;
}

// Leaf handles for one layer's trainable tensors inside a graph; created by
// the model, which owns the tensor-to-leaf mapping.
struct GateLeaves {
  Value reduce_w, reduce_b, expand_w, expand_b;
};

struct AdaAggLeaves {
  std::vector<Value> src_w;
  std::vector<Value> src_b;  // empty when the layer has no biases
  std::vector<Value> aligns; // empty when alignment is disabled
  std::vector<GateLeaves> gates;
};

template <typename T>
struct AdaAggGraphOut {
  Value out;
  // Per-source batch means of the gate values (double), for logging and
  // temporal-ensemble updates. Frozen mode reports the frozen values.
  std::vector<double> gate_means;
};

template <typename T>
AdaAggGraphOut<T> adaagg_forward_graph(Graph<T>& g, const AdaAggLayer<T>& layer,
                                       const AdaAggLeaves& leaves, Value x) {
  // Copy shape facts out: node storage reallocates as ops are added, so
  // references returned by g.value() must not be held across graph calls.
  const int n = g.value(x).dim(0);
  if (g.value(x).ndim() != 4 || g.value(x).dim(1) != layer.c_in()) {
    throw ShapeError("layer expects [N," + std::to_string(layer.c_in()) +
                     ",H,W] input, got " + shape_str(g.value(x).shape()));
  }
  int m = layer.m();
  int co = layer.c_out();
  int rest = layer.c_in() * layer.kernel() * layer.kernel();
  std::vector<int> wshape = layer.src_weights[0].shape();

  std::vector<Value> aligned;
  aligned.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    if (layer.align_enabled) {
      Value flat = g.reshape(leaves.src_w[static_cast<std::size_t>(i)], {co, rest});
      Value al = g.matmul(leaves.aligns[static_cast<std::size_t>(i)], flat,
                          MacBucket::align);
      aligned.push_back(g.reshape(al, wshape));
    } else {
      aligned.push_back(leaves.src_w[static_cast<std::size_t>(i)]);
    }
  }

  auto fold_weight = [&](const std::vector<Value>& scalars) {
    Value acc = g.scale(scalars[0], aligned[0]);
    for (int i = 1; i < m; ++i) {
      acc = g.add(acc, g.scale(scalars[static_cast<std::size_t>(i)],
                               aligned[static_cast<std::size_t>(i)]));
    }
    return acc;
  };
  auto fold_bias = [&](const std::vector<Value>& scalars) -> std::optional<Value> {
    if (leaves.src_b.empty()) return std::nullopt;
    Value acc = g.scale(scalars[0], leaves.src_b[0]);
    for (int i = 1; i < m; ++i) {
      acc = g.add(acc, g.scale(scalars[static_cast<std::size_t>(i)],
                               leaves.src_b[static_cast<std::size_t>(i)]));
    }
    return acc;
  };

  AdaAggGraphOut<T> result;

  if (layer.mode == GateMode::frozen) {
    if (layer.frozen_gates.empty()) {
      throw StateError("frozen mode without stored gate values");
    }
    std::vector<Value> consts;
    consts.reserve(static_cast<std::size_t>(m));
    for (double v : layer.frozen_gates) {
      consts.push_back(g.constant(Tensor<T>::scalar(static_cast<T>(v))));
    }
    Value w = fold_weight(consts);
    std::optional<Value> b = fold_bias(consts);
    result.out = g.conv2d(x, w, b, layer.stride, layer.padding);
    result.gate_means = layer.frozen_gates;
    return result;
  }

  Value pooled = g.reshape(g.gap(x, MacBucket::gating), {n, layer.c_in()});
  std::vector<Value> gate_vecs;  // each [N]
  gate_vecs.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const GateLeaves& gl = leaves.gates[static_cast<std::size_t>(i)];
    Value z = g.affine(pooled, gl.reduce_w, gl.reduce_b, MacBucket::gating);
    z = g.relu(z);
    z = g.affine(z, gl.expand_w, gl.expand_b, MacBucket::gating);
    z = g.sigmoid(z);
    gate_vecs.push_back(g.reshape(z, {n}));
  }
  for (const Value& v : gate_vecs) {
    double acc = 0.0;
    const Tensor<T>& gv = g.value(v);
    for (std::size_t j = 0; j < gv.size(); ++j) acc += static_cast<double>(gv[j]);
    result.gate_means.push_back(acc / static_cast<double>(gv.size()));
  }

  if (layer.mode == GateMode::batch_average) {
    std::vector<Value> means;
    means.reserve(static_cast<std::size_t>(m));
    for (const Value& v : gate_vecs) means.push_back(g.mean_all(v));
    Value w = fold_weight(means);
    std::optional<Value> b = fold_bias(means);
    result.out = g.conv2d(x, w, b, layer.stride, layer.padding);
    return result;
  }

  // per_sample
  std::vector<Value> slices;
  slices.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    std::vector<Value> scalars;
    scalars.reserve(static_cast<std::size_t>(m));
    for (const Value& v : gate_vecs) scalars.push_back(g.index(v, j));
    Value wj = fold_weight(scalars);
    std::optional<Value> bj = fold_bias(scalars);
    Value xj = g.select_sample(x, j);
    slices.push_back(g.conv2d(xj, wj, bj, layer.stride, layer.padding));
  }
  result.out = g.concat_samples(slices);
  return result;
}

template <typename T>
struct BnParams {
  Tensor<T> gamma, beta, running_mean, running_var;
  int channels() const { return gamma.dim(0); }
};

// Elementwise mean of source batch-norm parameters, running statistics
// included, for a consistent warm start of the single target-owned layer.
template <typename T>
BnParams<T> bn_init_average(const std::vector<BnParams<T>>& sources) {
  if (sources.empty()) throw ValueError("bn_init_average needs at least one source");
  int c = sources[0].channels();
  for (std::size_t i = 1; i < sources.size(); ++i) {
    if (sources[i].channels() != c) {
      throw ShapeError("source " + std::to_string(i) + " batch-norm has " +
                       std::to_string(sources[i].channels()) +
                       " channels, source 0 has " + std::to_string(c));
    }
  }
  auto mean_of = [&](auto pick) {
    Tensor<T> out({c});
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (const auto& s : sources) {
        acc += static_cast<double>(pick(s)[static_cast<std::size_t>(j)]);
      }
      out[static_cast<std::size_t>(j)] =
          static_cast<T>(acc / static_cast<double>(sources.size()));
    }
    return out;
  };
  BnParams<T> out;
  out.gamma = mean_of([](const BnParams<T>& s) -> const Tensor<T>& { return s.gamma; });
  out.beta = mean_of([](const BnParams<T>& s) -> const Tensor<T>& { return s.beta; });
  out.running_mean =
      mean_of([](const BnParams<T>& s) -> const Tensor<T>& { return s.running_mean; });
  out.running_var =
      mean_of([](const BnParams<T>& s) -> const Tensor<T>& { return s.running_var; });
  return out;
}

}  // namespace zootune
