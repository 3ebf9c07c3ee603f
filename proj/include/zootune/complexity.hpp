#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "zootune/backbone.hpp"
#include "zootune/errors.hpp"
#include "zootune/zoo_layers.hpp"

// Analytic multiply-accumulate and parameter accounting. The instrumented
// MacCounter is the oracle: these formulas are written to equal what the
// kernels actually execute, per layer and bucket, for a single input sample.
//
// Conventions: only multiply-accumulate loops count (convolutions, matrix
// products, pooling sums, weighted weight sums). Batch norm, activations,
// bias adds and residual adds count zero. Alignment is data-independent, so
// its cost appears in the train phase only; prepared inference computes it
// once outside the measured steady state.

namespace zootune {

struct LayerDims {
  int c_out = 0, c_in = 0, k = 0;
  int h = 0, w = 0;  // input spatial sizes
  int stride = 1, padding = 0;
  int m = 1;
};

inline void validate_dims(const LayerDims& d) {
  if (d.c_out < 1 || d.c_in < 1 || d.k < 1 || d.h < 1 || d.w < 1 || d.stride < 1 ||
      d.padding < 0 || d.m < 1) {
    throw ValueError("layer dimensions must be positive");
  }
}

inline std::uint64_t conv_out_side(int in, int k, int stride, int padding) {
  int num = in + 2 * padding - k;
  if (num < 0) {
    throw GeometryError("convolution output would be empty for input side " +
                        std::to_string(in));
  }
  return static_cast<std::uint64_t>(num / stride + 1);
}

// H'*W'*K^2*C_out*C_in for one sample.
inline std::uint64_t conv_base_macs(const LayerDims& d) {
  validate_dims(d);
  std::uint64_t ho = conv_out_side(d.h, d.k, d.stride, d.padding);
  std::uint64_t wo = conv_out_side(d.w, d.k, d.stride, d.padding);
  return ho * wo * static_cast<std::uint64_t>(d.k) * d.k *
         static_cast<std::uint64_t>(d.c_out) * d.c_in;
}

enum class Phase { train, inference_full, inference_lite };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::train: return "train";
    case Phase::inference_full: return "inference_full";
    case Phase::inference_lite: return "inference_lite";
  }
  return "?";
}

struct OverheadMacs {
  std::uint64_t align = 0;
  std::uint64_t gating = 0;
  std::uint64_t agg = 0;
  // The order-of-magnitude gating envelope m*C_in^2; reported alongside the
  // as-built gating count for comparison.
  std::uint64_t gating_envelope = 0;
};

// Per-sample adaptive-aggregation overhead. Alignment is train-only (at
// inference the aligned weights are precomputed); gating counts the pooling
// pass plus the two affine stages of each gate as built.
inline OverheadMacs adaagg_overhead_macs(const LayerDims& d, Phase phase,
                                         int gate_hidden) {
  validate_dims(d);
  if (gate_hidden < 1) throw ValueError("gate hidden width must be positive");
  OverheadMacs o;
  std::uint64_t m = static_cast<std::uint64_t>(d.m);
  std::uint64_t kk = static_cast<std::uint64_t>(d.k) * d.k;
  if (phase == Phase::train) {
    o.align = m * kk * static_cast<std::uint64_t>(d.c_out) * d.c_out * d.c_in;
  }
  o.gating = static_cast<std::uint64_t>(d.h) * d.w * d.c_in +
             m * (static_cast<std::uint64_t>(d.c_in) * gate_hidden + gate_hidden);
  o.gating_envelope = m * static_cast<std::uint64_t>(d.c_in) * d.c_in;
  o.agg = m * kk * static_cast<std::uint64_t>(d.c_out) * d.c_in;
  return o;
}

struct ParamCounts {
  std::uint64_t sources = 0;
  std::uint64_t align = 0;
  std::uint64_t gates = 0;
  std::uint64_t bn = 0;  // learnable scale and shift only
  std::uint64_t head = 0;

  std::uint64_t total() const { return sources + align + gates + bn + head; }
};

template <typename T>
ParamCounts count_params(const Model<T>& m, Phase phase) {
  ParamCounts pc;
  m.for_each_conv([&](const ConvUnit<T>& c, const BnUnit<T>& bn) {
    std::uint64_t one_copy = static_cast<std::uint64_t>(c.c_out()) * c.c_in() *
                             c.kernel() * c.kernel();
    if (!c.is_zoo || phase == Phase::inference_lite) {
      pc.sources += one_copy;
    } else {
      pc.sources += static_cast<std::uint64_t>(c.zoo.m()) * one_copy;
      if (c.zoo.align_enabled) {
        pc.align += static_cast<std::uint64_t>(c.zoo.m()) *
                    static_cast<std::uint64_t>(c.c_out()) * c.c_out();
      }
      for (const auto& g : c.zoo.gates) {
        pc.gates += g.reduce_w.size() + g.reduce_b.size() + g.expand_w.size() +
                    g.expand_b.size();
      }
    }
    pc.bn += 2 * static_cast<std::uint64_t>(bn.p.channels());
  });
  pc.head = m.head_w.size() + m.head_b.size();
  return pc;
}

struct ComplexityRow {
  std::string layer;
  std::string phase;
  std::uint64_t base_macs = 0;
  std::uint64_t align_macs = 0;
  std::uint64_t gating_macs = 0;
  std::uint64_t agg_macs = 0;
  std::uint64_t params_sources = 0;
  std::uint64_t params_align = 0;
  std::uint64_t params_gates = 0;
  std::uint64_t params_bn = 0;
  std::uint64_t params_head = 0;

  std::uint64_t macs_total() const {
    return base_macs + align_macs + gating_macs + agg_macs;
  }
  std::uint64_t params_total() const {
    return params_sources + params_align + params_gates + params_bn + params_head;
  }
};

struct ComplexityReport {
  // Per-layer rows for each phase, ending with one "total" row per phase.
  std::vector<ComplexityRow> rows;
  // Worst-case gating envelope m*C_in^2 per zoo layer (train-phase figure).
  std::map<std::string, std::uint64_t> gating_envelope;

  const ComplexityRow& at(const std::string& layer, Phase phase) const {
    for (const auto& r : rows) {
      if (r.layer == layer && r.phase == phase_name(phase)) return r;
    }
    throw ValueError("no complexity row for layer '" + layer + "' phase " +
                     phase_name(phase));
  }
};

// Per-sample MAC and parameter report across all three phases, matching what
// an instrumented single-sample forward actually counts per layer.
template <typename T>
ComplexityReport report_complexity(const Model<T>& model, int side = 0) {
  if (side == 0) side = model.config.side;
  if (side < 1) throw ValueError("input side must be positive");
  ComplexityReport rep;
  const Phase phases[] = {Phase::train, Phase::inference_full,
                          Phase::inference_lite};
  std::map<std::string, ComplexityRow> totals;
  for (Phase p : phases) {
    ComplexityRow t;
    t.layer = "total";
    t.phase = phase_name(p);
    totals[t.phase] = t;
  }

  int h = side, w = side;
  auto add_rows = [&](const ConvUnit<T>& c, const BnUnit<T>& bn, int in_h, int in_w) {
    LayerDims d;
    d.c_out = c.c_out();
    d.c_in = c.c_in();
    d.k = c.kernel();
    d.h = in_h;
    d.w = in_w;
    d.stride = c.stride;
    d.padding = c.padding;
    d.m = c.is_zoo ? c.zoo.m() : 1;
    std::uint64_t base = conv_base_macs(d);
    for (Phase p : phases) {
      ComplexityRow r;
      r.layer = c.name;
      r.phase = phase_name(p);
      r.base_macs = base;
      if (c.is_zoo && p != Phase::inference_lite) {
        int hidden = c.zoo.gates.empty() ? gate_hidden_dim(d.c_in)
                                         : c.zoo.gates[0].hidden();
        OverheadMacs o = adaagg_overhead_macs(d, p, hidden);
        bool frozen = c.zoo.mode == GateMode::frozen;
        r.align_macs = c.zoo.align_enabled && p == Phase::train ? o.align : 0;
        // Frozen gates evaluate no gating network; at inference a frozen
        // layer is used pre-collapsed, so its aggregation cost is gone too.
        r.gating_macs = frozen ? 0 : o.gating;
        r.agg_macs = frozen && p == Phase::inference_full ? 0 : o.agg;
        if (p == Phase::train) rep.gating_envelope[c.name] = o.gating_envelope;
      }
      std::uint64_t one_copy = static_cast<std::uint64_t>(d.c_out) * d.c_in *
                               d.k * d.k;
      if (!c.is_zoo || p == Phase::inference_lite) {
        r.params_sources = one_copy;
      } else {
        r.params_sources = static_cast<std::uint64_t>(d.m) * one_copy;
        if (c.zoo.align_enabled) {
          r.params_align = static_cast<std::uint64_t>(d.m) *
                           static_cast<std::uint64_t>(d.c_out) * d.c_out;
        }
        for (const auto& g : c.zoo.gates) {
          r.params_gates += g.reduce_w.size() + g.reduce_b.size() +
                            g.expand_w.size() + g.expand_b.size();
        }
      }
      r.params_bn = 2 * static_cast<std::uint64_t>(bn.p.channels());
      rep.rows.push_back(r);
      ComplexityRow& t = totals[r.phase];
      t.base_macs += r.base_macs;
      t.align_macs += r.align_macs;
      t.gating_macs += r.gating_macs;
      t.agg_macs += r.agg_macs;
      t.params_sources += r.params_sources;
      t.params_align += r.params_align;
      t.params_gates += r.params_gates;
      t.params_bn += r.params_bn;
      t.params_head += r.params_head;
    }
  };

  add_rows(model.stem, model.stem_bn, h, w);
  for (const auto& stage : model.stages) {
    for (const auto& block : stage) {
      int in_h = h, in_w = w;
      add_rows(block.conv1, block.bn1, in_h, in_w);
      h = static_cast<int>(conv_out_side(in_h, block.conv1.kernel(),
                                         block.conv1.stride, block.conv1.padding));
      w = static_cast<int>(conv_out_side(in_w, block.conv1.kernel(),
                                         block.conv1.stride, block.conv1.padding));
      add_rows(block.conv2, block.bn2, h, w);
      if (block.has_down) add_rows(block.down_conv, block.down_bn, in_h, in_w);
    }
  }
  // Head: global average pool over the final plane plus the affine layer.
  std::uint64_t c_last = static_cast<std::uint64_t>(model.last_channels());
  std::uint64_t head_macs = c_last * static_cast<std::uint64_t>(h) * w +
                            c_last * static_cast<std::uint64_t>(model.config.classes);
  for (Phase p : phases) {
    ComplexityRow r;
    r.layer = "head";
    r.phase = phase_name(p);
    r.base_macs = head_macs;
    r.params_head = model.head_w.size() + model.head_b.size();
    rep.rows.push_back(r);
    ComplexityRow& t = totals[r.phase];
    t.base_macs += r.base_macs;
    t.params_head += r.params_head;
  }
  for (Phase p : phases) rep.rows.push_back(totals[phase_name(p)]);
  return rep;
}

}  // namespace zootune
