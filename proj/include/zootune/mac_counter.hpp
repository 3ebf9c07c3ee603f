#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace zootune {

// Cost attribution groups for multiply-accumulate accounting. `base` is the
// layer's own data path, the other three are the adaptive-aggregation
// overheads (weight alignment, gate evaluation, weighted weight sum).
enum class MacBucket { base, align, gating, agg };

// Counts multiply-accumulates actually executed by the numeric kernels,
// attributed per layer and bucket. Serves as the measurement oracle the
// analytic complexity report is checked against.
struct MacCounter {
  struct Buckets {
    std::uint64_t base = 0;
    std::uint64_t align = 0;
    std::uint64_t gating = 0;
    std::uint64_t agg = 0;

    std::uint64_t total() const { return base + align + gating + agg; }
  };

  std::map<std::string, Buckets> per_layer;

  void add(const std::string& layer, MacBucket bucket, std::uint64_t n) {
    Buckets& b = per_layer[layer];
    switch (bucket) {
      case MacBucket::base: b.base += n; break;
      case MacBucket::align: b.align += n; break;
      case MacBucket::gating: b.gating += n; break;
      case MacBucket::agg: b.agg += n; break;
    }
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& [name, b] : per_layer) t += b.total();
    return t;
  }

  void reset() { per_layer.clear(); }
};

// Nullable counting context threaded through the kernels. Kernels count the
// same quantity no matter the caller; the caller picks layer and bucket.
struct CountScope {
  MacCounter* counter = nullptr;
  std::string layer;
  MacBucket bucket = MacBucket::base;

  CountScope() = default;
  CountScope(MacCounter* c, std::string l, MacBucket b)
      : counter(c), layer(std::move(l)), bucket(b) {}

  void add(std::uint64_t n) const {
    if (counter != nullptr) counter->add(layer, bucket, n);
  }
};

}  // namespace zootune
