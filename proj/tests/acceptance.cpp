// Acceptance suite: one line per criterion, PASS/FAIL, nonzero exit on any
// failure. Each check is self-contained and prints the measured quantities
// it judged, so a failure is diagnosable from the log alone.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "zootune/zootune.hpp"

#include "gradient_suite.hpp"
#include "oracles.hpp"

using namespace zootune;
using Clock = std::chrono::steady_clock;

namespace {

double secs(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

struct Harness {
  int failures = 0;
  int index = 0;

  void run(const std::string& name, const std::function<bool(std::string&)>& fn) {
    ++index;
    std::string detail;
    bool ok = false;
    try {
      ok = fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("%s  %2d. %s%s%s\n", ok ? "PASS" : "FAIL", index, name.c_str(),
                detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
};

std::map<std::string, Tensor<double>> to_map(Model<double>& m) {
  std::map<std::string, Tensor<double>> out;
  for (auto& [name, t] : m.named_tensors()) out[name] = *t;
  return out;
}

template <typename T>
std::map<std::string, Tensor<T>> body_of(Model<T>& m) {
  std::map<std::string, Tensor<T>> out;
  for (auto& [name, t] : m.named_tensors()) {
    if (name.rfind("head.", 0) == 0) continue;
    out[name] = *t;
  }
  return out;
}

Tensor<double> random_batch(int n, const BackboneConfig& c, Rng& rng) {
  Tensor<double> x({n, c.in_channels, c.side, c.side});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.0, 1.0);
  return x;
}

double max_rel(const Tensor<double>& a, const Tensor<double>& b, double floor = 1.0) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

// ---- criterion 2: warm-up equivalence ----

bool warmup_equivalence(std::string& detail) {
  BackboneConfig c;  // desk default
  std::vector<std::map<std::string, Tensor<double>>> zoo;
  for (int i = 0; i < 3; ++i) {
    Model<double> src = build_plain_backbone<double>(c, 40 + static_cast<std::uint64_t>(i));
    // Move running stats off their fresh defaults so BN averaging is exercised.
    src.for_each_conv([&](ConvUnit<double>&, BnUnit<double>& bn) {
      for (std::size_t j = 0; j < bn.p.running_mean.size(); ++j) {
        bn.p.running_mean[j] = 0.02 * static_cast<double>(i + 1) * (j % 5);
        bn.p.running_var[j] = 1.0 + 0.07 * static_cast<double>((i + j) % 4);
      }
    });
    zoo.push_back(to_map(src));
  }
  Model<double> zm = convert_to_zoo<double>(c, zoo, 99, GateMode::per_sample, true);

  std::map<std::string, Tensor<double>> mean_map;
  for (auto& [name, t] : zoo[0]) {
    if (name.rfind("head.", 0) == 0) continue;
    Tensor<double> acc = t;
    for (int i = 1; i < 3; ++i) {
      const Tensor<double>& other = zoo[static_cast<std::size_t>(i)].at(name);
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += other[j];
    }
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] /= 3.0;
    mean_map[name] = std::move(acc);
  }
  Model<double> mean_model = load_plain_from_map<double>(c, mean_map);
  mean_model.head_w = zm.head_w;  // both use the reinitialized target head
  mean_model.head_b = zm.head_b;

  Rng rng(7);
  double worst = 0.0;
  for (int b = 0; b < 10; ++b) {
    Tensor<double> x = random_batch(4, c, rng);
    worst = std::max(worst, max_rel(forward_eval(zm, x), forward_eval(mean_model, x)));
  }
  detail = "max rel diff " + format_g(worst, 3) + " over 10 batches (limit 1e-5)";
  return worst < 1e-5;
}

// ---- criterion 3: aggregation oracle ----

AdaAggLayer<double> random_layer(int m, int c_in, int c_out, int k, bool bias,
                                 bool align, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor<double>> ws, bs;
  for (int i = 0; i < m; ++i) {
    Tensor<double> w({c_out, c_in, k, k});
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = rng.uniform(-0.5, 0.5);
    ws.push_back(std::move(w));
  }
  if (bias) {
    for (int i = 0; i < m; ++i) {
      Tensor<double> b({c_out});
      for (std::size_t j = 0; j < b.size(); ++j) b[j] = rng.uniform(-0.2, 0.2);
      bs.push_back(std::move(b));
    }
  }
  Rng gate_rng(seed + 1);
  AdaAggLayer<double> layer =
      make_adaagg_layer<double>(std::move(ws), std::move(bs), 1, k / 2, align, gate_rng);
  // Move gates and aligns off the functional init so every path is active.
  for (auto& g : layer.gates) {
    for (std::size_t i = 0; i < g.expand_w.size(); ++i) g.expand_w[i] = rng.uniform(-0.8, 0.8);
    for (std::size_t i = 0; i < g.reduce_b.size(); ++i) g.reduce_b[i] = rng.uniform(-0.3, 0.3);
  }
  for (auto& t : layer.aligns) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += rng.uniform(-0.15, 0.15);
  }
  return layer;
}

std::vector<std::vector<double>> gate_table(const AdaAggLayer<double>& layer,
                                            const Tensor<double>& x) {
  std::vector<std::vector<double>> table;
  for (const auto& g : layer.gates) {
    Tensor<double> v = gate_forward(g, x);
    table.emplace_back(v.values().begin(), v.values().end());
  }
  return table;
}

bool aggregation_oracle(std::string& detail) {
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::uint64_t seed = 500 + static_cast<std::uint64_t>(trial) * 31;
    Rng rng(seed + 2);
    int m = 2 + static_cast<int>(rng.uniform_int(3));
    int c_in = 2 + static_cast<int>(rng.uniform_int(4));
    int c_out = 2 + static_cast<int>(rng.uniform_int(4));
    int k = trial % 4 == 3 ? 1 : 3;
    bool bias = trial % 2 == 0;
    bool align = trial % 5 != 0;
    AdaAggLayer<double> layer = random_layer(m, c_in, c_out, k, bias, align, seed);

    int n = 1 + static_cast<int>(rng.uniform_int(4));
    int side = k == 1 ? 3 : 5;
    Tensor<double> x({n, c_in, side, side});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);

    Tensor<double> got = adaagg_forward_eval(layer, x);
    Tensor<double> want = oracles::adaagg_reference(layer, x, gate_table(layer, x));
    worst = std::max(worst, oracles::max_rel_diff(got, want, 1e-6));
  }
  detail = "50 trials, max rel diff " + format_g(worst, 3) + " (limit 1e-10)";
  return worst < 1e-10;
}

// ---- criterion 4: per-sample / batch equivalence ----

bool per_sample_batch_equivalence(std::string& detail) {
  BackboneConfig c;
  std::vector<std::map<std::string, Tensor<double>>> zoo;
  for (int i = 0; i < 2; ++i) {
    Model<double> src = build_plain_backbone<double>(c, 60 + static_cast<std::uint64_t>(i));
    zoo.push_back(to_map(src));
  }
  Model<double> zm = convert_to_zoo<double>(c, zoo, 8, GateMode::per_sample, true);
  // Push the gates off uniform so per-sample values genuinely differ.
  zm.for_each_conv([](ConvUnit<double>& cu, BnUnit<double>&) {
    if (!cu.is_zoo) return;
    Rng r(17);
    for (auto& g : cu.zoo.gates) {
      for (std::size_t i = 0; i < g.expand_w.size(); ++i)
        g.expand_w[i] = r.uniform(-0.6, 0.6);
    }
  });

  // Layer level, in isolation: batched forward against an explicit loop.
  double layer_worst = 0.0;
  for (int batch : {1, 4, 16}) {
    AdaAggLayer<double> layer =
        random_layer(3, 4, 5, 3, true, true, 900 + static_cast<std::uint64_t>(batch));
    Rng lrng(910 + static_cast<std::uint64_t>(batch));
    Tensor<double> lx({batch, 4, 6, 6});
    for (std::size_t i = 0; i < lx.size(); ++i) lx[i] = lrng.uniform(-1.0, 1.0);
    Tensor<double> whole = adaagg_forward_eval(layer, lx);
    std::size_t plane = whole.size() / static_cast<std::size_t>(batch);
    for (int j = 0; j < batch; ++j) {
      Tensor<double> xj({1, 4, 6, 6});
      const double* src = lx.data() + static_cast<std::size_t>(j) * xj.size();
      for (std::size_t i = 0; i < xj.size(); ++i) xj[i] = src[i];
      Tensor<double> yj = adaagg_forward_eval(layer, xj);
      for (std::size_t i = 0; i < plane; ++i) {
        double a = whole[static_cast<std::size_t>(j) * plane + i];
        double b = yj[i];
        layer_worst = std::max(
            layer_worst, std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-6}));
      }
    }
  }

  // Model level: full-network logits.
  Rng rng(23);
  double worst = 0.0;
  std::size_t sample_size = static_cast<std::size_t>(c.in_channels) *
                            static_cast<std::size_t>(c.side) *
                            static_cast<std::size_t>(c.side);
  for (int n : {1, 5, 16}) {
    Tensor<double> x = random_batch(n, c, rng);
    Tensor<double> batched = forward_eval(zm, x);
    for (int j = 0; j < n; ++j) {
      Tensor<double> xj({1, c.in_channels, c.side, c.side});
      const double* src = x.data() + static_cast<std::size_t>(j) * sample_size;
      for (std::size_t i = 0; i < sample_size; ++i) xj[i] = src[i];
      Tensor<double> one = forward_eval(zm, xj);
      for (int cls = 0; cls < c.classes; ++cls) {
        double a = batched[static_cast<std::size_t>(j * c.classes + cls)];
        double b = one[static_cast<std::size_t>(cls)];
        double denom = std::max({std::fabs(a), std::fabs(b), 1.0});
        worst = std::max(worst, std::fabs(a - b) / denom);
      }
    }
  }
  detail = "layer-level max rel diff " + format_g(layer_worst, 3) +
           " (limit 1e-10); model logits over batches 1/5/16 max rel diff " +
           format_g(worst, 3) + " (limit 1e-6)";
  return layer_worst < 1e-10 && worst < 1e-6;
}

// ---- shared small transfer task for criteria 5, 6 ----

struct LiteRun {
  BackboneConfig config;
  TrainedModel<double> tuned;
  Dataset test;
};

LiteRun run_lite() {
  TaskSpec spec;
  spec.factors = {{Factor::shape, {0, 1}}, {Factor::orientation, {0, 1}}};
  spec.noise = 0.05;
  spec.samples_per_class = 24;
  spec.seed = 4;
  spec.side = 12;
  spec.channels = 1;
  Dataset task = gen_synthetic_task(spec);
  auto [train, test] = split_train_test(task, 0.75);

  BackboneConfig c;
  c.in_channels = 1;
  c.stem_channels = 4;
  c.stages = {{1, 4}, {1, 8}};
  c.side = spec.side;

  std::vector<std::map<std::string, Tensor<double>>> zoo;
  for (int i = 0; i < 3; ++i) {
    BackboneConfig sc = c;
    sc.classes = task.classes;
    TrainConfig scfg;
    scfg.iterations = 40;
    scfg.batch = 8;
    scfg.seed = 70 + static_cast<std::uint64_t>(i);
    auto trained = train_source<double>(task, scfg, sc);
    zoo.push_back(body_of(trained.model));
  }

  LiteRun out;
  out.config = c;
  out.config.classes = task.classes;
  TrainConfig cfg;
  cfg.iterations = 60;
  cfg.batch = 8;
  cfg.seed = 5;
  cfg.mode = TuneMode::lite;
  out.tuned = zoo_tune<double>(out.config, zoo, train, cfg, &test);
  out.test = std::move(test);
  return out;
}

// ---- criterion 5: temporal-ensemble correctness ----

bool te_correctness(std::string& detail, const LiteRun& lite) {
  // Worked sequence: 0.5 seeds the average, then 0.9*0.5 + 0.1*0.3 = 0.48.
  TEState te;
  te.lambda = 0.9;
  te_update(te, "layer", std::vector<double>{0.5});
  if (std::fabs(te.values.at("layer")[0] - 0.5) > 1e-15) {
    detail = "first update did not seed with the batch mean";
    return false;
  }
  te_update(te, "layer", std::vector<double>{0.3});
  double worked = te.values.at("layer")[0];
  if (std::fabs(worked - 0.48) > 1e-12) {
    detail = "sequence [0.5, 0.3] gave " + format_g(worked, 17);
    return false;
  }

  // Replaying the logged batch means through the closed form reproduces the
  // stored running averages for every layer of a real lite run.
  const RunRecord& rec = lite.tuned.record;
  std::map<std::string, std::map<int, std::vector<double>>> by_layer;
  for (const GateTraceRow& row : rec.gate_trace) {
    auto& per_iter = by_layer[row.layer][row.iteration];
    if (per_iter.size() <= static_cast<std::size_t>(row.source)) {
      per_iter.resize(static_cast<std::size_t>(row.source) + 1, 0.0);
    }
    per_iter[static_cast<std::size_t>(row.source)] = row.gate_mean;
  }
  double worst = 0.0;
  for (const auto& [layer, per_iter] : by_layer) {
    std::size_t m = per_iter.begin()->second.size();
    for (std::size_t s = 0; s < m; ++s) {
      std::vector<double> means;
      for (const auto& [iter, gates] : per_iter) means.push_back(gates[s]);
      double replayed = oracles::te_closed_form(means, 0.9);
      double stored = lite.tuned.te.values.at(layer)[s];
      worst = std::max(worst, std::fabs(replayed - stored));
    }
  }
  detail = "worked value 0.48 exact; replay max abs diff " + format_g(worst, 3) +
           " over " + std::to_string(by_layer.size()) + " layers (limit 1e-10)";
  return worst < 1e-10;
}

// ---- criterion 6: collapse equivalence ----

bool collapse_equivalence(std::string& detail, LiteRun& lite) {
  Model<double> collapsed = collapse_model(lite.tuned.model, lite.tuned.te);
  EvalPlan<double> plan = prepare_eval(lite.tuned.model, &lite.tuned.te);

  double worst = 0.0;
  Tensor<double> x = gather_images<double>(
      lite.test, [&] {
        std::vector<int> idx(static_cast<std::size_t>(lite.test.n()));
        for (int i = 0; i < lite.test.n(); ++i) idx[static_cast<std::size_t>(i)] = i;
        return idx;
      }());
  Tensor<double> via_plain = forward_eval(collapsed, x);
  Tensor<double> via_plan = forward_eval(lite.tuned.model, x, &plan);
  for (std::size_t i = 0; i < via_plain.size(); ++i) {
    worst = std::max(worst, std::fabs(via_plain[i] - via_plan[i]));
  }

  double acc_plain = evaluate_accuracy(collapsed, lite.test);
  double acc_zoo = evaluate_accuracy(lite.tuned.model, lite.test, &lite.tuned.te);
  detail = "max abs logit diff " + format_g(worst, 3) + " (limit 1e-12); accuracy " +
           format_g(acc_plain) + " vs " + format_g(acc_zoo);
  return worst <= 1e-12 && acc_plain == acc_zoo;
}

// ---- criterion 7: complexity equalities ----

bool complexity_equalities(std::string& detail) {
  BackboneConfig c;
  std::vector<std::map<std::string, Tensor<double>>> zoo;
  for (int i = 0; i < 2; ++i) {
    Model<double> src = build_plain_backbone<double>(c, 80 + static_cast<std::uint64_t>(i));
    zoo.push_back(to_map(src));
  }
  Model<double> zm = convert_to_zoo<double>(c, zoo, 3, GateMode::per_sample, true);
  ComplexityReport rep = report_complexity(zm);
  Tensor<double> x({1, c.in_channels, c.side, c.side});

  // (a) measured == analytic per layer, training-phase forward.
  MacCounter counter;
  forward_eval(zm, x, static_cast<const EvalPlan<double>*>(nullptr), &counter);
  for (const ComplexityRow& row : rep.rows) {
    if (row.phase != phase_name(Phase::train) || row.layer == "total") continue;
    MacCounter::Buckets got;
    auto it = counter.per_layer.find(row.layer);
    if (it != counter.per_layer.end()) got = it->second;
    if (got.base != row.base_macs || got.align != row.align_macs ||
        got.gating != row.gating_macs || got.agg != row.agg_macs) {
      detail = "train-phase mismatch at layer " + row.layer;
      return false;
    }
  }

  // (a') measured == analytic per layer, steady-state full inference.
  MacCounter inf_counter;
  EvalPlan<double> plan = prepare_eval(zm);
  forward_eval(zm, x, &plan, &inf_counter);
  std::uint64_t zoo_total = 0, overhead = 0;
  for (const ComplexityRow& row : rep.rows) {
    if (row.phase != phase_name(Phase::inference_full)) continue;
    if (row.layer == "total") {
      zoo_total = row.macs_total();
      overhead = row.align_macs + row.gating_macs + row.agg_macs;
      continue;
    }
    MacCounter::Buckets got;
    auto it = inf_counter.per_layer.find(row.layer);
    if (it != inf_counter.per_layer.end()) got = it->second;
    if (got.base != row.base_macs || got.align != row.align_macs ||
        got.gating != row.gating_macs || got.agg != row.agg_macs) {
      detail = "inference-phase mismatch at layer " + row.layer;
      return false;
    }
  }

  // (b) lite inference cost equals the plain backbone's exactly.
  Model<double> plain = build_plain_backbone<double>(c, 1);
  ComplexityReport prep = report_complexity(plain);
  std::uint64_t plain_total = 0;
  for (const ComplexityRow& row : prep.rows) {
    if (row.layer == "total" && row.phase == phase_name(Phase::inference_full)) {
      plain_total = row.macs_total();
    }
  }
  std::uint64_t lite_total = rep.at("total", Phase::inference_lite).macs_total();
  ParamCounts lite_params = count_params(zm, Phase::inference_lite);
  ParamCounts plain_params = count_params(plain, Phase::inference_full);
  if (lite_total != plain_total || lite_params.total() != plain_params.total()) {
    detail = "lite cost differs from plain backbone";
    return false;
  }

  // (c) full-inference overhead over plain equals the analytic breakdown.
  if (zoo_total != plain_total + overhead) {
    detail = "inference overhead " + std::to_string(zoo_total - plain_total) +
             " != analytic " + std::to_string(overhead);
    return false;
  }

  // (d) ensemble training cost is exactly m x one fine-tune.
  TaskSpec spec;
  spec.factors = {{Factor::shape, {0, 1}}};
  spec.samples_per_class = 12;
  spec.seed = 6;
  spec.side = c.side;
  spec.channels = c.in_channels;
  Dataset task = gen_synthetic_task(spec);
  BackboneConfig tc = c;
  tc.classes = task.classes;
  TrainConfig cfg;
  cfg.batch = 4;
  cfg.iterations = 3;
  cfg.seed = 2;
  MacCounter single, ensemble;
  BaselineSpec ft;
  ft.kind = BaselineKind::finetune_single;
  run_baseline<double>(tc, zoo, ft, task, task, cfg, &single);
  BaselineSpec ens;
  ens.kind = BaselineKind::ensemble;
  run_baseline<double>(tc, zoo, ens, task, task, cfg, &ensemble);
  if (single.total() == 0 || ensemble.total() != 2 * single.total()) {
    detail = "ensemble counter " + std::to_string(ensemble.total()) + " != 2 x " +
             std::to_string(single.total());
    return false;
  }

  detail = "per-layer train+inference counters exact; lite == plain (" +
           std::to_string(plain_total) + " MACs, " +
           std::to_string(plain_params.total()) + " params); overhead " +
           std::to_string(overhead) + " MACs; ensemble == 2x fine-tune";
  return true;
}

// ---- criterion 8: m=1 avg_agg reduces to plain fine-tuning ----

bool mode_reduction(std::string& detail) {
  TaskSpec spec;
  spec.factors = {{Factor::shape, {0, 1}}};
  spec.noise = 0.05;
  spec.samples_per_class = 40;
  spec.seed = 3;
  spec.side = 12;
  spec.channels = 1;
  Dataset task = gen_synthetic_task(spec);

  BackboneConfig c;
  c.in_channels = 1;
  c.stem_channels = 4;
  c.stages = {{1, 4}, {1, 8}};
  c.classes = task.classes;
  c.side = spec.side;

  Model<double> src = build_plain_backbone<double>(c, 55);
  std::vector<std::map<std::string, Tensor<double>>> zoo{body_of(src)};

  TrainConfig cfg;
  cfg.iterations = 200;
  cfg.batch = 8;
  cfg.seed = 9;
  cfg.mode = TuneMode::avg_agg;
  auto tuned = zoo_tune<double>(c, zoo, task, cfg);

  BaselineSpec ft;
  ft.kind = BaselineKind::finetune_single;
  auto baseline = run_baseline<double>(c, zoo, ft, task, task, cfg);

  const std::vector<double>& a = tuned.record.losses;
  const std::vector<double>& b = baseline.record.losses;
  if (a.size() != 200 || b.size() != 200) {
    detail = "expected 200 per-iteration losses";
    return false;
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), 1.0});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  detail = "200 iterations, max per-iteration loss diff " + format_g(worst, 3) +
           " (limit 1e-5)";
  return worst < 1e-5;
}

// ---- criteria 9 and 10: desk transfer and zoo-size trend ----

struct TransferResults {
  double full3 = 0, no_align = 0, avg = 0;
  double ft[3] = {0, 0, 0};
  double full1 = 0, full2 = 0;
  double wall = 0;
  bool ok = false;
};

TransferResults run_transfer() {
  using Real = float;  // matches the CLI's compute precision
  auto t0 = Clock::now();
  TransferResults r;

  TaskSpec shape_spec;
  shape_spec.factors = {{Factor::shape, {0, 1, 2, 3}}};
  shape_spec.noise = 0.1;
  shape_spec.samples_per_class = 40;
  shape_spec.seed = 101;
  TaskSpec orient_spec = shape_spec;
  orient_spec.factors = {{Factor::orientation, {0, 1, 2, 3}}};
  orient_spec.seed = 102;
  TaskSpec color_spec = shape_spec;
  color_spec.factors = {{Factor::color, {0, 1, 2, 3}}};
  color_spec.seed = 103;

  TaskSpec target_spec;
  target_spec.factors = {{Factor::shape, {0, 1}},
                         {Factor::orientation, {0, 1}},
                         {Factor::color, {0, 1}}};
  target_spec.noise = 0.03;
  target_spec.samples_per_class = 64;
  target_spec.seed = 200;
  Dataset target = gen_synthetic_task(target_spec);
  auto [train, test] = split_train_test(target, 0.75);

  BackboneConfig base;
  base.stem_channels = 8;
  base.stages = {{2, 8}, {2, 16}};

  std::vector<std::map<std::string, Tensor<Real>>> zoo;
  for (const TaskSpec* spec : {&shape_spec, &orient_spec, &color_spec}) {
    Dataset task = gen_synthetic_task(*spec);
    BackboneConfig c = base;
    c.classes = task.classes;
    TrainConfig cfg;
    cfg.iterations = 400;
    cfg.batch = 16;
    cfg.seed = 300 + static_cast<std::uint64_t>(zoo.size());
    auto trained = train_source<Real>(task, cfg, c);
    zoo.push_back(body_of(trained.model));
  }

  BackboneConfig tgt = base;
  tgt.classes = target.classes;

  auto tune_acc = [&](TuneMode mode, int zoo_n, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.iterations = 1000;
    cfg.batch = 12;
    cfg.seed = seed;
    cfg.mode = mode;
    std::vector<std::map<std::string, Tensor<Real>>> z(zoo.begin(),
                                                       zoo.begin() + zoo_n);
    return zoo_tune<Real>(tgt, z, train, cfg, &test).record.final_metric;
  };
  auto ft_acc = [&](int idx, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.iterations = 1000;
    cfg.batch = 12;
    cfg.seed = seed;
    BaselineSpec spec;
    spec.kind = BaselineKind::finetune_single;
    spec.index = idx;
    return run_baseline<Real>(tgt, zoo, spec, train, test, cfg).metric;
  };

  const int kSeeds = 3;
  for (std::uint64_t s = 1; s <= kSeeds; ++s) {
    r.full3 += tune_acc(TuneMode::full, 3, s);
    r.no_align += tune_acc(TuneMode::no_align, 3, s);
    r.avg += tune_acc(TuneMode::avg_agg, 3, s);
    for (int i = 0; i < 3; ++i) r.ft[i] += ft_acc(i, s);
    r.full1 += tune_acc(TuneMode::full, 1, s);
    r.full2 += tune_acc(TuneMode::full, 2, s);
  }
  r.full3 /= kSeeds;
  r.no_align /= kSeeds;
  r.avg /= kSeeds;
  for (double& v : r.ft) v /= kSeeds;
  r.full1 /= kSeeds;
  r.full2 /= kSeeds;
  r.wall = secs(t0, Clock::now());
  r.ok = true;
  return r;
}

bool desk_transfer(std::string& detail, const TransferResults& r) {
  double max_ft = std::max({r.ft[0], r.ft[1], r.ft[2]});
  bool order = r.full3 >= r.no_align && r.no_align >= r.avg;
  bool vs_ft = r.full3 >= max_ft - 0.01;
  bool in_time = r.wall < 30.0 * 60.0;
  detail = "means: full " + format_g(r.full3, 4) + " >= no_align " +
           format_g(r.no_align, 4) + " >= avg_agg " + format_g(r.avg, 4) +
           "; max fine-tune " + format_g(max_ft, 4) + "; wall " +
           format_g(r.wall, 3) + "s (limit 1800)";
  return order && vs_ft && in_time;
}

bool zoo_size_trend(std::string& detail, const TransferResults& r) {
  bool step1 = r.full2 >= r.full1 - 0.01;
  bool step2 = r.full3 >= r.full2 - 0.01;
  detail = "mean accuracy 1->2->3 sources: " + format_g(r.full1, 4) + " -> " +
           format_g(r.full2, 4) + " -> " + format_g(r.full3, 4) +
           " (no step may drop more than 0.01)";
  return step1 && step2;
}

// ---- criterion 11: CLI determinism ----

#ifndef ZOOTUNE_CLI_PATH
#define ZOOTUNE_CLI_PATH "./zootune"
#endif

bool cli_determinism(std::string& detail) {
  namespace fs = std::filesystem;
  fs::path root = fs::temp_directory_path() /
                  ("zootune_accept_" + std::to_string(std::rand()));
  fs::create_directories(root);
  struct Cleanup {
    fs::path p;
    ~Cleanup() { std::error_code ec; fs::remove_all(p, ec); }
  } cleanup{root};

  auto sh = [&](const std::string& args) {
    std::string cmd = std::string("\"") + ZOOTUNE_CLI_PATH + "\" " + args +
                      " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) && WEXITSTATUS(status) == 0;
  };
  auto p = [&](const std::string& rel) { return (root / rel).string(); };

  // One pipeline: synth -> two pretrains -> full tune -> lite tune ->
  // collapse -> eval, all artifacts kept. Run it twice into separate
  // directories with identical flags and compare every byte.
  auto pipeline = [&](const std::string& dir) {
    fs::create_directories(root / dir);
    auto d = [&](const std::string& rel) { return p(dir + "/" + rel); };
    std::string train = d("train.zood"), test = d("test.zood");
    if (!sh("synth --factors shape:01,orientation:01 --noise 0.05 --spc 16 "
            "--side 8 --channels 1 --seed 31 --train-out \"" + train +
            "\" --test-out \"" + test + "\""))
      return false;
    for (int i = 1; i <= 2; ++i) {
      if (!sh("pretrain --data \"" + train + "\" --stem 4 --stages 1x4,1x8 "
              "--batch 8 --iterations 12 --seed " + std::to_string(i) +
              " --out \"" + d("s" + std::to_string(i) + ".zooc") + "\""))
        return false;
    }
    std::string zoo = "\"" + d("s1.zooc") + "\",\"" + d("s2.zooc") + "\"";
    if (!sh("tune --zoo " + zoo + " --data \"" + train + "\" --eval-data \"" +
            test + "\" --mode full --batch 8 --iterations 10 --seed 7 "
            "--eval-every 5 --out \"" + d("full.zooc") + "\" --gates-csv \"" +
            d("full_gates.csv") + "\" --run-csv \"" + d("full_run.csv") + "\""))
      return false;
    if (!sh("tune --zoo " + zoo + " --data \"" + train + "\" --eval-data \"" +
            test + "\" --mode lite --batch 8 --iterations 10 --seed 7 --out \"" +
            d("lite.zooc") + "\" --te-out \"" + d("te.zooc") + "\" --run-csv \"" +
            d("lite_run.csv") + "\""))
      return false;
    if (!sh("collapse --model \"" + d("lite.zooc") + "\" --te \"" + d("te.zooc") +
            "\" --out \"" + d("plain.zooc") + "\""))
      return false;
    if (!sh("eval --model \"" + d("plain.zooc") + "\" --data \"" + test +
            "\" --out \"" + d("metric.csv") + "\""))
      return false;
    if (!sh("baseline --zoo " + zoo + " --kind avg-agg --data \"" + train +
            "\" --eval-data \"" + test + "\" --batch 8 --iterations 10 --seed 7 "
            "--out \"" + d("avg.zooc") + "\" --run-csv \"" + d("avg_run.csv") + "\""))
      return false;
    return true;
  };

  if (!pipeline("a") || !pipeline("b")) {
    detail = "pipeline run failed";
    return false;
  }
  const char* files[] = {"train.zood",    "test.zood",    "s1.zooc",
                         "s2.zooc",       "full.zooc",    "full_gates.csv",
                         "full_run.csv",  "lite.zooc",    "te.zooc",
                         "lite_run.csv",  "plain.zooc",   "metric.csv",
                         "avg.zooc",      "avg_run.csv"};
  for (const char* f : files) {
    std::string a = read_file(p(std::string("a/") + f));
    std::string b = read_file(p(std::string("b/") + f));
    if (a != b || a.empty()) {
      detail = std::string("artifact differs between reruns: ") + f;
      return false;
    }
  }
  detail = std::to_string(std::size(files)) +
           " artifacts byte-identical across rerun (checkpoints, TE state, CSVs)";
  return true;
}

}  // namespace

int main() {
  Harness h;

  h.run("gradient suite: finite differences across layer types", [](std::string& d) {
    auto t0 = Clock::now();
    gradsuite::SuiteResult r = gradsuite::run_gradient_suite(20, 1e-4);
    double wall = secs(t0, Clock::now());
    d = std::to_string(r.entries_checked) + " entries over 20 seeds, max rel err " +
        format_g(r.max_rel_err, 3) + " (limit 1e-4), " + format_g(wall, 3) +
        "s (limit 120)";
    return r.pass && wall < 120.0;
  });

  h.run("warm-up equivalence: fresh zoo equals mean of sources", warmup_equivalence);
  h.run("gated aggregation matches the brute-force oracle", aggregation_oracle);
  h.run("per-sample gating: batched equals single-sample loop",
        per_sample_batch_equivalence);

  LiteRun lite = run_lite();
  h.run("temporal ensemble: worked sequence and replayed trace",
        [&](std::string& d) { return te_correctness(d, lite); });
  h.run("collapse equals frozen-gate evaluation",
        [&](std::string& d) { return collapse_equivalence(d, lite); });

  h.run("complexity: counters, lite parity, overhead, ensemble cost",
        complexity_equalities);
  h.run("single-source uniform aggregation reduces to plain fine-tuning",
        mode_reduction);

  TransferResults transfer = run_transfer();
  h.run("desk transfer: gating and alignment orderings hold",
        [&](std::string& d) { return desk_transfer(d, transfer); });
  h.run("zoo-size trend: accuracy does not degrade as sources are added",
        [&](std::string& d) { return zoo_size_trend(d, transfer); });

  h.run("CLI determinism: identical flags reproduce identical bytes",
        cli_determinism);

  if (h.failures > 0) {
    std::printf("%d criterion(s) failed\n", h.failures);
    return 1;
  }
  std::printf("all %d criteria passed\n", h.index);
  return 0;
}
