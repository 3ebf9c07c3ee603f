#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "zootune/backbone.hpp"
#include "zootune/dataset.hpp"
#include "zootune/errors.hpp"
#include "zootune/graph.hpp"
#include "zootune/rng.hpp"
#include "zootune/tensor.hpp"
#include "zootune/zoo_layers.hpp"

namespace zootune {

enum class TuneMode { full, lite, avg_agg, no_align };

inline const char* tune_mode_name(TuneMode m) {
  switch (m) {
    case TuneMode::full: return "full";
    case TuneMode::lite: return "lite";
    case TuneMode::avg_agg: return "avg-agg";
    case TuneMode::no_align: return "no-align";
  }
  throw ValueError("unknown tune mode");
}

inline TuneMode tune_mode_from_name(const std::string& s) {
  if (s == "full") return TuneMode::full;
  if (s == "lite") return TuneMode::lite;
  if (s == "avg-agg" || s == "avg_agg") return TuneMode::avg_agg;
  if (s == "no-align" || s == "no_align") return TuneMode::no_align;
  throw ConfigError("unknown mode '" + s + "' (want full|lite|avg-agg|no-align)");
}

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  int batch = 16;
  int iterations = 1000;
  double decay_factor = 0.1;  // applied at 40% and 80% of the run
  std::uint64_t seed = 1;
  TuneMode mode = TuneMode::full;
  double weight_decay = 0.0;
  int eval_every = 0;  // 0: evaluate only at the end
};

inline void validate_train_config(const TrainConfig& c) {
  if (!(c.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (c.batch < 2) throw ConfigError("batch size must be at least 2");
  if (c.iterations < 1) throw ConfigError("iterations must be at least 1");
  if (!(c.decay_factor > 0.0 && c.decay_factor <= 1.0))
    throw ConfigError("decay factor must lie in (0,1]");
  if (c.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (c.eval_every < 0) throw ConfigError("eval interval must be non-negative");
}

// Step decay at 40% and 80% of the schedule (0-based iteration index).
inline double lr_at(const TrainConfig& c, int iteration) {
  double lr = c.lr;
  int m1 = c.iterations * 2 / 5;
  int m2 = c.iterations * 4 / 5;
  if (m1 > 0 && iteration >= m1) lr *= c.decay_factor;
  if (m2 > 0 && iteration >= m2) lr *= c.decay_factor;
  return lr;
}

struct EvalPoint {
  int iteration = 0;
  double train_loss = 0.0;
  double eval_metric = 0.0;
};

struct GateTraceRow {
  int iteration = 0;
  std::string layer;
  int source = 0;
  double gate_mean = 0.0;
};

struct RunRecord {
  std::vector<EvalPoint> eval_points;     // iteration-ordered
  std::vector<GateTraceRow> gate_trace;   // every iteration, layer x source
  std::vector<double> losses;             // per-iteration training loss
  double final_metric = 0.0;
  double wall_seconds = 0.0;
};

// v <- momentum*v + g + wd*p; p <- p - lr*v, elementwise per tensor.
template <typename T>
void sgd_momentum_step(const std::vector<ParamRef<T>>& params,
                       const std::vector<Tensor<T>>& grads, std::vector<Tensor<T>>& velocity,
                       double lr, double momentum, double weight_decay) {
  if (grads.size() != params.size() || velocity.size() != params.size()) {
    throw ValueError("optimizer registries disagree: " + std::to_string(params.size()) +
                     " params, " + std::to_string(grads.size()) + " grads, " +
                     std::to_string(velocity.size()) + " velocities");
  }
  const T mu = static_cast<T>(momentum);
  const T eta = static_cast<T>(lr);
  const T wd = static_cast<T>(weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].tensor;
    const Tensor<T>& g = grads[i];
    Tensor<T>& v = velocity[i];
    if (!g.same_shape(p) || !v.same_shape(p)) {
      throw ShapeError("optimizer shape mismatch for '" + params[i].name + "'");
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = mu * v[j] + g[j] + wd * p[j];
      p[j] = p[j] - eta * v[j];
    }
  }
}

namespace detail {

// Seeded epoch shuffler emitting full batches only (any tail shorter than the
// batch size is dropped and a fresh shuffled epoch begins).
class BatchStream {
 public:
  BatchStream(int n, int batch, std::uint64_t seed)
      : rng_(seed), batch_(batch), perm_(static_cast<std::size_t>(n)) {
    if (n < batch) {
      throw ConfigError("dataset has " + std::to_string(n) + " samples, smaller than batch " +
                        std::to_string(batch));
    }
    for (int i = 0; i < n; ++i) perm_[static_cast<std::size_t>(i)] = i;
    pos_ = perm_.size();  // force a shuffle on first use
  }

  std::vector<int> next() {
    if (pos_ + static_cast<std::size_t>(batch_) > perm_.size()) {
      rng_.shuffle(perm_);
      pos_ = 0;
    }
    std::vector<int> out(perm_.begin() + static_cast<std::ptrdiff_t>(pos_),
                         perm_.begin() + static_cast<std::ptrdiff_t>(pos_) + batch_);
    pos_ += static_cast<std::size_t>(batch_);
    return out;
  }

 private:
  Rng rng_;
  int batch_;
  std::vector<int> perm_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Top-1 accuracy with ties broken toward the lowest class index. When `te` is
// supplied the model is evaluated through its collapsed (frozen) path.
template <typename T>
double evaluate_accuracy(const Model<T>& m, const Dataset& data, const TEState* te = nullptr,
                         int eval_batch = 64, MacCounter* counter = nullptr) {
  if (data.n() == 0) throw ValueError("cannot evaluate on an empty dataset");
  if (data.classes != m.config.classes) {
    throw ShapeError("dataset has " + std::to_string(data.classes) + " classes, model expects " +
                     std::to_string(m.config.classes));
  }
  EvalPlan<T> plan = prepare_eval(m, te);
  int correct = 0;
  for (int start = 0; start < data.n(); start += eval_batch) {
    int count = std::min(eval_batch, data.n() - start);
    std::vector<int> idx(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    Tensor<T> images = gather_images<T>(data, idx);
    Tensor<T> logits = forward_eval(m, images, &plan, counter);
    for (int i = 0; i < count; ++i) {
      int best = 0;
      for (int c = 1; c < m.config.classes; ++c) {
        if (logits(static_cast<std::size_t>(i), static_cast<std::size_t>(c)) >
            logits(static_cast<std::size_t>(i), static_cast<std::size_t>(best))) {
          best = c;
        }
      }
      if (best == data.labels[static_cast<std::size_t>(start + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.n());
}

// Softmax-probability averaging across models; ties toward the lowest index.
template <typename T>
double evaluate_ensemble_accuracy(const std::vector<Model<T>>& models, const Dataset& data,
                                  int eval_batch = 64) {
  if (models.empty()) throw ValueError("ensemble needs at least one model");
  if (data.n() == 0) throw ValueError("cannot evaluate on an empty dataset");
  const int classes = models[0].config.classes;
  for (const auto& m : models) {
    if (m.config.classes != classes) throw ShapeError("ensemble members disagree on class count");
  }
  if (data.classes != classes) {
    throw ShapeError("dataset has " + std::to_string(data.classes) + " classes, models expect " +
                     std::to_string(classes));
  }
  std::vector<EvalPlan<T>> plans;
  plans.reserve(models.size());
  for (const auto& m : models) plans.push_back(prepare_eval(m));
  int correct = 0;
  std::vector<double> probs(static_cast<std::size_t>(classes));
  for (int start = 0; start < data.n(); start += eval_batch) {
    int count = std::min(eval_batch, data.n() - start);
    std::vector<int> idx(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    Tensor<T> images = gather_images<T>(data, idx);
    std::vector<Tensor<T>> logits;
    logits.reserve(models.size());
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      logits.push_back(forward_eval(models[mi], images, &plans[mi]));
    }
    for (int i = 0; i < count; ++i) {
      std::fill(probs.begin(), probs.end(), 0.0);
      for (const Tensor<T>& lg : logits) {
        double mx = -1e300;
        for (int c = 0; c < classes; ++c) {
          mx = std::max(mx, static_cast<double>(
                                lg(static_cast<std::size_t>(i), static_cast<std::size_t>(c))));
        }
        double z = 0.0;
        for (int c = 0; c < classes; ++c) {
          z += std::exp(static_cast<double>(
                            lg(static_cast<std::size_t>(i), static_cast<std::size_t>(c))) -
                        mx);
        }
        for (int c = 0; c < classes; ++c) {
          probs[static_cast<std::size_t>(c)] +=
              std::exp(static_cast<double>(
                           lg(static_cast<std::size_t>(i), static_cast<std::size_t>(c))) -
                       mx) /
              z;
        }
      }
      int best = 0;
      for (int c = 1; c < classes; ++c) {
        if (probs[static_cast<std::size_t>(c)] > probs[static_cast<std::size_t>(best)]) best = c;
      }
      if (best == data.labels[static_cast<std::size_t>(start + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.n());
}

namespace detail {

// The shared SGD loop. Trains `model` in place; logs losses, gate traces, and
// eval points; updates `te` each iteration for batch-average gate layers.
template <typename T>
RunRecord train_model(Model<T>& model, const Dataset& train_data, const TrainConfig& cfg,
                      TEState* te, const Dataset* eval_data, MacCounter* counter = nullptr) {
  validate_train_config(cfg);
  if (train_data.n() == 0) throw ValueError("training dataset is empty");
  if (train_data.classes != model.config.classes) {
    throw ShapeError("dataset has " + std::to_string(train_data.classes) +
                     " classes, model expects " + std::to_string(model.config.classes));
  }

  bool frozen = false;
  model.for_each_conv([&](const ConvUnit<T>& c, const BnUnit<T>&) {
    if (c.is_zoo && c.zoo.mode == GateMode::frozen) frozen = true;
  });
  bool lite = false;
  model.for_each_conv([&](const ConvUnit<T>& c, const BnUnit<T>&) {
    if (c.is_zoo && c.zoo.mode == GateMode::batch_average) lite = true;
  });

  // Frozen gates never feed the forward pass, so their nets stay untrained.
  std::vector<ParamRef<T>> opt_params;
  for (ParamRef<T>& p : model.trainable()) {
    if (frozen && p.group == ParamGroup::gate) continue;
    opt_params.push_back(p);
  }
  std::vector<Tensor<T>> velocity;
  velocity.reserve(opt_params.size());
  for (const ParamRef<T>& p : opt_params) velocity.push_back(Tensor<T>(p.tensor->shape()));

  BatchStream stream(train_data.n(), cfg.batch, sub_seed(cfg.seed, "data"));
  RunRecord rec;
  rec.losses.reserve(static_cast<std::size_t>(cfg.iterations));
  auto t0 = std::chrono::steady_clock::now();

  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<int> idx = stream.next();
    Tensor<T> images = gather_images<T>(train_data, idx);
    std::vector<int> labels = gather_labels(train_data, idx);

    Graph<T> g;
    g.set_counter(counter);
    LeafMap<T> lm = make_leaves(g, model);
    TrainForward<T> tf = forward_train(g, model, lm, images, labels);
    if (!std::isfinite(tf.loss_value)) {
      throw TrainingError("non-finite training loss at iteration " + std::to_string(it));
    }
    rec.losses.push_back(tf.loss_value);

    for (const auto& [layer, means] : tf.gate_means) {
      for (std::size_t s = 0; s < means.size(); ++s) {
        rec.gate_trace.push_back({it, layer, static_cast<int>(s), means[s]});
      }
      if (lite && te != nullptr) te_update(*te, layer, means);
    }

    g.backward(tf.loss);
    std::vector<Tensor<T>> grads;
    grads.reserve(opt_params.size());
    for (const ParamRef<T>& p : opt_params) grads.push_back(g.grad(lm.at(p.tensor)));
    sgd_momentum_step(opt_params, grads, velocity, lr_at(cfg, it), cfg.momentum,
                      cfg.weight_decay);

    if (eval_data != nullptr && cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0 &&
        it + 1 < cfg.iterations) {
      double acc = evaluate_accuracy(model, *eval_data, lite ? te : nullptr);
      rec.eval_points.push_back({it + 1, tf.loss_value, acc});
    }
  }

  const Dataset& final_data = eval_data != nullptr ? *eval_data : train_data;
  rec.final_metric = evaluate_accuracy(model, final_data, lite ? te : nullptr);
  rec.eval_points.push_back({cfg.iterations, rec.losses.back(), rec.final_metric});
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

}  // namespace detail

template <typename T>
struct TrainedModel {
  Model<T> model;
  TEState te;       // populated only by lite-mode tuning
  bool has_te = false;
  RunRecord record;
};

// Pretrains a plain backbone on a (source) task.
template <typename T>
TrainedModel<T> train_source(const Dataset& task, const TrainConfig& cfg,
                             const BackboneConfig& backbone, const Dataset* eval_data = nullptr,
                             MacCounter* counter = nullptr) {
  TrainedModel<T> out;
  out.model = build_plain_backbone<T>(backbone, cfg.seed);
  out.record = detail::train_model(out.model, task, cfg, nullptr, eval_data, counter);
  return out;
}

// Adaptive transfer from a zoo of plain checkpoints. Mode selects the gating
// regime: full (per-sample gates), lite (batch-average gates + temporal
// ensemble, returns the TEState used for collapse), avg-agg (gates frozen at
// 1/m, gating nets untrained, no alignment), no-align (per-sample gates,
// alignment disabled).
template <typename T>
TrainedModel<T> zoo_tune(const BackboneConfig& config,
                         const std::vector<std::map<std::string, Tensor<T>>>& zoo,
                         const Dataset& target, const TrainConfig& cfg,
                         const Dataset* eval_data = nullptr, MacCounter* counter = nullptr) {
  GateMode gate_mode = GateMode::per_sample;
  bool align = true;
  switch (cfg.mode) {
    case TuneMode::full: gate_mode = GateMode::per_sample; align = true; break;
    case TuneMode::lite: gate_mode = GateMode::batch_average; align = true; break;
    case TuneMode::avg_agg: gate_mode = GateMode::frozen; align = false; break;
    case TuneMode::no_align: gate_mode = GateMode::per_sample; align = false; break;
  }
  TrainedModel<T> out;
  out.model = convert_to_zoo<T>(config, zoo, cfg.seed, gate_mode, align);
  out.has_te = cfg.mode == TuneMode::lite;
  out.record = detail::train_model(out.model, target, cfg, out.has_te ? &out.te : nullptr,
                                   eval_data, counter);
  return out;
}

enum class BaselineKind { finetune_single, ensemble, avg_agg };

struct BaselineSpec {
  BaselineKind kind = BaselineKind::finetune_single;
  int index = 0;  // source index for finetune_single
};

// Parses "finetune:<i>", "ensemble", or "avg-agg".
inline BaselineSpec parse_baseline_kind(const std::string& s) {
  BaselineSpec spec;
  if (s.rfind("finetune:", 0) == 0) {
    spec.kind = BaselineKind::finetune_single;
    std::string num = s.substr(9);
    if (num.empty()) throw ConfigError("finetune kind needs a source index (finetune:0)");
    for (char c : num) {
      if (c < '0' || c > '9') throw ConfigError("bad source index in '" + s + "'");
    }
    spec.index = std::stoi(num);
    return spec;
  }
  if (s == "ensemble") {
    spec.kind = BaselineKind::ensemble;
    return spec;
  }
  if (s == "avg-agg" || s == "avg_agg") {
    spec.kind = BaselineKind::avg_agg;
    return spec;
  }
  throw ConfigError("unknown baseline kind '" + s + "' (want finetune:<i>|ensemble|avg-agg)");
}

template <typename T>
struct BaselineResult {
  std::vector<Model<T>> models;  // one, or m for the ensemble
  RunRecord record;              // first member's run; final_metric is the baseline's
  double metric = 0.0;
};

// Transfer baselines over the same zoo: single-source fine-tuning, the
// fine-tuned ensemble (softmax-probability averaging), and frozen uniform
// aggregation (delegated to zoo_tune).
template <typename T>
BaselineResult<T> run_baseline(const BackboneConfig& config,
                               const std::vector<std::map<std::string, Tensor<T>>>& zoo,
                               const BaselineSpec& spec, const Dataset& target_train,
                               const Dataset& target_test, const TrainConfig& cfg,
                               MacCounter* counter = nullptr) {
  if (zoo.empty()) throw ZooCompatError("baseline needs a non-empty zoo");
  BaselineResult<T> out;

  auto finetune_one = [&](int i) {
    // Source heads are task-specific; drop them and reseed for the target.
    std::map<std::string, Tensor<T>> body = zoo[static_cast<std::size_t>(i)];
    body.erase("head.weight");
    body.erase("head.bias");
    Model<T> m = load_plain_from_map<T>(config, body);
    reinit_head(m, sub_seed(cfg.seed, "head"));
    RunRecord rec = detail::train_model(m, target_train, cfg, nullptr, nullptr, counter);
    out.models.push_back(std::move(m));
    return rec;
  };

  switch (spec.kind) {
    case BaselineKind::finetune_single: {
      if (spec.index < 0 || spec.index >= static_cast<int>(zoo.size())) {
        throw ValueError("source index " + std::to_string(spec.index) + " out of range for zoo of " +
                         std::to_string(zoo.size()));
      }
      out.record = finetune_one(spec.index);
      out.metric = evaluate_accuracy(out.models[0], target_test);
      break;
    }
    case BaselineKind::ensemble: {
      for (int i = 0; i < static_cast<int>(zoo.size()); ++i) {
        RunRecord rec = finetune_one(i);
        if (i == 0) out.record = std::move(rec);
      }
      out.metric = evaluate_ensemble_accuracy(out.models, target_test);
      break;
    }
    case BaselineKind::avg_agg: {
      TrainConfig c = cfg;
      c.mode = TuneMode::avg_agg;
      TrainedModel<T> tuned = zoo_tune<T>(config, zoo, target_train, c, nullptr, counter);
      out.metric = evaluate_accuracy(tuned.model, target_test);
      out.record = std::move(tuned.record);
      out.models.push_back(std::move(tuned.model));
      break;
    }
  }
  out.record.final_metric = out.metric;
  return out;
}

}  // namespace zootune
