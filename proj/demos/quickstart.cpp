// End-to-end tour of the library on a miniature transfer problem: pretrain
// two sources on single-factor tasks, convert them into a zoo, tune the
// gated aggregate on a composite target, then collapse the lite model into
// a plain backbone with identical predictions.
//
// Build and run:  cmake --build build --target quickstart && ./build/quickstart

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "zootune/zootune.hpp"

using namespace zootune;

namespace {

std::map<std::string, Tensor<float>> body_of(Model<float>& m) {
  std::map<std::string, Tensor<float>> out;
  for (auto& [name, t] : m.named_tensors()) {
    if (name.rfind("head.", 0) == 0) continue;  // heads are task-specific
    out[name] = *t;
  }
  return out;
}

}  // namespace

int main() {
  // Two source tasks that each vary one latent factor, and a target that
  // composes both.
  TaskSpec shape_spec;
  shape_spec.factors = {{Factor::shape, {0, 1, 2, 3}}};
  shape_spec.samples_per_class = 24;
  shape_spec.side = 12;
  shape_spec.seed = 11;

  TaskSpec orient_spec = shape_spec;
  orient_spec.factors = {{Factor::orientation, {0, 1, 2, 3}}};
  orient_spec.seed = 12;

  TaskSpec target_spec = shape_spec;
  target_spec.factors = {{Factor::shape, {0, 1}}, {Factor::orientation, {0, 1}}};
  target_spec.samples_per_class = 32;
  target_spec.seed = 13;

  BackboneConfig backbone;
  backbone.stem_channels = 8;
  backbone.stages = {{1, 8}, {1, 16}};
  backbone.side = target_spec.side;

  // 1. Pretrain the sources.
  std::vector<std::map<std::string, Tensor<float>>> zoo;
  for (const TaskSpec* spec : {&shape_spec, &orient_spec}) {
    Dataset task = gen_synthetic_task(*spec);
    BackboneConfig c = backbone;
    c.classes = task.classes;
    TrainConfig cfg;
    cfg.iterations = 120;
    cfg.batch = 16;
    cfg.seed = spec->seed;
    auto trained = train_source<float>(task, cfg, c);
    std::printf("source %-24s train acc %.3f\n", task.provenance.substr(0, 24).c_str(),
                evaluate_accuracy(trained.model, task));
    zoo.push_back(body_of(trained.model));
  }

  // 2. Tune the zoo on the target in lite mode: batch-averaged gates with a
  // temporal ensemble tracking their running means.
  Dataset target = gen_synthetic_task(target_spec);
  auto [train, test] = split_train_test(target, 0.75);
  BackboneConfig tuned_cfg = backbone;
  tuned_cfg.classes = target.classes;

  TrainConfig cfg;
  cfg.iterations = 250;
  cfg.batch = 16;
  cfg.seed = 1;
  cfg.mode = TuneMode::lite;
  auto tuned = zoo_tune<float>(tuned_cfg, zoo, train, cfg, &test);
  std::printf("lite zoo-tune           test acc %.3f\n", tuned.record.final_metric);
  for (const auto& [layer, gates] : tuned.te.values) {
    std::string row = "  " + layer + " gates:";
    for (double g : gates) row += " " + format_g(g, 4);
    std::printf("%s\n", row.c_str());
  }

  // 3. Collapse under the temporal-ensemble gates. The plain model predicts
  // identically to frozen-gate evaluation of the zoo model.
  Model<float> plain = collapse_model(tuned.model, tuned.te);
  double zoo_acc = evaluate_accuracy(tuned.model, test, &tuned.te);
  double plain_acc = evaluate_accuracy(plain, test);
  std::printf("collapsed plain model   test acc %.3f (zoo eval %.3f)\n", plain_acc,
              zoo_acc);

  // 4. The collapsed model has exactly the plain backbone's cost.
  ComplexityReport zoo_rep = report_complexity(tuned.model);
  ComplexityReport plain_rep = report_complexity(plain);
  std::uint64_t lite_macs = zoo_rep.at("total", Phase::inference_lite).macs_total();
  std::uint64_t plain_macs = plain_rep.at("total", Phase::inference_full).macs_total();
  std::printf("lite inference MACs %llu, plain backbone MACs %llu\n",
              static_cast<unsigned long long>(lite_macs),
              static_cast<unsigned long long>(plain_macs));
  return plain_acc == zoo_acc && lite_macs == plain_macs ? 0 : 1;
}
