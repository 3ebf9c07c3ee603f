// zootune: synthetic tasks, source pretraining, zoo transfer, collapse,
// evaluation, and complexity reports. All outputs are files written
// atomically; exit codes: 0 ok, 2 usage, 3 data/format, 4 training failure.

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "zootune/zootune.hpp"

namespace zt = zootune;
using Real = float;  // CLI compute precision

namespace {

// Config-file fallback: a flag not given on the command line takes its value
// from the loaded config file ([section] key=...). Flags always win.
struct Merger {
  zt::ConfigFile file;
  bool loaded = false;

  void merge_str(CLI::Option* opt, const std::string& sec, const std::string& key,
                 std::string& dst) const {
    if (!loaded || opt->count() > 0) return;
    if (file.has(sec, key)) dst = file.get(sec, key);
  }
  void merge_double(CLI::Option* opt, const std::string& sec, const std::string& key,
                    double& dst) const {
    if (!loaded || opt->count() > 0) return;
    dst = zt::config_double(file, sec, key, dst);
  }
  void merge_int(CLI::Option* opt, const std::string& sec, const std::string& key,
                 int& dst) const {
    if (!loaded || opt->count() > 0) return;
    dst = static_cast<int>(zt::config_int(file, sec, key, dst));
  }
  void merge_u64(CLI::Option* opt, const std::string& sec, const std::string& key,
                 std::uint64_t& dst, bool& present) const {
    if (opt->count() > 0) {
      present = true;
      return;
    }
    if (loaded && file.has(sec, key)) {
      dst = zt::config_u64(file, sec, key, dst);
      present = true;
    }
  }
  void merge_flag(CLI::Option* opt, const std::string& sec, const std::string& key,
                  bool& dst) const {
    if (!loaded || opt->count() > 0) return;
    if (file.has(sec, key)) {
      std::string v = file.get(sec, key);
      dst = v == "1" || v == "true" || v == "yes";
    }
  }
};

void require(bool ok, const std::string& message) {
  if (!ok) throw zt::ConfigError(message);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t end = s.find(',', pos);
    if (end == std::string::npos) end = s.size();
    if (end > pos) out.push_back(s.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

struct TrainFlags {
  double lr = 0.01;
  double momentum = 0.9;
  int batch = 16;
  int iterations = 1000;
  double weight_decay = 0.0;
  double decay_factor = 0.1;
  int eval_every = 0;
  std::uint64_t seed = 0;
  bool seed_present = false;

  CLI::Option *o_lr = nullptr, *o_momentum = nullptr, *o_batch = nullptr,
              *o_iterations = nullptr, *o_wd = nullptr, *o_decay = nullptr,
              *o_eval_every = nullptr, *o_seed = nullptr;

  void add(CLI::App* cmd) {
    o_lr = cmd->add_option("--lr", lr, "learning rate");
    o_momentum = cmd->add_option("--momentum", momentum, "SGD momentum");
    o_batch = cmd->add_option("--batch", batch, "batch size (>= 2)");
    o_iterations = cmd->add_option("--iterations", iterations, "training iterations");
    o_wd = cmd->add_option("--weight-decay", weight_decay, "L2 weight decay");
    o_decay = cmd->add_option("--decay-factor", decay_factor,
                              "lr multiplier applied at 40% and 80% of the run");
    o_eval_every = cmd->add_option("--eval-every", eval_every,
                                   "evaluate every N iterations (0: only at the end)");
    o_seed = cmd->add_option("--seed", seed, "random seed (required)");
  }

  zt::TrainConfig merged(const Merger& m) {
    m.merge_double(o_lr, "train", "lr", lr);
    m.merge_double(o_momentum, "train", "momentum", momentum);
    m.merge_int(o_batch, "train", "batch", batch);
    m.merge_int(o_iterations, "train", "iterations", iterations);
    m.merge_double(o_wd, "train", "weight_decay", weight_decay);
    m.merge_double(o_decay, "train", "decay_factor", decay_factor);
    m.merge_int(o_eval_every, "train", "eval_every", eval_every);
    m.merge_u64(o_seed, "train", "seed", seed, seed_present);
    require(seed_present, "--seed is required (or [train] seed= in the config file)");
    zt::TrainConfig cfg;
    cfg.lr = lr;
    cfg.momentum = momentum;
    cfg.batch = batch;
    cfg.iterations = iterations;
    cfg.weight_decay = weight_decay;
    cfg.decay_factor = decay_factor;
    cfg.eval_every = eval_every;
    cfg.seed = seed;
    zt::validate_train_config(cfg);
    return cfg;
  }
};

Merger load_merger(const std::string& config_path) {
  Merger m;
  if (!config_path.empty()) {
    m.file = zt::load_config_file(config_path);
    m.loaded = true;
  }
  return m;
}

// Loads the zoo checkpoints in command-line order; order defines the source
// index everywhere downstream (gate CSVs, reports).
struct LoadedZoo {
  zt::BackboneConfig body;  // classes still the sources'
  std::vector<std::map<std::string, zt::Tensor<Real>>> maps;
};

LoadedZoo load_zoo(const std::string& zoo_arg) {
  std::vector<std::string> paths = split_list(zoo_arg);
  require(!paths.empty(), "--zoo needs at least one checkpoint path");
  LoadedZoo zoo;
  std::string digest;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    zt::Checkpoint ck = zt::load_checkpoint(paths[i]);
    std::string kind = ck.require_meta("kind");
    if (kind != zt::kind_plain) {
      throw zt::ZooCompatError("zoo checkpoint " + paths[i] + " has kind '" + kind +
                               "', expected a plain source checkpoint");
    }
    zt::BackboneConfig cfg = zt::parse_config_string(ck.require_meta("backbone"));
    std::string d = ck.get_meta("body_digest").value_or(zt::body_digest(cfg));
    if (i == 0) {
      digest = d;
      zoo.body = cfg;
    } else if (d != digest) {
      throw zt::ZooCompatError("zoo checkpoint " + paths[i] + " body digest " + d +
                               " differs from " + paths[0] + "'s " + digest);
    }
    zoo.maps.push_back(zt::tensor_map<Real>(ck));
  }
  return zoo;
}

void check_data_matches(const zt::BackboneConfig& cfg, const zt::Dataset& d,
                        const std::string& what) {
  if (d.channels() != cfg.in_channels || d.side() != cfg.side) {
    throw zt::ValueError(what + " is " + std::to_string(d.channels()) + "x" +
                         std::to_string(d.side()) + "x" + std::to_string(d.side()) +
                         ", model expects " + std::to_string(cfg.in_channels) + "x" +
                         std::to_string(cfg.side) + "x" + std::to_string(cfg.side));
  }
}

// ---- synth ----

void cmd_synth(CLI::App* cmd) {
  auto config_path = std::make_shared<std::string>();
  auto factors = std::make_shared<std::string>();
  auto noise = std::make_shared<double>(0.1);
  auto spc = std::make_shared<int>(100);
  auto side = std::make_shared<int>(16);
  auto channels = std::make_shared<int>(3);
  auto seed = std::make_shared<std::uint64_t>(0);
  auto out = std::make_shared<std::string>();
  auto train_out = std::make_shared<std::string>();
  auto test_out = std::make_shared<std::string>();
  auto train_fraction = std::make_shared<double>(0.8);

  cmd->add_option("--config", *config_path, "sectioned key=value config file");
  auto* o_factors = cmd->add_option("--factors", *factors,
                                    "active factors, e.g. shape:0123,color:01");
  auto* o_noise = cmd->add_option("--noise", *noise, "noise level in [0,0.5]");
  auto* o_spc = cmd->add_option("--spc", *spc, "samples per class");
  auto* o_side = cmd->add_option("--side", *side, "image side length");
  auto* o_channels = cmd->add_option("--channels", *channels, "image channels (1 or 3)");
  auto* o_seed = cmd->add_option("--seed", *seed, "random seed (required)");
  auto* o_out = cmd->add_option("--out", *out, "write the full dataset here");
  auto* o_train_out = cmd->add_option("--train-out", *train_out, "write the train split here");
  auto* o_test_out = cmd->add_option("--test-out", *test_out, "write the test split here");
  auto* o_frac = cmd->add_option("--train-fraction", *train_fraction, "train split fraction");

  cmd->callback([=]() {
    Merger m = load_merger(*config_path);
    m.merge_str(o_factors, "synth", "factors", *factors);
    m.merge_double(o_noise, "synth", "noise", *noise);
    m.merge_int(o_spc, "synth", "spc", *spc);
    m.merge_int(o_side, "synth", "side", *side);
    m.merge_int(o_channels, "synth", "channels", *channels);
    bool seed_present = false;
    m.merge_u64(o_seed, "synth", "seed", *seed, seed_present);
    m.merge_str(o_out, "synth", "out", *out);
    m.merge_str(o_train_out, "synth", "train_out", *train_out);
    m.merge_str(o_test_out, "synth", "test_out", *test_out);
    m.merge_double(o_frac, "synth", "train_fraction", *train_fraction);

    require(!factors->empty(), "--factors is required");
    require(seed_present, "--seed is required");
    require(!out->empty() || !train_out->empty() || !test_out->empty(),
            "need --out and/or --train-out/--test-out");
    require(train_out->empty() == test_out->empty(),
            "--train-out and --test-out must be given together");

    zt::TaskSpec spec;
    spec.factors = zt::parse_factors(*factors);
    spec.noise = *noise;
    spec.samples_per_class = *spc;
    spec.side = *side;
    spec.channels = *channels;
    spec.seed = *seed;
    zt::Dataset data = zt::gen_synthetic_task(spec);
    zt::log_info("synth: " + data.provenance + " -> " + std::to_string(data.n()) +
                 " samples, " + std::to_string(data.classes) + " classes");
    if (!out->empty()) {
      zt::save_dataset(data, *out);
      zt::log_info("wrote " + *out);
    }
    if (!train_out->empty()) {
      auto [train, test] = zt::split_train_test(data, *train_fraction);
      zt::save_dataset(train, *train_out);
      zt::save_dataset(test, *test_out);
      zt::log_info("wrote " + *train_out + " (" + std::to_string(train.n()) + ") and " +
                   *test_out + " (" + std::to_string(test.n()) + ")");
    }
  });
}

// ---- pretrain ----

void cmd_pretrain(CLI::App* cmd) {
  auto config_path = std::make_shared<std::string>();
  auto data_path = std::make_shared<std::string>();
  auto eval_path = std::make_shared<std::string>();
  auto stem = std::make_shared<int>(16);
  auto stages = std::make_shared<std::string>("2x16,2x32");
  auto out = std::make_shared<std::string>();
  auto run_csv = std::make_shared<std::string>();
  auto include_head = std::make_shared<bool>(false);
  auto flags = std::make_shared<TrainFlags>();

  cmd->add_option("--config", *config_path, "sectioned key=value config file");
  auto* o_data = cmd->add_option("--data", *data_path, "training dataset (.zood)");
  auto* o_eval = cmd->add_option("--eval-data", *eval_path, "held-out dataset");
  auto* o_stem = cmd->add_option("--stem", *stem, "stem channels");
  auto* o_stages = cmd->add_option("--stages", *stages, "stage spec, e.g. 2x16,2x32");
  auto* o_out = cmd->add_option("--out", *out, "checkpoint output path");
  auto* o_run = cmd->add_option("--run-csv", *run_csv, "write the run log here");
  auto* o_head = cmd->add_flag("--include-head", *include_head,
                               "keep the classifier head in the checkpoint");
  flags->add(cmd);

  cmd->callback([=]() {
    Merger m = load_merger(*config_path);
    m.merge_str(o_data, "pretrain", "data", *data_path);
    m.merge_str(o_eval, "pretrain", "eval_data", *eval_path);
    m.merge_int(o_stem, "backbone", "stem", *stem);
    m.merge_str(o_stages, "backbone", "stages", *stages);
    m.merge_str(o_out, "pretrain", "out", *out);
    m.merge_str(o_run, "pretrain", "run_csv", *run_csv);
    m.merge_flag(o_head, "pretrain", "include_head", *include_head);
    zt::TrainConfig cfg = flags->merged(m);

    require(!data_path->empty(), "--data is required");
    require(!out->empty(), "--out is required");

    zt::Dataset data = zt::load_dataset(*data_path);
    std::optional<zt::Dataset> eval_data;
    if (!eval_path->empty()) eval_data = zt::load_dataset(*eval_path);

    zt::BackboneConfig backbone;
    backbone.in_channels = data.channels();
    backbone.side = data.side();
    backbone.classes = data.classes;
    backbone.stem_channels = *stem;
    backbone.stages.clear();
    for (const std::string& part : split_list(*stages)) {
      std::size_t x = part.find('x');
      require(x != std::string::npos, "stage '" + part + "' is not BLOCKSxCHANNELS");
      backbone.stages.push_back({std::stoi(part.substr(0, x)), std::stoi(part.substr(x + 1))});
    }
    zt::validate_config(backbone);

    zt::log_info("pretrain: " + zt::config_string(backbone) + ", " +
                 std::to_string(cfg.iterations) + " iterations on " +
                 std::to_string(data.n()) + " samples");
    auto trained = zt::train_source<Real>(data, cfg, backbone,
                                          eval_data ? &*eval_data : nullptr);
    zt::Checkpoint ck = zt::model_to_checkpoint(trained.model, *include_head);
    zt::save_checkpoint(ck, *out);
    zt::log_info("wrote " + *out + " (final metric " +
                 zt::format_g(trained.record.final_metric) + ")");
    if (!run_csv->empty()) zt::write_run_csv(trained.record, *run_csv);
  });
}

// ---- tune ----

void cmd_tune(CLI::App* cmd) {
  auto config_path = std::make_shared<std::string>();
  auto zoo_arg = std::make_shared<std::string>();
  auto data_path = std::make_shared<std::string>();
  auto eval_path = std::make_shared<std::string>();
  auto mode_str = std::make_shared<std::string>("full");
  auto align_pointwise = std::make_shared<bool>(false);
  auto out = std::make_shared<std::string>();
  auto te_out = std::make_shared<std::string>();
  auto gates_csv = std::make_shared<std::string>();
  auto run_csv = std::make_shared<std::string>();
  auto flags = std::make_shared<TrainFlags>();

  cmd->add_option("--config", *config_path, "sectioned key=value config file");
  auto* o_zoo = cmd->add_option("--zoo", *zoo_arg,
                                "comma-separated source checkpoints; order = source index");
  auto* o_data = cmd->add_option("--data", *data_path, "target training dataset");
  auto* o_eval = cmd->add_option("--eval-data", *eval_path, "held-out dataset");
  auto* o_mode = cmd->add_option("--mode", *mode_str, "full|lite|avg-agg|no-align");
  auto* o_pw = cmd->add_flag("--align-pointwise", *align_pointwise,
                             "also align 1x1 shortcut convolutions");
  auto* o_out = cmd->add_option("--out", *out, "tuned model checkpoint path");
  auto* o_te = cmd->add_option("--te-out", *te_out, "temporal-ensemble state path (lite)");
  auto* o_gates = cmd->add_option("--gates-csv", *gates_csv, "write gate traces here");
  auto* o_run = cmd->add_option("--run-csv", *run_csv, "write the run log here");
  flags->add(cmd);

  cmd->callback([=]() {
    Merger m = load_merger(*config_path);
    m.merge_str(o_zoo, "tune", "zoo", *zoo_arg);
    m.merge_str(o_data, "tune", "data", *data_path);
    m.merge_str(o_eval, "tune", "eval_data", *eval_path);
    m.merge_str(o_mode, "train", "mode", *mode_str);
    m.merge_flag(o_pw, "tune", "align_pointwise", *align_pointwise);
    m.merge_str(o_out, "tune", "out", *out);
    m.merge_str(o_te, "tune", "te_out", *te_out);
    m.merge_str(o_gates, "tune", "gates_csv", *gates_csv);
    m.merge_str(o_run, "tune", "run_csv", *run_csv);
    zt::TrainConfig cfg = flags->merged(m);
    cfg.mode = zt::tune_mode_from_name(*mode_str);

    require(!zoo_arg->empty(), "--zoo is required");
    require(!data_path->empty(), "--data is required");
    require(!out->empty(), "--out is required");
    require(te_out->empty() || cfg.mode == zt::TuneMode::lite,
            "--te-out only applies to --mode lite");

    LoadedZoo zoo = load_zoo(*zoo_arg);
    zt::Dataset data = zt::load_dataset(*data_path);
    std::optional<zt::Dataset> eval_data;
    if (!eval_path->empty()) eval_data = zt::load_dataset(*eval_path);

    zt::BackboneConfig backbone = zoo.body;
    backbone.classes = data.classes;
    backbone.align_pointwise = *align_pointwise;
    check_data_matches(backbone, data, "--data");
    if (eval_data) check_data_matches(backbone, *eval_data, "--eval-data");

    zt::log_info("tune: mode " + std::string(zt::tune_mode_name(cfg.mode)) + ", zoo of " +
                 std::to_string(zoo.maps.size()) + ", " + std::to_string(cfg.iterations) +
                 " iterations");
    auto tuned = zt::zoo_tune<Real>(backbone, zoo.maps, data, cfg,
                                    eval_data ? &*eval_data : nullptr);
    zt::Checkpoint ck = zt::model_to_checkpoint(tuned.model, true);
    zt::save_checkpoint(ck, *out);
    zt::log_info("wrote " + *out);
    if (!te_out->empty()) {
      zt::save_checkpoint(zt::te_to_checkpoint(tuned.te), *te_out);
      zt::log_info("wrote " + *te_out);
    }
    if (!gates_csv->empty()) zt::write_gates_csv(tuned.record, *gates_csv);
    if (!run_csv->empty()) zt::write_run_csv(tuned.record, *run_csv);
    std::printf("%s\n", zt::format_g(tuned.record.final_metric).c_str());
  });
}

// ---- collapse ----

void cmd_collapse(CLI::App* cmd) {
  auto config_path = std::make_shared<std::string>();
  auto model_path = std::make_shared<std::string>();
  auto te_path = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();

  cmd->add_option("--config", *config_path, "sectioned key=value config file");
  auto* o_model = cmd->add_option("--model", *model_path, "tuned zoo checkpoint");
  auto* o_te = cmd->add_option("--te", *te_path, "temporal-ensemble state file");
  auto* o_out = cmd->add_option("--out", *out, "plain checkpoint output path");

  cmd->callback([=]() {
    Merger m = load_merger(*config_path);
    m.merge_str(o_model, "collapse", "model", *model_path);
    m.merge_str(o_te, "collapse", "te", *te_path);
    m.merge_str(o_out, "collapse", "out", *out);
    require(!model_path->empty(), "--model is required");
    require(!te_path->empty(), "--te is required");
    require(!out->empty(), "--out is required");

    zt::Model<Real> model = zt::model_from_checkpoint<Real>(zt::load_checkpoint(*model_path));
    require(model.is_zoo, "--model must be a zoo checkpoint");
    zt::TEState te = zt::te_from_checkpoint(zt::load_checkpoint(*te_path));
    zt::Model<Real> plain = zt::collapse_model(model, te);
    zt::Checkpoint ck = zt::model_to_checkpoint(plain, true);
    zt::save_checkpoint(ck, *out);
    zt::log_info("wrote " + *out);
  });
}

// ---- eval ----

void cmd_eval(CLI::App* cmd) {
  auto config_path = std::make_shared<std::string>();
  auto model_path = std::make_shared<std::string>();
  auto te_path = std::make_shared<std::string>();
  auto data_path = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto batch = std::make_shared<int>(64);

  cmd->add_option("--config", *config_path, "sectioned key=value config file");
  auto* o_model = cmd->add_option("--model", *model_path, "model checkpoint");
  auto* o_te = cmd->add_option("--te", *te_path, "temporal-ensemble state file");
  auto* o_data = cmd->add_option("--data", *data_path, "evaluation dataset");
  auto* o_out = cmd->add_option("--out", *out, "write metric CSV here");
  auto* o_batch = cmd->add_option("--batch", *batch, "evaluation batch size");

  cmd->callback([=]() {
    Merger m = load_merger(*config_path);
    m.merge_str(o_model, "eval", "model", *model_path);
    m.merge_str(o_te, "eval", "te", *te_path);
    m.merge_str(o_data, "eval", "data", *data_path);
    m.merge_str(o_out, "eval", "out", *out);
    m.merge_int(o_batch, "eval", "batch", *batch);
    require(!model_path->empty(), "--model is required");
    require(!data_path->empty(), "--data is required");

    zt::Model<Real> model = zt::model_from_checkpoint<Real>(zt::load_checkpoint(*model_path));
    zt::Dataset data = zt::load_dataset(*data_path);
    std::optional<zt::TEState> te;
    if (!te_path->empty()) te = zt::te_from_checkpoint(zt::load_checkpoint(*te_path));
    double acc = zt::evaluate_accuracy(model, data, te ? &*te : nullptr, *batch);
    std::printf("%s\n", zt::format_g(acc).c_str());
    if (!out->empty()) {
      zt::atomic_write_file(*out, "metric,value\naccuracy," + zt::format_g(acc) + "\n");
    }
  });
}

// ---- complexity ----

void cmd_complexity(CLI::App* cmd) {
  auto config_path = std::make_shared<std::string>();
  auto model_path = std::make_shared<std::string>();
  auto backbone_str = std::make_shared<std::string>();
  auto zoo_size = std::make_shared<int>(0);
  auto mode_str = std::make_shared<std::string>("full");
  auto out = std::make_shared<std::string>();

  cmd->add_option("--config", *config_path, "sectioned key=value config file");
  auto* o_model = cmd->add_option("--model", *model_path, "model checkpoint to analyze");
  auto* o_backbone = cmd->add_option(
      "--backbone", *backbone_str,
      "backbone config string (alternative to --model), e.g. "
      "in=3;stem=16;stages=2x16,2x32;classes=8;side=16;alignpw=0");
  auto* o_zoo_size = cmd->add_option("--zoo-size", *zoo_size,
                                     "with --backbone: number of sources (0 = plain)");
  auto* o_mode = cmd->add_option("--mode", *mode_str,
                                 "with --backbone and --zoo-size: full|lite|avg-agg|no-align");
  auto* o_out = cmd->add_option("--out", *out, "report CSV path");

  cmd->callback([=]() {
    Merger m = load_merger(*config_path);
    m.merge_str(o_model, "complexity", "model", *model_path);
    m.merge_str(o_backbone, "complexity", "backbone", *backbone_str);
    m.merge_int(o_zoo_size, "complexity", "zoo_size", *zoo_size);
    m.merge_str(o_mode, "complexity", "mode", *mode_str);
    m.merge_str(o_out, "complexity", "out", *out);
    require(!out->empty(), "--out is required");
    require(model_path->empty() != backbone_str->empty(),
            "give exactly one of --model or --backbone");

    zt::Model<Real> model;
    if (!model_path->empty()) {
      model = zt::model_from_checkpoint<Real>(zt::load_checkpoint(*model_path));
    } else {
      zt::BackboneConfig cfg = zt::parse_config_string(*backbone_str);
      if (*zoo_size <= 0) {
        model = zt::make_skeleton<Real>(cfg);
      } else {
        zt::Model<Real> plain = zt::make_skeleton<Real>(cfg);
        std::map<std::string, zt::Tensor<Real>> zeros;
        for (auto& [name, t] : plain.named_tensors()) {
          if (name.rfind("head.", 0) == 0) continue;
          zeros[name] = *t;
        }
        std::vector<std::map<std::string, zt::Tensor<Real>>> dummy(
            static_cast<std::size_t>(*zoo_size), zeros);
        zt::TuneMode tm = zt::tune_mode_from_name(*mode_str);
        zt::GateMode gm = zt::GateMode::per_sample;
        bool align = true;
        switch (tm) {
          case zt::TuneMode::full: gm = zt::GateMode::per_sample; align = true; break;
          case zt::TuneMode::lite: gm = zt::GateMode::batch_average; align = true; break;
          case zt::TuneMode::avg_agg: gm = zt::GateMode::frozen; align = false; break;
          case zt::TuneMode::no_align: gm = zt::GateMode::per_sample; align = false; break;
        }
        model = zt::convert_to_zoo<Real>(cfg, dummy, 0, gm, align);
      }
    }

    zt::ComplexityReport report = zt::report_complexity(model);
    zt::write_complexity_csv(report, *out);
    zt::log_info("wrote " + *out);

    // MACs per phase from the totals row; FLOPs reported as 2*MACs.
    for (const zt::ComplexityRow& r : report.rows) {
      if (r.layer != "total") continue;
      std::printf("%s macs=%llu flops=%llu params=%llu\n", r.phase.c_str(),
                  static_cast<unsigned long long>(r.macs_total()),
                  static_cast<unsigned long long>(2 * r.macs_total()),
                  static_cast<unsigned long long>(r.params_total()));
    }
    std::uint64_t envelope = 0;
    for (const auto& [layer, v] : report.gating_envelope) envelope += v;
    if (envelope > 0) {
      std::printf("gating_envelope_macs=%llu\n", static_cast<unsigned long long>(envelope));
    }
  });
}

// ---- baseline ----

void cmd_baseline(CLI::App* cmd) {
  auto config_path = std::make_shared<std::string>();
  auto zoo_arg = std::make_shared<std::string>();
  auto kind_str = std::make_shared<std::string>();
  auto data_path = std::make_shared<std::string>();
  auto eval_path = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto run_csv = std::make_shared<std::string>();
  auto flags = std::make_shared<TrainFlags>();

  cmd->add_option("--config", *config_path, "sectioned key=value config file");
  auto* o_zoo = cmd->add_option("--zoo", *zoo_arg, "comma-separated source checkpoints");
  auto* o_kind = cmd->add_option("--kind", *kind_str, "finetune:<i>|ensemble|avg-agg");
  auto* o_data = cmd->add_option("--data", *data_path, "target training dataset");
  auto* o_eval = cmd->add_option("--eval-data", *eval_path, "held-out dataset");
  auto* o_out = cmd->add_option("--out", *out, "model checkpoint path (not for ensemble)");
  auto* o_run = cmd->add_option("--run-csv", *run_csv, "write the run log here");
  flags->add(cmd);

  cmd->callback([=]() {
    Merger m = load_merger(*config_path);
    m.merge_str(o_zoo, "baseline", "zoo", *zoo_arg);
    m.merge_str(o_kind, "baseline", "kind", *kind_str);
    m.merge_str(o_data, "baseline", "data", *data_path);
    m.merge_str(o_eval, "baseline", "eval_data", *eval_path);
    m.merge_str(o_out, "baseline", "out", *out);
    m.merge_str(o_run, "baseline", "run_csv", *run_csv);
    zt::TrainConfig cfg = flags->merged(m);

    require(!zoo_arg->empty(), "--zoo is required");
    require(!kind_str->empty(), "--kind is required");
    require(!data_path->empty(), "--data is required");
    require(!eval_path->empty(), "--eval-data is required");
    zt::BaselineSpec kind = zt::parse_baseline_kind(*kind_str);
    require(out->empty() || kind.kind != zt::BaselineKind::ensemble,
            "--out does not apply to the ensemble baseline");

    LoadedZoo zoo = load_zoo(*zoo_arg);
    zt::Dataset train = zt::load_dataset(*data_path);
    zt::Dataset test = zt::load_dataset(*eval_path);
    zt::BackboneConfig backbone = zoo.body;
    backbone.classes = train.classes;
    check_data_matches(backbone, train, "--data");
    check_data_matches(backbone, test, "--eval-data");

    zt::log_info("baseline: kind " + *kind_str + ", zoo of " +
                 std::to_string(zoo.maps.size()));
    auto result = zt::run_baseline<Real>(backbone, zoo.maps, kind, train, test, cfg);
    if (!out->empty()) {
      zt::Checkpoint ck = zt::model_to_checkpoint(result.models[0], true);
      zt::save_checkpoint(ck, *out);
      zt::log_info("wrote " + *out);
    }
    if (!run_csv->empty()) zt::write_run_csv(result.record, *run_csv);
    std::printf("%s\n", zt::format_g(result.metric).c_str());
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive transfer from a zoo of pretrained models"};
  app.require_subcommand(1);

  cmd_synth(app.add_subcommand("synth", "generate a synthetic factored-pattern dataset"));
  cmd_pretrain(app.add_subcommand("pretrain", "train a plain source model"));
  cmd_tune(app.add_subcommand("tune", "adaptive aggregation transfer from a zoo"));
  cmd_collapse(app.add_subcommand("collapse", "collapse a lite model with its temporal ensemble"));
  cmd_eval(app.add_subcommand("eval", "evaluate a checkpoint on a dataset"));
  cmd_complexity(app.add_subcommand("complexity", "per-layer MAC and parameter report"));
  cmd_baseline(app.add_subcommand("baseline", "single fine-tune / ensemble / uniform aggregation"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const zootune::TrainingError& e) {
    std::fprintf(stderr, "training error: %s\n", e.what());
    return 4;
  } catch (const zootune::ConfigError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const zootune::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
