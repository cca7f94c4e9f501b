#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "autoprosam/app/run_config.hpp"
#include "autoprosam/app/workflow.hpp"
#include "autoprosam/core/errors.hpp"
#include "autoprosam/core/logging.hpp"
#include "autoprosam/data/manifest.hpp"
#include "autoprosam/io/volume_io.hpp"
#include "autoprosam/model/config_json.hpp"
#include "autoprosam/synth/phantom.hpp"

namespace fs = std::filesystem;
using namespace aps;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonFlags {
  std::string config;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> epochs;
  bool no_apg = false;
  bool no_mlam = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool model_flags) {
  cmd->add_option("-c,--config", f.config, "Run configuration (JSON)")->required();
  cmd->add_option("-o,--output-dir", f.output_dir, "Override output_dir");
  cmd->add_option("--seed", f.seed, "Override seed");
  if (model_flags) {
    cmd->add_flag("--no-apg", f.no_apg, "Disable the auto prompt generator");
    cmd->add_flag("--no-mlam", f.no_mlam, "Disable multi-layer aggregation");
  }
}

app::RunConfig resolve_config(const CommonFlags& f) {
  app::RunConfig cfg = app::load_run_config(f.config);
  if (f.output_dir) cfg.output_dir = *f.output_dir;
  if (f.seed) cfg.seed = *f.seed;
  if (f.epochs) cfg.optim.epochs = *f.epochs;
  if (f.no_apg) cfg.model.decoder.apg_enabled = false;
  if (f.no_mlam) cfg.model.decoder.mlam_enabled = false;
  cfg.output_dir = app::resolve_output(cfg.output_dir);
  cfg.finalize();
  app::apply_runtime(cfg);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  f << text;
}

void dump_config(const app::RunConfig& cfg, const fs::path& dir) {
  write_text(dir / "effective_config.json", app::to_json(cfg).dump(2) + "\n");
}

int cmd_synth(const std::string& spec_path, const std::string& out) {
  std::ifstream f(spec_path);
  if (!f) throw ConfigError("synth: cannot open spec '" + spec_path + "'");
  io::Json j;
  try {
    j = io::Json::parse(f);
  } catch (const io::Json::exception& e) {
    throw ConfigError("synth: spec is not valid JSON: " + std::string(e.what()));
  }
  const app::SynthConfig sc = app::synth_config_from_json(j);
  const fs::path dir = app::resolve_output(out);
  const auto cases = app::synthesize_dataset(sc, dir);
  write_text(dir / "synth_spec.json", app::to_json(sc).dump(2) + "\n");
  std::cout << "wrote " << cases.size() << " cases and " << (dir / "manifest.txt").string() << '\n';
  return 0;
}

int cmd_preprocess(const CommonFlags& f) {
  const auto cfg = resolve_config(f);
  const fs::path dir = cfg.output_dir / "preprocessed";
  fs::create_directories(dir);
  std::vector<data::DatasetCase> out;
  for (const char* split : {"train", "val", "test"}) {
    for (auto& c : app::load_eval_cases(cfg, split)) {
      data::DatasetCase d;
      d.image = dir / (c.id + ".aps");
      d.split = split;
      io::save_volume(d.image, c.image, c.labels ? &*c.labels : nullptr);
      out.push_back(d);
    }
  }
  data::write_manifest(dir / "manifest.txt", out);
  dump_config(cfg, cfg.output_dir);
  std::cout << "preprocessed " << out.size() << " cases into " << dir.string() << '\n';
  return 0;
}

struct TrainFlags {
  std::optional<std::string> resume;
  std::optional<std::int64_t> stop_after;
};

train::FitResult run_training(const app::RunConfig& cfg, const fs::path& out, const TrainFlags& tf) {
  auto model = app::build_model(cfg);
  std::cout << app::params_report(model);
  const auto train_cases = app::load_train_cases(cfg, "train");
  const auto val_cases = app::load_train_cases(cfg, "val");
  dump_config(cfg, out);
  auto opts = app::fit_options(cfg, out);
  if (tf.resume) opts.resume_from = fs::path(*tf.resume);
  opts.stop_after_epoch = tf.stop_after;
  auto result = train::fit(train_cases, val_cases, model, opts);
  if (result.best) {
    const auto& best = result.checkpoints[*result.best];
    write_text(out / "best_checkpoint.txt", best.path.lexically_relative(out).string() + "\n");
    std::cout << "best checkpoint: " << best.path.string();
    if (best.val_dice) std::cout << " (val Dice " << *best.val_dice << "%)";
    std::cout << '\n';
  }
  return result;
}

int cmd_train(const CommonFlags& f, const TrainFlags& tf) {
  const auto cfg = resolve_config(f);
  run_training(cfg, cfg.output_dir, tf);
  return 0;
}

model::AutoProSam load_checked(const app::RunConfig& cfg, const fs::path& ckpt_path) {
  if (!fs::exists(ckpt_path)) throw DataError("checkpoint '" + ckpt_path.string() + "' does not exist");
  const auto archive = io::Archive::read(ckpt_path);
  auto model = model::AutoProSam::from_checkpoint(archive);
  const auto& d = model.config().decoder;
  if (d.apg_enabled != cfg.model.decoder.apg_enabled || d.mlam_enabled != cfg.model.decoder.mlam_enabled) {
    throw ConfigError(std::string("checkpoint was trained with apg=") + (d.apg_enabled ? "on" : "off") +
                      ", mlam=" + (d.mlam_enabled ? "on" : "off") +
                      " but the config asks for a different graph; pass matching --no-apg/--no-mlam flags");
  }
  if (model::to_json(model.config()) != model::to_json(cfg.model)) {
    throw ConfigError("checkpoint model config differs from the run config");
  }
  return model;
}

eval::EvalResult run_eval(const app::RunConfig& cfg, const model::AutoProSam& model, const std::string& split,
                          const fs::path& out) {
  const auto cases = app::load_eval_cases(cfg, split);
  if (cases.empty()) throw DataError("eval: split '" + split + "' has no cases");
  auto result = eval::evaluate(cases, model, cfg.window, cfg.nsd_tolerance_mm);
  write_text(out / "metrics.jsonl", eval::metrics_jsonl(result));
  write_text(out / "metrics.txt", eval::metrics_table(result));
  return result;
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, const std::string& split) {
  const auto cfg = resolve_config(f);
  const auto model = load_checked(cfg, checkpoint);
  const fs::path out = cfg.output_dir / ("eval_" + split);
  dump_config(cfg, out);
  const auto result = run_eval(cfg, model, split, out);
  std::cout << eval::metrics_table(result);
  return 0;
}

int cmd_infer(const CommonFlags& f, const std::string& checkpoint, const std::string& input,
              const std::string& output) {
  const auto cfg = resolve_config(f);
  const auto model = load_checked(cfg, checkpoint);
  auto [vol, labels] = io::load_volume(input);
  auto [pv, pl] = data::preprocess(vol, nullptr, cfg.preprocess);
  const auto logits = eval::sliding_window_infer(pv, model, cfg.window);
  const auto pred = model::predict_labels(logits, pv.spacing);
  const fs::path out = app::resolve_output(output);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  io::save_label_map(out, pred);
  std::cout << "wrote prediction " << out.string() << '\n';
  return 0;
}

int cmd_ablate(const CommonFlags& f, bool train_each, const std::string& split) {
  const auto base = resolve_config(f);
  std::cout << "apg  mlam  tunable  frozen\n";
  for (bool apg : {true, false}) {
    for (bool mlam : {true, false}) {
      auto cfg = base;
      cfg.model.decoder.apg_enabled = apg;
      cfg.model.decoder.mlam_enabled = mlam;
      cfg.finalize();
      const auto counts = model::count_params(cfg.model);
      std::printf("%-4s %-5s %8lld %7lld\n", apg ? "on" : "off", mlam ? "on" : "off",
                  static_cast<long long>(counts.tunable), static_cast<long long>(counts.frozen));
      if (!train_each) continue;
      const fs::path out = base.output_dir / (std::string("apg_") + (apg ? "on" : "off") + "_mlam_" + (mlam ? "on" : "off"));
      const auto fitted = run_training(cfg, out, {});
      const auto& best = fitted.checkpoints.at(*fitted.best);
      const auto model = model::AutoProSam::from_checkpoint(io::Archive::read(best.path));
      const auto result = run_eval(cfg, model, split, out / ("eval_" + split));
      std::printf("  %s Dice %.2f NSD %.2f\n", split.c_str(), result.aggregate.mean_dice_cases_then_classes,
                  result.aggregate.mean_nsd_cases_then_classes);
    }
  }
  return 0;
}

int cmd_params(const CommonFlags& f) {
  const auto cfg = resolve_config(f);
  const auto counts = model::count_params(cfg.model);
  std::cout << "parameters: tunable " << counts.tunable << ", frozen " << counts.frozen << ", total "
            << counts.total() << '\n';
  std::cout << "  apg " << (cfg.model.decoder.apg_enabled ? "on" : "off") << ", mlam "
            << (cfg.model.decoder.mlam_enabled ? "on" : "off") << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-free 3D segmentation: synthesis, preprocessing, training, inference and evaluation"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  std::string synth_spec, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a phantom dataset and its manifest");
  synth->add_option("-s,--spec", synth_spec, "Phantom spec (JSON)")->required();
  synth->add_option("-o,--out", synth_out, "Output directory")->required();

  CommonFlags pre_f, train_f, infer_f, eval_f, ablate_f, params_f;
  auto* pre = app.add_subcommand("preprocess", "Resample and normalize every manifest case");
  add_common(pre, pre_f, false);

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Fine-tune on the train split, validating on val");
  add_common(train, train_f, true);
  train->add_option("--epochs", train_f.epochs, "Override optim.epochs");
  train->add_option("--resume", tf.resume, "Continue from a checkpoint");
  train->add_option("--stop-after-epoch", tf.stop_after, "Stop after this epoch, keeping the schedule");

  std::string infer_ckpt, infer_in, infer_out;
  auto* infer = app.add_subcommand("infer", "Predict a label map for one volume");
  add_common(infer, infer_f, true);
  infer->add_option("--checkpoint", infer_ckpt)->required();
  infer->add_option("-i,--input", infer_in)->required();
  infer->add_option("--prediction", infer_out, "Output label file")->required();

  std::string eval_ckpt, eval_split = "test";
  auto* evalc = app.add_subcommand("eval", "Score a checkpoint on a manifest split");
  add_common(evalc, eval_f, true);
  evalc->add_option("--checkpoint", eval_ckpt)->required();
  evalc->add_option("--split", eval_split, "train | val | test");

  bool ablate_train = false;
  std::string ablate_split = "test";
  auto* ablate = app.add_subcommand("ablate", "Report (and optionally train) the four APG/MLAM variants");
  add_common(ablate, ablate_f, false);
  ablate->add_flag("--train", ablate_train, "Train and evaluate each variant");
  ablate->add_option("--split", ablate_split, "Evaluation split for --train");

  auto* params = app.add_subcommand("params", "Print tunable and frozen parameter counts");
  add_common(params, params_f, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  if (verbose) log::set_level(log::Level::Info);

  try {
    if (*synth) return cmd_synth(synth_spec, synth_out);
    if (*pre) return cmd_preprocess(pre_f);
    if (*train) return cmd_train(train_f, tf);
    if (*infer) return cmd_infer(infer_f, infer_ckpt, infer_in, infer_out);
    if (*evalc) return cmd_eval(eval_f, eval_ckpt, eval_split);
    if (*ablate) return cmd_ablate(ablate_f, ablate_train, ablate_split);
    if (*params) return cmd_params(params_f);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
