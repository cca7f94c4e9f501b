#include "autoprosam/app/run_config.hpp"

#include <cstdlib>
#include <fstream>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/model/config_json.hpp"

namespace aps::app {

namespace {

const char* freeze_name(train::FreezePolicy p) {
  return p == train::FreezePolicy::Standard ? "standard" : "all_tunable";
}

train::FreezePolicy parse_freeze(const std::string& s) {
  if (s == "standard") return train::FreezePolicy::Standard;
  if (s == "all_tunable") return train::FreezePolicy::AllTunable;
  throw ConfigError("freeze_policy: expected standard|all_tunable, got '" + s + "'");
}

const char* blending_name(eval::Blending b) { return b == eval::Blending::Constant ? "constant" : "gaussian"; }

eval::Blending parse_blending(const std::string& s) {
  if (s == "constant") return eval::Blending::Constant;
  if (s == "gaussian") return eval::Blending::Gaussian;
  throw ConfigError("sliding_window.blending: expected constant|gaussian, got '" + s + "'");
}

io::Json preprocess_json(const RunConfig& c) {
  const auto& p = c.preprocess;
  io::Json j{{"preset", c.preprocess_preset},
             {"clip_range", {p.clip_lo, p.clip_hi}},
             {"normalization", data::norm_mode_name(p.mode)},
             {"shift", p.shift},
             {"divide", p.divide}};
  j["target_spacing"] = p.target_spacing ? io::Json(*p.target_spacing) : io::Json(nullptr);
  return j;
}

void read_preprocess(const io::Json& j, RunConfig& c) {
  io::JsonFields f(j, "preprocess");
  f.get("preset", c.preprocess_preset);
  if (!c.preprocess_preset.empty()) c.preprocess = data::preprocess_preset(c.preprocess_preset);
  std::array<double, 2> clip{c.preprocess.clip_lo, c.preprocess.clip_hi};
  std::string mode = data::norm_mode_name(c.preprocess.mode);
  f.get("clip_range", clip).get("normalization", mode).get("shift", c.preprocess.shift).get("divide", c.preprocess.divide);
  if (const auto* ts = f.child("target_spacing")) {
    if (ts->is_null()) {
      c.preprocess.target_spacing.reset();
    } else {
      try {
        c.preprocess.target_spacing = ts->get<data::Spacing>();
      } catch (const io::Json::exception& e) {
        throw ConfigError(std::string("preprocess.target_spacing: ") + e.what());
      }
    }
  }
  f.finish();
  c.preprocess.clip_lo = clip[0];
  c.preprocess.clip_hi = clip[1];
  c.preprocess.mode = data::parse_norm_mode(mode);
}

}  // namespace

void RunConfig::finalize() {
  model.finalize();
  optim.patch_size = model.encoder.input_size();
  window.patch_size = model.encoder.input_size();
  preprocess.validate();
  loss.validate();
  optim.validate();
  window.validate();
  if (pos < 0 || neg < 0 || pos + neg == 0) throw ConfigError("patches.pos/neg: nonnegative, not both zero");
  if (nsd_tolerance_mm.empty()) throw ConfigError("eval.nsd_tolerance_mm: needs at least one value");
  for (double t : nsd_tolerance_mm) {
    if (!(t > 0)) throw ConfigError("eval.nsd_tolerance_mm: values must be > 0");
  }
  if (nsd_tolerance_mm.size() != 1 && static_cast<std::int64_t>(nsd_tolerance_mm.size()) != model.decoder.num_classes) {
    throw ConfigError("eval.nsd_tolerance_mm: give one value or one per class");
  }
}

RunConfig run_config_from_json(const io::Json& j) {
  RunConfig c;
  io::JsonFields f(j, "config");
  std::string manifest = c.manifest.string(), ckpt2d, out = c.output_dir.string(), freeze = freeze_name(c.freeze);
  f.get("manifest", manifest)
      .get("checkpoint_2d", ckpt2d)
      .get("surrogate_seed", c.surrogate_seed)
      .get("seed", c.seed)
      .get("deterministic", c.deterministic)
      .get("output_dir", out)
      .get("freeze_policy", freeze);
  if (const auto* p = f.child("preprocess")) read_preprocess(*p, c);
  if (const auto* m = f.child("model")) model::from_json(*m, c.model, "model");
  if (const auto* l = f.child("loss")) {
    io::JsonFields lf(*l, "loss");
    lf.get("dice_smooth", c.loss.dice_smooth)
        .get("include_background_in_dice", c.loss.include_background_in_dice)
        .get("dice_weight", c.loss.dice_weight)
        .get("ce_weight", c.loss.ce_weight);
    lf.finish();
  }
  if (const auto* o = f.child("optim")) {
    io::JsonFields of(*o, "optim");
    of.get("base_lr", c.optim.base_lr)
        .get("beta1", c.optim.beta1)
        .get("beta2", c.optim.beta2)
        .get("eps", c.optim.eps)
        .get("weight_decay", c.optim.weight_decay)
        .get("epochs", c.optim.epochs)
        .get("warmup_epochs", c.optim.warmup_epochs)
        .get("final_lr_fraction", c.optim.final_lr_fraction)
        .get("batch_size", c.optim.batch_size)
        .get("steps_per_epoch", c.optim.steps_per_epoch);
    of.finish();
  }
  if (const auto* p = f.child("patches")) {
    io::JsonFields pf(*p, "patches");
    pf.get("pos", c.pos).get("neg", c.neg);
    pf.finish();
  }
  if (const auto* a = f.child("augment")) {
    io::JsonFields af(*a, "augment");
    std::array<double, 2> scale{c.augment.scale_lo, c.augment.scale_hi}, shift{c.augment.shift_lo, c.augment.shift_hi};
    af.get("p_flip", c.augment.p_flip)
        .get("p_rotate", c.augment.p_rotate)
        .get("p_scale", c.augment.p_scale)
        .get("p_shift", c.augment.p_shift)
        .get("scale_range", scale)
        .get("shift_range", shift);
    af.finish();
    c.augment.scale_lo = scale[0];
    c.augment.scale_hi = scale[1];
    c.augment.shift_lo = shift[0];
    c.augment.shift_hi = shift[1];
  }
  if (const auto* w = f.child("sliding_window")) {
    io::JsonFields wf(*w, "sliding_window");
    std::string blend = blending_name(c.window.blending);
    wf.get("overlap", c.window.overlap_ratio)
        .get("blending", blend)
        .get("gaussian_sigma_fraction", c.window.gaussian_sigma_fraction);
    wf.finish();
    c.window.blending = parse_blending(blend);
  }
  if (const auto* e = f.child("eval")) {
    io::JsonFields ef(*e, "eval");
    ef.get("nsd_tolerance_mm", c.nsd_tolerance_mm);
    ef.finish();
  }
  f.finish();
  c.manifest = manifest;
  c.checkpoint_2d = ckpt2d;
  c.output_dir = out;
  c.freeze = parse_freeze(freeze);
  c.finalize();
  return c;
}

io::Json to_json(const RunConfig& c) {
  return {{"manifest", c.manifest.string()},
          {"checkpoint_2d", c.checkpoint_2d.string()},
          {"surrogate_seed", c.surrogate_seed},
          {"seed", c.seed},
          {"deterministic", c.deterministic},
          {"output_dir", c.output_dir.string()},
          {"freeze_policy", freeze_name(c.freeze)},
          {"preprocess", preprocess_json(c)},
          {"model", model::to_json(c.model)},
          {"loss",
           {{"dice_smooth", c.loss.dice_smooth},
            {"include_background_in_dice", c.loss.include_background_in_dice},
            {"dice_weight", c.loss.dice_weight},
            {"ce_weight", c.loss.ce_weight}}},
          {"optim",
           {{"base_lr", c.optim.base_lr},
            {"beta1", c.optim.beta1},
            {"beta2", c.optim.beta2},
            {"eps", c.optim.eps},
            {"weight_decay", c.optim.weight_decay},
            {"epochs", c.optim.epochs},
            {"warmup_epochs", c.optim.warmup_epochs},
            {"final_lr_fraction", c.optim.final_lr_fraction},
            {"batch_size", c.optim.batch_size},
            {"steps_per_epoch", c.optim.steps_per_epoch}}},
          {"patches", {{"pos", c.pos}, {"neg", c.neg}}},
          {"augment",
           {{"p_flip", c.augment.p_flip},
            {"p_rotate", c.augment.p_rotate},
            {"p_scale", c.augment.p_scale},
            {"p_shift", c.augment.p_shift},
            {"scale_range", {c.augment.scale_lo, c.augment.scale_hi}},
            {"shift_range", {c.augment.shift_lo, c.augment.shift_hi}}}},
          {"sliding_window",
           {{"overlap", c.window.overlap_ratio},
            {"blending", blending_name(c.window.blending)},
            {"gaussian_sigma_fraction", c.window.gaussian_sigma_fraction}}},
          {"eval", {{"nsd_tolerance_mm", c.nsd_tolerance_mm}}}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path.string() + "'");
  io::Json j;
  try {
    j = io::Json::parse(f);
  } catch (const io::Json::exception& e) {
    throw ConfigError("config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  RunConfig c = run_config_from_json(j);
  const auto base = std::filesystem::absolute(path).parent_path();
  if (!c.manifest.empty() && c.manifest.is_relative()) c.manifest = (base / c.manifest).lexically_normal();
  if (!c.checkpoint_2d.empty() && c.checkpoint_2d.is_relative()) {
    c.checkpoint_2d = (base / c.checkpoint_2d).lexically_normal();
  }
  return c;
}

void SynthConfig::validate() const {
  phantom.validate();
  if (cases < 1) throw ConfigError("cases: must be >= 1");
  if (train_cases > cases || val_cases > cases || (train_cases >= 0 && val_cases >= 0 && train_cases + val_cases > cases)) {
    throw ConfigError("train_cases/val_cases: exceed the case count");
  }
  if (format != "nii.gz" && format != "nii" && format != "aps") throw ConfigError("format: expected nii.gz|nii|aps");
}

SynthConfig synth_config_from_json(const io::Json& j) {
  SynthConfig c;
  io::JsonFields f(j, "synth");
  f.get("cases", c.cases).get("train_cases", c.train_cases).get("val_cases", c.val_cases).get("format", c.format);
  auto& p = c.phantom;
  std::string family = synth::shape_family_name(p.shape_family);
  f.get("grid_shape", p.grid_shape)
      .get("spacing_mm", p.spacing_mm)
      .get("num_organs", p.num_organs)
      .get("shape_family", family)
      .get("organ_intensity", p.organ_intensity)
      .get("background_intensity", p.background_intensity)
      .get("noise_sigma", p.noise_sigma)
      .get("seed", p.seed)
      .get("radius_min_fraction", p.radius_min_fraction)
      .get("radius_max_fraction", p.radius_max_fraction);
  if (const auto* o = f.child("organs_override")) {
    if (!o->is_array()) throw ConfigError("synth.organs_override: expected an array");
    for (std::size_t i = 0; i < o->size(); ++i) {
      synth::OrganPlacement pl;
      io::JsonFields of((*o)[i], "synth.organs_override[" + std::to_string(i) + "]");
      of.get("center_mm", pl.center_mm).get("radii_mm", pl.radii_mm);
      of.finish();
      p.organs_override.push_back(pl);
    }
  }
  f.finish();
  p.shape_family = synth::parse_shape_family(family);
  c.validate();
  return c;
}

io::Json to_json(const SynthConfig& c) {
  const auto& p = c.phantom;
  io::Json overrides = io::Json::array();
  for (const auto& o : p.organs_override) overrides.push_back({{"center_mm", o.center_mm}, {"radii_mm", o.radii_mm}});
  return {{"cases", c.cases},
          {"train_cases", c.train_cases},
          {"val_cases", c.val_cases},
          {"format", c.format},
          {"grid_shape", p.grid_shape},
          {"spacing_mm", p.spacing_mm},
          {"num_organs", p.num_organs},
          {"shape_family", synth::shape_family_name(p.shape_family)},
          {"organ_intensity", p.organ_intensity},
          {"background_intensity", p.background_intensity},
          {"noise_sigma", p.noise_sigma},
          {"seed", p.seed},
          {"radius_min_fraction", p.radius_min_fraction},
          {"radius_max_fraction", p.radius_max_fraction},
          {"organs_override", overrides}};
}

std::filesystem::path resolve_output(const std::filesystem::path& p) {
  const char* root = std::getenv("APS_OUTPUT_ROOT");
  if (p.is_relative() && root && *root) return std::filesystem::path(root) / p;
  return p;
}

}  // namespace aps::app
