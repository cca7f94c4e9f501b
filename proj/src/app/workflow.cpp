#include "autoprosam/app/workflow.hpp"

#include <cstdio>
#include <sstream>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/core/kernels.hpp"
#include "autoprosam/data/manifest.hpp"
#include "autoprosam/io/volume_io.hpp"
#include "autoprosam/synth/phantom.hpp"

#include <omp.h>

namespace aps::app {

model::AutoProSam build_model(const RunConfig& cfg) {
  const io::Archive archive = cfg.checkpoint_2d.empty()
                                  ? synth::generate_surrogate_2d_checkpoint(cfg.model.encoder, cfg.surrogate_seed)
                                  : io::Archive::read(cfg.checkpoint_2d);
  return model::AutoProSam::from_2d_checkpoint(archive, cfg.model, cfg.seed);
}

namespace {

template <typename F>
void for_split(const RunConfig& cfg, const std::string& split, F&& fn) {
  if (cfg.manifest.empty()) throw ConfigError("manifest: no dataset manifest configured");
  for (const auto& c : data::filter_split(data::read_manifest(cfg.manifest), split)) fn(c);
}

std::pair<data::Volume, std::optional<data::LabelMap>> load_case(const RunConfig& cfg, const data::DatasetCase& c) {
  auto [vol, embedded] = io::load_volume(c.image);
  std::optional<data::LabelMap> labels = std::move(embedded);
  const int K = static_cast<int>(cfg.model.decoder.num_classes);
  if (c.label) labels = io::load_label_map(*c.label, K);
  if (labels) {
    labels->num_classes = K;
    labels->validate();
    if (labels->shape != vol.shape()) throw DataError("case '" + c.id + "': label and image shapes differ");
    labels->spacing = vol.spacing;
  }
  auto [pv, pl] = data::preprocess(vol, labels ? &*labels : nullptr, cfg.preprocess);
  return {std::move(pv), std::move(pl)};
}

}  // namespace

std::vector<train::TrainCase> load_train_cases(const RunConfig& cfg, const std::string& split) {
  std::vector<train::TrainCase> out;
  for_split(cfg, split, [&](const data::DatasetCase& c) {
    auto [v, l] = load_case(cfg, c);
    if (!l) throw DataError("case '" + c.id + "' in split '" + split + "' has no labels");
    out.push_back({c.id, std::move(v), std::move(*l)});
  });
  return out;
}

std::vector<eval::EvalCase> load_eval_cases(const RunConfig& cfg, const std::string& split) {
  std::vector<eval::EvalCase> out;
  for_split(cfg, split, [&](const data::DatasetCase& c) {
    auto [v, l] = load_case(cfg, c);
    out.push_back({c.id, std::move(v), std::move(l)});
  });
  return out;
}

std::string params_report(const model::AutoProSam& m) {
  std::ostringstream os;
  const auto total = m.params().counts();
  os << "parameters: tunable " << total.tunable << ", frozen " << total.frozen << ", total " << total.total() << '\n';
  for (const char* prefix : {"encoder.", "apg.", "decoder."}) {
    const auto c = m.params().counts(prefix);
    os << "  " << prefix << " tunable " << c.tunable << ", frozen " << c.frozen << '\n';
  }
  os << "  apg " << (m.config().decoder.apg_enabled ? "on" : "off") << ", mlam "
     << (m.config().decoder.mlam_enabled ? "on" : "off") << '\n';
  return os.str();
}

train::FitOptions fit_options(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  train::FitOptions o;
  o.optim = cfg.optim;
  o.loss = cfg.loss;
  o.freeze = cfg.freeze;
  o.pos = cfg.pos;
  o.neg = cfg.neg;
  o.augment = cfg.augment;
  o.window = cfg.window;
  o.seed = cfg.seed;
  o.out_dir = out_dir;
  return o;
}

std::vector<data::DatasetCase> synthesize_dataset(const SynthConfig& sc, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  const std::int64_t n_train = sc.train_cases >= 0 ? sc.train_cases : (sc.cases * 6 + 5) / 10;
  const std::int64_t n_val = sc.val_cases >= 0 ? sc.val_cases : std::min(sc.cases - n_train, (sc.cases * 2 + 5) / 10);
  std::vector<data::DatasetCase> cases;
  for (std::int64_t i = 0; i < sc.cases; ++i) {
    synth::PhantomSpec spec = sc.phantom;
    spec.seed = sc.phantom.seed + static_cast<std::uint64_t>(i);
    auto [vol, labels] = synth::generate_phantom(spec);
    char name[32];
    std::snprintf(name, sizeof name, "case_%03lld.%s", static_cast<long long>(i), sc.format.c_str());
    data::DatasetCase c;
    c.image = dir / "images" / name;
    c.label = dir / "labels" / name;
    c.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    io::save_volume(c.image, vol);
    io::save_label_map(*c.label, labels);
    cases.push_back(c);
  }
  data::write_manifest(dir / "manifest.txt", cases);
  return cases;
}

void apply_runtime(const RunConfig& cfg) {
  if (cfg.deterministic) {
    kernels::set_backend(kernels::Backend::Serial);
    omp_set_num_threads(1);
  } else {
    kernels::set_backend(kernels::Backend::OpenMP);
  }
}

}  // namespace aps::app
