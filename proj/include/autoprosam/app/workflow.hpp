#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "autoprosam/app/run_config.hpp"
#include "autoprosam/data/manifest.hpp"
#include "autoprosam/eval/metrics.hpp"
#include "autoprosam/model/model.hpp"
#include "autoprosam/train/trainer.hpp"

namespace aps::app {

// Imports the configured 2D archive, or a seeded surrogate when none is set.
model::AutoProSam build_model(const RunConfig& cfg);

// Loads and preprocesses the manifest cases of one split.
std::vector<train::TrainCase> load_train_cases(const RunConfig& cfg, const std::string& split);
std::vector<eval::EvalCase> load_eval_cases(const RunConfig& cfg, const std::string& split);

std::string params_report(const model::AutoProSam& model);

// Training options of a run writing into out_dir.
train::FitOptions fit_options(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Writes sc.cases phantoms under dir/images and dir/labels plus dir/manifest.txt.
std::vector<data::DatasetCase> synthesize_dataset(const SynthConfig& sc, const std::filesystem::path& dir);

// Applies the backend choice implied by cfg.deterministic.
void apply_runtime(const RunConfig& cfg);

}  // namespace aps::app
