#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "autoprosam/data/pipeline.hpp"
#include "autoprosam/eval/sliding_window.hpp"
#include "autoprosam/io/json_fields.hpp"
#include "autoprosam/model/config.hpp"
#include "autoprosam/synth/phantom.hpp"
#include "autoprosam/train/loss.hpp"
#include "autoprosam/train/optim.hpp"

namespace aps::app {

// Everything a run needs, read from one JSON file. Patch sizes of the
// optimizer and the sliding window are derived from the model input size.
struct RunConfig {
  std::filesystem::path manifest;
  std::string preprocess_preset;  // empty: fields below as given
  data::PreprocessConfig preprocess;
  model::ModelConfig model;
  train::LossConfig loss;
  train::OptimConfig optim;
  train::FreezePolicy freeze = train::FreezePolicy::Standard;
  std::int64_t pos = 1;
  std::int64_t neg = 1;
  data::AugmentConfig augment;
  eval::SlidingWindowConfig window;
  std::vector<double> nsd_tolerance_mm{1.0};
  std::filesystem::path checkpoint_2d;  // empty: seeded surrogate
  std::uint64_t surrogate_seed = 0;
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::filesystem::path output_dir = "runs/default";

  // Derives shared sizes and validates every nested config.
  void finalize();
};

RunConfig run_config_from_json(const io::Json& j);
io::Json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

// Batch phantom synthesis settings.
struct SynthConfig {
  synth::PhantomSpec phantom;
  std::int64_t cases = 10;
  std::int64_t train_cases = -1;  // -1: 60% train, 20% val, rest test
  std::int64_t val_cases = -1;
  std::string format = "nii.gz";  // nii.gz | nii | aps

  void validate() const;
};

SynthConfig synth_config_from_json(const io::Json& j);
io::Json to_json(const SynthConfig& cfg);

// Relative output paths resolve against $APS_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::filesystem::path& p);

}  // namespace aps::app
