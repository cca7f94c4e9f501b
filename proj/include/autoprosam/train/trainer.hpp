#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "autoprosam/data/pipeline.hpp"
#include "autoprosam/eval/metrics.hpp"
#include "autoprosam/eval/sliding_window.hpp"
#include "autoprosam/model/model.hpp"
#include "autoprosam/train/loss.hpp"
#include "autoprosam/train/optim.hpp"

namespace aps::train {

struct TrainCase {
  std::string id;
  data::Volume image;  // preprocessed
  data::LabelMap labels;
};

struct FitOptions {
  OptimConfig optim;
  LossConfig loss;
  FreezePolicy freeze = FreezePolicy::Standard;
  std::int64_t pos = 1;  // foreground : background patch ratio
  std::int64_t neg = 1;
  data::AugmentConfig augment;
  eval::SlidingWindowConfig window;
  std::uint64_t seed = 0;
  // Empty: no files are written.
  std::filesystem::path out_dir;
  // Checkpoint to continue from (model, optimizer state, epoch counters).
  std::optional<std::filesystem::path> resume_from;
  // Last epoch to run (inclusive) while keeping the full schedule.
  std::optional<std::int64_t> stop_after_epoch;
};

struct StepRecord {
  std::int64_t epoch = 0;
  std::int64_t step = 0;  // global
  double lr = 0.0;
  double loss = 0.0;
  double dice_term = 0.0;
  double ce_term = 0.0;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_dice;  // mean Dice (%) over validation cases
};

struct CheckpointRecord {
  std::int64_t epoch = 0;
  std::filesystem::path path;
  std::optional<double> val_dice;
};

struct FitResult {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::vector<CheckpointRecord> checkpoints;
  std::optional<std::size_t> best;  // index into checkpoints
};

// Bresenham split of the ratio: item j of the run is foreground when the
// running foreground quota steps up.
bool foreground_slot(std::int64_t j, std::int64_t pos, std::int64_t neg);

FitResult fit(const std::vector<TrainCase>& train, const std::vector<TrainCase>& val, model::AutoProSam& model,
              const FitOptions& options);

// Index of the best checkpoint: highest score, ties to the later one; with
// no scores, the last checkpoint.
std::size_t select_best(std::size_t checkpoint_count, const std::vector<double>& val_scores);

// Mean Dice (%) of the model on labelled cases via sliding-window inference.
double validation_dice(const std::vector<TrainCase>& cases, const model::AutoProSam& model,
                       const eval::SlidingWindowConfig& window);

}  // namespace aps::train
