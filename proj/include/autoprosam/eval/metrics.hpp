#pragma once

#include <optional>
#include <string>
#include <vector>

#include "autoprosam/data/volume.hpp"
#include "autoprosam/io/json_fields.hpp"

namespace aps::model {
class AutoProSam;
}

namespace aps::eval {

struct SlidingWindowConfig;

// Binary Dice of class_id in percent; both empty -> 100, one empty -> 0.
double dice_score(const data::LabelMap& pred, const data::LabelMap& gt, int class_id);

// Foreground voxels of class_id with a face-adjacent voxel outside the class
// (the volume border counts as outside).
std::vector<data::Index3> surface_voxels(const data::LabelMap& labels, int class_id);

// Normalized surface distance in percent at tolerance tau (mm).
double nsd_score(const data::LabelMap& pred, const data::LabelMap& gt, int class_id, double tolerance_mm,
                 const data::Spacing& spacing);

struct MetricsReport {
  std::string case_id;
  std::vector<double> dice;  // classes 1..K, percent
  std::vector<double> nsd;
  double mean_dice = 0.0;
  double mean_nsd = 0.0;
  std::vector<double> tolerance_mm;
};

struct AggregateReport {
  std::size_t case_count = 0;
  std::vector<double> class_dice;  // per class, mean over cases
  std::vector<double> class_nsd;
  double mean_dice_cases_then_classes = 0.0;
  double mean_dice_classes_then_cases = 0.0;
  double mean_nsd_cases_then_classes = 0.0;
  double mean_nsd_classes_then_cases = 0.0;
};

struct EvalCase {
  std::string id;
  data::Volume image;  // preprocessed
  std::optional<data::LabelMap> labels;
};

struct EvalResult {
  std::vector<MetricsReport> reports;
  std::vector<std::string> skipped;  // cases without ground truth
  AggregateReport aggregate;
};

// tolerances: one per class, or a single value used for every class.
MetricsReport score_case(const std::string& id, const data::LabelMap& pred, const data::LabelMap& gt,
                         const std::vector<double>& tolerances_mm);
AggregateReport aggregate(const std::vector<MetricsReport>& reports);

EvalResult evaluate(const std::vector<EvalCase>& cases, const model::AutoProSam& model,
                    const SlidingWindowConfig& window, const std::vector<double>& tolerances_mm);

io::Json to_json(const MetricsReport& r);
io::Json to_json(const AggregateReport& r);
// One JSON record per line: every case, skip notices, then the aggregate.
std::string metrics_jsonl(const EvalResult& result);
std::string metrics_table(const EvalResult& result);

}  // namespace aps::eval
