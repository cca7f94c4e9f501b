#include "autoprosam/eval/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/core/logging.hpp"
#include "autoprosam/eval/sliding_window.hpp"
#include "autoprosam/model/mask_decoder.hpp"
#include "autoprosam/model/model.hpp"

namespace aps::eval {

namespace {

void require_same_shape(const data::LabelMap& a, const data::LabelMap& b, const char* what) {
  if (a.shape != b.shape) throw ContractError(std::string(what) + ": prediction and ground truth shapes differ");
}

std::vector<std::uint8_t> surface_mask(const data::LabelMap& m, int c) {
  const auto& s = m.shape;
  std::vector<std::uint8_t> out(m.labels.size(), 0);
  auto in = [&](std::int64_t d, std::int64_t h, std::int64_t w) {
    return d >= 0 && h >= 0 && w >= 0 && d < s[0] && h < s[1] && w < s[2] && m.at(d, h, w) == c;
  };
  for (std::int64_t d = 0; d < s[0]; ++d)
    for (std::int64_t h = 0; h < s[1]; ++h)
      for (std::int64_t w = 0; w < s[2]; ++w) {
        if (m.at(d, h, w) != c) continue;
        if (!in(d - 1, h, w) || !in(d + 1, h, w) || !in(d, h - 1, w) || !in(d, h + 1, w) || !in(d, h, w - 1) ||
            !in(d, h, w + 1)) {
          out[static_cast<std::size_t>(m.offset(d, h, w))] = 1;
        }
      }
  return out;
}

// Number of voxels in `from` with a voxel of `to_mask` within tau.
std::int64_t count_within(const std::vector<data::Index3>& from, const std::vector<std::uint8_t>& to_mask,
                          const data::Index3& s, double tau, const data::Spacing& sp) {
  std::array<std::int64_t, 3> r{};
  for (std::size_t a = 0; a < 3; ++a) r[a] = static_cast<std::int64_t>(std::ceil(tau / sp[a]));
  const double tau2 = tau * tau;
  std::int64_t hits = 0;
  for (const auto& v : from) {
    bool found = false;
    for (std::int64_t dz = -r[0]; dz <= r[0] && !found; ++dz) {
      const std::int64_t z = v[0] + dz;
      if (z < 0 || z >= s[0]) continue;
      for (std::int64_t dy = -r[1]; dy <= r[1] && !found; ++dy) {
        const std::int64_t y = v[1] + dy;
        if (y < 0 || y >= s[1]) continue;
        for (std::int64_t dx = -r[2]; dx <= r[2]; ++dx) {
          const std::int64_t x = v[2] + dx;
          if (x < 0 || x >= s[2] || !to_mask[static_cast<std::size_t>((z * s[1] + y) * s[2] + x)]) continue;
          const double a = static_cast<double>(dz) * sp[0], b = static_cast<double>(dy) * sp[1],
                       c = static_cast<double>(dx) * sp[2];
          if (a * a + b * b + c * c <= tau2) {
            found = true;
            break;
          }
        }
      }
    }
    if (found) ++hits;
  }
  return hits;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double dice_score(const data::LabelMap& pred, const data::LabelMap& gt, int c) {
  require_same_shape(pred, gt, "dice_score");
  std::int64_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const bool p = pred.labels[i] == c, g = gt.labels[i] == c;
    inter += p && g;
    np += p;
    ng += g;
  }
  if (np == 0 && ng == 0) return 100.0;
  if (np == 0 || ng == 0) return 0.0;
  return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

std::vector<data::Index3> surface_voxels(const data::LabelMap& labels, int c) {
  const auto mask = surface_mask(labels, c);
  std::vector<data::Index3> out;
  const auto& s = labels.shape;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const auto o = static_cast<std::int64_t>(i);
    out.push_back({o / (s[1] * s[2]), (o / s[2]) % s[1], o % s[2]});
  }
  return out;
}

double nsd_score(const data::LabelMap& pred, const data::LabelMap& gt, int c, double tau,
                 const data::Spacing& spacing) {
  require_same_shape(pred, gt, "nsd_score");
  if (!(tau > 0)) throw ContractError("nsd_score: tolerance must be > 0");
  data::require_valid_spacing(spacing, "nsd_score");
  const auto sp_mask = surface_mask(pred, c), sg_mask = surface_mask(gt, c);
  const auto sp = surface_voxels(pred, c), sg = surface_voxels(gt, c);
  if (sp.empty() && sg.empty()) return 100.0;
  if (sp.empty() || sg.empty()) return 0.0;
  const std::int64_t a = count_within(sp, sg_mask, gt.shape, tau, spacing);
  const std::int64_t b = count_within(sg, sp_mask, gt.shape, tau, spacing);
  return 100.0 * static_cast<double>(a + b) / static_cast<double>(sp.size() + sg.size());
}

MetricsReport score_case(const std::string& id, const data::LabelMap& pred, const data::LabelMap& gt,
                         const std::vector<double>& tolerances) {
  require_same_shape(pred, gt, "score_case");
  const int K = gt.num_classes;
  if (tolerances.empty() || (tolerances.size() != 1 && tolerances.size() != static_cast<std::size_t>(K))) {
    throw ConfigError("nsd tolerance: give one value or one per class");
  }
  MetricsReport r;
  r.case_id = id;
  for (int c = 1; c <= K; ++c) {
    const double tau = tolerances.size() == 1 ? tolerances[0] : tolerances[static_cast<std::size_t>(c - 1)];
    r.dice.push_back(dice_score(pred, gt, c));
    r.nsd.push_back(nsd_score(pred, gt, c, tau, gt.spacing));
    r.tolerance_mm.push_back(tau);
  }
  r.mean_dice = mean(r.dice);
  r.mean_nsd = mean(r.nsd);
  return r;
}

AggregateReport aggregate(const std::vector<MetricsReport>& reports) {
  AggregateReport a;
  a.case_count = reports.size();
  if (reports.empty()) return a;
  const std::size_t K = reports.front().dice.size();
  a.class_dice.assign(K, 0.0);
  a.class_nsd.assign(K, 0.0);
  std::vector<double> case_dice, case_nsd;
  for (const auto& r : reports) {
    if (r.dice.size() != K) throw ContractError("aggregate: reports disagree on the class count");
    for (std::size_t c = 0; c < K; ++c) {
      a.class_dice[c] += r.dice[c] / static_cast<double>(reports.size());
      a.class_nsd[c] += r.nsd[c] / static_cast<double>(reports.size());
    }
    case_dice.push_back(r.mean_dice);
    case_nsd.push_back(r.mean_nsd);
  }
  a.mean_dice_cases_then_classes = mean(a.class_dice);
  a.mean_nsd_cases_then_classes = mean(a.class_nsd);
  a.mean_dice_classes_then_cases = mean(case_dice);
  a.mean_nsd_classes_then_cases = mean(case_nsd);
  return a;
}

EvalResult evaluate(const std::vector<EvalCase>& cases, const model::AutoProSam& model,
                    const SlidingWindowConfig& window, const std::vector<double>& tolerances) {
  EvalResult result;
  for (const auto& c : cases) {
    if (!c.labels) {
      log::warn("evaluate: case '" + c.id + "' has no ground truth; skipped");
      result.skipped.push_back(c.id);
      continue;
    }
    const Tensor logits = sliding_window_infer(c.image, model, window);
    const auto pred = model::predict_labels(logits, c.image.spacing);
    data::LabelMap gt = *c.labels;
    gt.spacing = c.image.spacing;
    result.reports.push_back(score_case(c.id, pred, gt, tolerances));
  }
  result.aggregate = aggregate(result.reports);
  return result;
}

io::Json to_json(const MetricsReport& r) {
  return {{"type", "case"},         {"case_id", r.case_id},     {"dice", r.dice},
          {"nsd", r.nsd},           {"mean_dice", r.mean_dice}, {"mean_nsd", r.mean_nsd},
          {"tolerance_mm", r.tolerance_mm}};
}

io::Json to_json(const AggregateReport& a) {
  return {{"type", "aggregate"},
          {"cases", a.case_count},
          {"class_dice", a.class_dice},
          {"class_nsd", a.class_nsd},
          {"mean_dice_cases_then_classes", a.mean_dice_cases_then_classes},
          {"mean_dice_classes_then_cases", a.mean_dice_classes_then_cases},
          {"mean_nsd_cases_then_classes", a.mean_nsd_cases_then_classes},
          {"mean_nsd_classes_then_cases", a.mean_nsd_classes_then_cases}};
}

std::string metrics_jsonl(const EvalResult& result) {
  std::ostringstream os;
  for (const auto& r : result.reports) os << to_json(r).dump() << '\n';
  for (const auto& id : result.skipped) {
    os << io::Json{{"type", "skipped"}, {"case_id", id}, {"reason", "missing ground truth"}}.dump() << '\n';
  }
  os << to_json(result.aggregate).dump() << '\n';
  return os.str();
}

std::string metrics_table(const EvalResult& result) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s %10s %10s\n", "case", "Dice (%)", "NSD (%)");
  os << buf;
  for (const auto& r : result.reports) {
    std::snprintf(buf, sizeof buf, "%-24s %10.2f %10.2f\n", r.case_id.c_str(), r.mean_dice, r.mean_nsd);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-24s %10.2f %10.2f\n", "mean", result.aggregate.mean_dice_cases_then_classes,
                result.aggregate.mean_nsd_cases_then_classes);
  os << buf;
  for (const auto& id : result.skipped) os << "skipped " << id << " (no ground truth)\n";
  return os.str();
}

}  // namespace aps::eval
