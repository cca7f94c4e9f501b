#include "doctest.h"

#include <cmath>
#include <random>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/eval/metrics.hpp"
#include "autoprosam/data/pipeline.hpp"
#include "autoprosam/eval/sliding_window.hpp"
#include "autoprosam/model/model.hpp"
#include "autoprosam/synth/phantom.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace aps;
using namespace aps::eval;
using aps::testing::blob_labels;
using aps::testing::random_labels;
using aps::testing::random_tensor;
namespace oracle = aps::testing::oracle;

namespace {

data::Volume random_volume(const data::Index3& s, std::uint64_t seed) {
  data::Volume v(s, {1, 1, 1});
  v.data = random_tensor({s[0], s[1], s[2]}, seed);
  return v;
}

data::LabelMap shifted(const data::LabelMap& l, int axis, int by) {
  data::LabelMap out(l.shape, l.num_classes, l.spacing);
  for (std::int64_t d = 0; d < l.shape[0]; ++d)
    for (std::int64_t h = 0; h < l.shape[1]; ++h)
      for (std::int64_t w = 0; w < l.shape[2]; ++w) {
        std::array<std::int64_t, 3> src{d, h, w};
        src[static_cast<std::size_t>(axis)] -= by;
        if (src[0] < 0 || src[1] < 0 || src[2] < 0 || src[0] >= l.shape[0] || src[1] >= l.shape[1] ||
            src[2] >= l.shape[2])
          continue;
        out.at(d, h, w) = l.at(src[0], src[1], src[2]);
      }
  return out;
}

data::LabelMap flipped(const data::LabelMap& l, int axis) {
  auto out = l;
  data::Volume dummy(l.shape, l.spacing);
  data::flip_axis(dummy, out, axis);
  return out;
}

// A model whose logits threshold the raw image: every weight is zero except
// the head's centre tap on the image channel, so label = (image > 0.5).
model::AutoProSam thresholding_model() {
  auto cfg = aps::testing::tiny_model_config();
  cfg.decoder.num_classes = 1;
  cfg.finalize();
  auto m = model::AutoProSam::from_2d_checkpoint(synth::generate_surrogate_2d_checkpoint(cfg.encoder, 1), cfg, 1);
  Tensor& head = m.params().at("decoder.head.weight").var.mutable_value();
  Tensor& bias = m.params().at("decoder.head.bias").var.mutable_value();
  head.fill(0.0);
  const std::int64_t cin = head.dim(1);
  // logit0 = 0.5 - image, logit1 = 0
  head[((0 * cin) + cin - 1) * 27 + 13] = -1.0;
  bias[0] = 0.5;
  bias[1] = 0.0;
  return m;
}

}  // namespace

// ---- sliding window ----

TEST_CASE("window starts follow the stride with a clamped final window") {
  CHECK(window_starts(64, 32, 8) == std::vector<std::int64_t>{0, 8, 16, 24, 32});
  CHECK(window_starts(70, 32, 8) == std::vector<std::int64_t>{0, 8, 16, 24, 32, 38});
  CHECK(window_starts(32, 32, 8) == std::vector<std::int64_t>{0});
  CHECK(window_starts(20, 32, 8) == std::vector<std::int64_t>{0});
  SlidingWindowConfig c;
  c.patch_size = {32, 32, 32};
  CHECK(c.stride(0) == 8);
  c.overlap_ratio = 0.5;
  CHECK(c.stride(1) == 16);
  c.overlap_ratio = 0.0;
  CHECK(c.stride(2) == 32);
  c.overlap_ratio = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("a volume equal to the patch is a single direct forward pass") {
  const auto cfg = aps::testing::tiny_model_config();
  const auto mm = model::AutoProSam::from_2d_checkpoint(synth::generate_surrogate_2d_checkpoint(cfg.encoder, 5), cfg, 5);
  const auto v = random_volume({4, 4, 4}, 1);
  SlidingWindowConfig c;
  c.patch_size = {4, 4, 4};
  CHECK(sliding_window_infer(v, mm, c) == mm.predict_logits(v.data));
  c.patch_size = {8, 8, 8};
  CHECK_THROWS_AS(sliding_window_infer(v, mm, c), ConfigError);
}

TEST_CASE("constant logits stitch to the same constant for any overlap or blending") {
  const auto v = random_volume({13, 9, 11}, 2);
  const PatchPredictor constant_logits = [](const Tensor& p) {
    Tensor out({1, 2, p.dim(2), p.dim(3), p.dim(4)});
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = i < out.numel() / 2 ? 0.3 : -1.7;
    return out;
  };
  for (double overlap : {0.0, 0.5, 0.75}) {
    for (auto blend : {Blending::Constant, Blending::Gaussian}) {
      SlidingWindowConfig c;
      c.patch_size = {4, 4, 4};
      c.overlap_ratio = overlap;
      c.blending = blend;
      const Tensor out = sliding_window_infer(v, constant_logits, c);
      REQUIRE(out.shape() == Shape{1, 2, 13, 9, 11});
      const std::int64_t V = 13 * 9 * 11;
      for (std::int64_t i = 0; i < V; ++i) {
        REQUIRE(out[i] == doctest::Approx(0.3).epsilon(1e-12));
        REQUIRE(out[V + i] == doctest::Approx(-1.7).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("normalized blending weights sum to one at every voxel") {
  const auto v = random_volume({19, 12, 7}, 3);
  const PatchPredictor zeros = [](const Tensor& p) { return Tensor({1, 1, p.dim(2), p.dim(3), p.dim(4)}); };
  for (auto blend : {Blending::Constant, Blending::Gaussian}) {
    for (double overlap : {0.0, 0.3, 0.75}) {
      SlidingWindowConfig c;
      c.patch_size = {8, 8, 8};
      c.overlap_ratio = overlap;
      c.blending = blend;
      Tensor total;
      (void)sliding_window_infer(v, zeros, c, &total);
      REQUIRE(total.numel() == 19 * 12 * 7);
      for (double t : total.values()) REQUIRE(std::abs(t - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("gaussian weights peak at the centre and stay positive") {
  SlidingWindowConfig c;
  c.patch_size = {8, 8, 8};
  c.blending = Blending::Gaussian;
  const Tensor w = blending_weights(c);
  double mx = 0.0;
  for (double x : w.values()) {
    CHECK(x > 0.0);
    mx = std::max(mx, x);
  }
  CHECK(mx <= 1.0);
  c.blending = Blending::Constant;
  const Tensor flat = blending_weights(c);
  for (double x : flat.values()) CHECK(x == 1.0);
}

TEST_CASE("output is a convex combination of window outputs") {
  // Each window returns its own origin index; stitched values must stay within the range.
  const auto v = random_volume({10, 10, 10}, 4);
  int calls = 0;
  const PatchPredictor counter = [&calls](const Tensor& p) {
    Tensor out({1, 1, p.dim(2), p.dim(3), p.dim(4)}, static_cast<double>(calls++));
    return out;
  };
  SlidingWindowConfig c;
  c.patch_size = {4, 4, 4};
  c.blending = Blending::Gaussian;
  const Tensor out = sliding_window_infer(v, counter, c);
  for (double x : out.values()) {
    REQUIRE(x >= -1e-12);
    REQUIRE(x <= calls - 1 + 1e-12);
  }
  CHECK(calls == 7 * 7 * 7);  // starts 0..6 with stride 1
}

TEST_CASE("volumes smaller than the patch are padded and cropped") {
  const auto v = random_volume({3, 5, 2}, 5);
  std::vector<Shape> seen;
  const PatchPredictor echo = [&seen](const Tensor& p) {
    seen.push_back(p.shape());
    return p;  // logits = image
  };
  SlidingWindowConfig c;
  c.patch_size = {4, 4, 4};
  const Tensor out = sliding_window_infer(v, echo, c);
  CHECK(out.shape() == Shape{1, 1, 3, 5, 2});
  // the 5-long axis gets two windows; the image comes back unchanged
  CHECK(seen.size() == 2);
  for (std::int64_t i = 0; i < v.data.numel(); ++i) CHECK(out[i] == doctest::Approx(v.data[i]).epsilon(1e-14));
}

// ---- Dice ----

TEST_CASE("dice score examples") {
  data::LabelMap gt({1, 1, 8}, 1, {1, 1, 1}), pred = gt;
  for (int i : {0, 1, 2, 3}) gt.labels[static_cast<std::size_t>(i)] = 1;
  for (int i : {2, 3, 4, 5}) pred.labels[static_cast<std::size_t>(i)] = 1;
  CHECK(dice_score(pred, gt, 1) == 50.0);
  CHECK(dice_score(gt, gt, 1) == 100.0);
  data::LabelMap disjoint = gt;
  for (auto& v : disjoint.labels) v = 1 - v;
  CHECK(dice_score(disjoint, gt, 1) == 0.0);
  const data::LabelMap empty({1, 1, 8}, 1, {1, 1, 1});
  CHECK(dice_score(empty, empty, 1) == 100.0);
  CHECK(dice_score(empty, gt, 1) == 0.0);
  const data::LabelMap other({1, 2, 4}, 1, {1, 1, 1});
  CHECK_THROWS_AS(dice_score(other, gt, 1), ContractError);
}

TEST_CASE("dice matches the direct formula and is symmetric and flip-invariant") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 40; ++t) {
    const data::Index3 s{4 + t % 5, 5 + t % 3, 6};
    const auto a = random_labels(s, 3, 100 + t, 0.3 + 0.01 * t);
    const auto b = t % 2 ? random_labels(s, 3, 200 + t, 0.5) : blob_labels(s, 3, rng);
    for (int c = 1; c <= 3; ++c) {
      REQUIRE(dice_score(a, b, c) == oracle::dice(a, b, c));
      REQUIRE(dice_score(a, b, c) == dice_score(b, a, c));
      for (int axis = 0; axis < 3; ++axis) REQUIRE(dice_score(flipped(a, axis), flipped(b, axis), c) == dice_score(a, b, c));
    }
  }
}

// ---- NSD ----

TEST_CASE("surface voxels are class voxels touching the outside or the border") {
  data::LabelMap l({5, 5, 5}, 1, {1, 1, 1});
  for (int d = 1; d < 4; ++d)
    for (int h = 1; h < 4; ++h)
      for (int w = 1; w < 4; ++w) l.at(d, h, w) = 1;
  CHECK(surface_voxels(l, 1).size() == 26);  // 3^3 cube minus its centre
  data::LabelMap full({3, 3, 3}, 1, {1, 1, 1});
  for (auto& v : full.labels) v = 1;
  CHECK(surface_voxels(full, 1).size() == 26);
  CHECK(surface_voxels(l, 1) == oracle::surface(l, 1));
}

TEST_CASE("nsd examples") {
  synth::PhantomSpec spec;
  spec.grid_shape = {16, 16, 16};
  spec.organs_override = {{{8, 8, 8}, {4, 4, 4}}};
  const auto gt = synth::generate_phantom(spec).second;
  const data::Spacing one{1, 1, 1};
  CHECK(nsd_score(gt, gt, 1, 0.1, one) == 100.0);
  CHECK(nsd_score(gt, gt, 1, 3.0, one) == 100.0);
  const auto moved = shifted(gt, 2, 1);
  CHECK(nsd_score(moved, gt, 1, 1.0, one) == 100.0);
  const double half = nsd_score(moved, gt, 1, 0.5, one);
  CHECK(half == oracle::nsd(moved, gt, 1, 0.5, one));
  CHECK(half < 100.0);
  CHECK(half > 0.0);

  data::LabelMap a({16, 16, 16}, 1, one), b = a;
  a.at(1, 1, 1) = 1;
  b.at(12, 12, 12) = 1;
  CHECK(nsd_score(a, b, 1, 5.0, one) == 0.0);
  CHECK(nsd_score(a, b, 1, 20.0, one) == 100.0);
  const data::LabelMap empty({16, 16, 16}, 1, one);
  CHECK(nsd_score(empty, empty, 1, 1.0, one) == 100.0);
  CHECK(nsd_score(empty, b, 1, 1.0, one) == 0.0);
  CHECK_THROWS_AS(nsd_score(a, b, 1, 0.0, one), ContractError);
  CHECK_THROWS_AS(nsd_score(a, b, 1, -1.0, one), ContractError);
}

TEST_CASE("nsd equals the exhaustive pairwise oracle on random volumes") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> ext(4, 16);
  const double spacings[] = {0.5, 0.8, 1.0, 1.5, 2.0};
  const double taus[] = {0.5, 1.0, 1.5, 2.0, 3.0};
  int cases = 0;
  for (int t = 0; t < 60; ++t) {
    const data::Index3 s{ext(rng), ext(rng), ext(rng)};
    const data::Spacing sp{spacings[rng() % 5], spacings[rng() % 5], spacings[rng() % 5]};
    auto a = t % 3 == 0 ? random_labels(s, 2, rng(), 0.2) : blob_labels(s, 2, rng);
    auto b = t % 3 == 1 ? shifted(a, static_cast<int>(rng() % 3), 1 + static_cast<int>(rng() % 2)) : blob_labels(s, 2, rng);
    a.spacing = b.spacing = sp;
    const double tau = taus[rng() % 5];
    for (int c = 1; c <= 2; ++c) {
      const double got = nsd_score(a, b, c, tau, sp);
      REQUIRE(got == oracle::nsd(a, b, c, tau, sp));
      REQUIRE(got == nsd_score(b, a, c, tau, sp));
      const int axis = static_cast<int>(rng() % 3);
      REQUIRE(nsd_score(flipped(a, axis), flipped(b, axis), c, tau, sp) == got);
      REQUIRE(got >= 0.0);
      REQUIRE(got <= 100.0);
    }
    ++cases;
  }
  CHECK(cases >= 50);
}

// ---- reports ----

TEST_CASE("case scores and aggregates match direct evaluation") {
  std::vector<MetricsReport> reports;
  std::vector<std::pair<data::LabelMap, data::LabelMap>> pairs;
  for (int i = 0; i < 5; ++i) {
    const auto gt = random_labels({8, 8, 8}, 2, 300 + i, 0.4);
    const auto pred = random_labels({8, 8, 8}, 2, 400 + i, 0.4);
    reports.push_back(score_case("c" + std::to_string(i), pred, gt, {1.0}));
    pairs.emplace_back(pred, gt);
  }
  double cases_then_classes = 0.0;
  std::vector<double> class_mean(2, 0.0);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& [pred, gt] = pairs[i];
    double mean_case = 0.0;
    for (int c = 1; c <= 2; ++c) {
      const double d = oracle::dice(pred, gt, c);
      CHECK(reports[i].dice[static_cast<std::size_t>(c - 1)] == d);
      CHECK(reports[i].nsd[static_cast<std::size_t>(c - 1)] == oracle::nsd(pred, gt, c, 1.0, gt.spacing));
      mean_case += d / 2.0;
      class_mean[static_cast<std::size_t>(c - 1)] += d / 5.0;
    }
    CHECK(reports[i].mean_dice == doctest::Approx(mean_case).epsilon(1e-14));
    cases_then_classes += mean_case / 5.0;
  }
  const auto agg = aggregate(reports);
  CHECK(agg.case_count == 5);
  CHECK(agg.class_dice[0] == doctest::Approx(class_mean[0]).epsilon(1e-14));
  CHECK(agg.mean_dice_classes_then_cases == doctest::Approx(cases_then_classes).epsilon(1e-14));
  CHECK(agg.mean_dice_cases_then_classes == doctest::Approx((class_mean[0] + class_mean[1]) / 2.0).epsilon(1e-14));
  CHECK_THROWS_AS(score_case("x", pairs[0].first, pairs[0].second, {1.0, 2.0, 3.0}), ConfigError);
}

TEST_CASE("evaluate scores a model that reproduces the ground truth at 100") {
  const auto m = thresholding_model();
  std::vector<EvalCase> cases;
  for (int i = 0; i < 3; ++i) {
    auto gt = random_labels({6, 7, 8}, 1, 500 + i, 0.3);
    data::Volume img(gt.shape, {1, 1, 1});
    for (std::size_t j = 0; j < gt.labels.size(); ++j) img.data[static_cast<std::int64_t>(j)] = gt.labels[j];
    cases.push_back({"case" + std::to_string(i), img, gt});
  }
  cases.push_back({"unlabelled", cases[0].image, std::nullopt});
  SlidingWindowConfig c;
  c.patch_size = {4, 4, 4};
  c.overlap_ratio = 0.5;
  const auto r = evaluate(cases, m, c, {1.0});
  REQUIRE(r.reports.size() == 3);
  CHECK(r.skipped == std::vector<std::string>{"unlabelled"});
  for (const auto& rep : r.reports) {
    CHECK(rep.mean_dice == 100.0);
    CHECK(rep.mean_nsd == 100.0);
  }
  CHECK(r.aggregate.mean_dice_cases_then_classes == 100.0);

  const auto single = evaluate({cases[1]}, m, c, {1.0});
  CHECK(single.aggregate.mean_dice_cases_then_classes == single.reports[0].mean_dice);
  CHECK(single.aggregate.mean_nsd_classes_then_cases == single.reports[0].mean_nsd);

  const auto jsonl = metrics_jsonl(r);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 5);
  CHECK(jsonl.find("unlabelled") != std::string::npos);
  CHECK(metrics_table(r).find("case0") != std::string::npos);
}

TEST_CASE("evaluate agrees with direct scoring of its own predictions") {
  auto cfg = aps::testing::tiny_model_config();
  const auto m = model::AutoProSam::from_2d_checkpoint(synth::generate_surrogate_2d_checkpoint(cfg.encoder, 8), cfg, 8);
  std::vector<EvalCase> cases;
  for (int i = 0; i < 5; ++i) {
    const auto gt = random_labels({8, 8, 8}, 2, 600 + i, 0.5);
    cases.push_back({"r" + std::to_string(i), random_volume({8, 8, 8}, 700 + i), gt});
  }
  SlidingWindowConfig c;
  c.patch_size = {4, 4, 4};
  const auto r = evaluate(cases, m, c, {1.5});
  for (std::size_t i = 0; i < 5; ++i) {
    const auto pred = model::predict_labels(sliding_window_infer(cases[i].image, m, c));
    for (int k = 1; k <= 2; ++k) {
      CHECK(r.reports[i].dice[static_cast<std::size_t>(k - 1)] == oracle::dice(pred, *cases[i].labels, k));
      CHECK(r.reports[i].nsd[static_cast<std::size_t>(k - 1)] == oracle::nsd(pred, *cases[i].labels, k, 1.5, {1, 1, 1}));
    }
  }
}
