#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/data/pipeline.hpp"
#include "autoprosam/synth/phantom.hpp"
#include "support.hpp"

using namespace aps;
using namespace aps::data;

namespace {

Volume random_volume(const Index3& shape, std::uint64_t seed, double lo, double hi) {
  Volume v(shape, {1.0, 1.0, 1.0});
  v.data = aps::testing::random_tensor({shape[0], shape[1], shape[2]}, seed, lo, hi);
  return v;
}

// Multilinear in (d, h, w), so trilinear interpolation reproduces it exactly.
double multilinear(double d, double h, double w) { return 1.0 + 2.0 * d + 3.0 * h - w + 0.5 * d * h * w; }

}  // namespace

TEST_CASE("resampling to the source spacing is the identity") {
  auto v = random_volume({6, 7, 5}, 1, -50, 50);
  v.spacing = {1.5, 0.8, 0.8};
  const auto l = aps::testing::random_labels(v.shape(), 3, 2);
  LabelMap lm = l;
  lm.spacing = v.spacing;
  const auto [r, rl] = resample(v, &lm, v.spacing);
  CHECK(r.data == v.data);
  REQUIRE(rl.has_value());
  CHECK(rl->labels == lm.labels);
}

TEST_CASE("constant volumes stay constant under resampling") {
  Volume v({9, 10, 11}, {1.0, 1.0, 1.0}, 42.5);
  for (const Spacing& t : {Spacing{2.0, 2.0, 2.0}, Spacing{0.7, 1.3, 0.5}, Spacing{3.0, 1.0, 1.7}}) {
    const auto [r, none] = resample(v, nullptr, t);
    CHECK(r.spacing == t);
    for (double x : r.data.values()) REQUIRE(x == 42.5);
  }
}

TEST_CASE("resampled shape rounds and never drops below one voxel") {
  CHECK(resampled_shape({10, 10, 10}, {1, 1, 1}, {2, 2, 2}) == Index3{5, 5, 5});
  CHECK(resampled_shape({7, 10, 10}, {1, 1, 1}, {2, 3, 0.5}) == Index3{4, 3, 20});
  CHECK(resampled_shape({2, 2, 2}, {1, 1, 1}, {100, 100, 100}) == Index3{1, 1, 1});
}

TEST_CASE("2x downsampling of a ramp matches the trilinear formula") {
  Volume v({8, 8, 8}, {1.0, 1.0, 1.0});
  for (int d = 0; d < 8; ++d)
    for (int h = 0; h < 8; ++h)
      for (int w = 0; w < 8; ++w) v.at(d, h, w) = 3.0 * w - 2.0;
  const auto [r, none] = resample(v, nullptr, {1.0, 1.0, 2.0});
  REQUIRE(r.shape() == Index3{8, 8, 4});
  for (int d = 0; d < 8; ++d)
    for (int h = 0; h < 8; ++h)
      for (int w = 0; w < 4; ++w) REQUIRE(r.at(d, h, w) == doctest::Approx(3.0 * (2.0 * w) - 2.0).epsilon(1e-12));
}

TEST_CASE("non-integer resampling ratios reproduce multilinear fields") {
  const Index3 s{7, 9, 6};
  Volume v(s, {1.0, 1.0, 1.0});
  for (int d = 0; d < s[0]; ++d)
    for (int h = 0; h < s[1]; ++h)
      for (int w = 0; w < s[2]; ++w) v.at(d, h, w) = multilinear(d, h, w);
  const Spacing t{1.5, 0.6, 1.25};
  const auto [r, none] = resample(v, nullptr, t);
  const auto rs = r.shape();
  CHECK(rs == resampled_shape(s, v.spacing, t));
  for (std::int64_t d = 0; d < rs[0]; ++d)
    for (std::int64_t h = 0; h < rs[1]; ++h)
      for (std::int64_t w = 0; w < rs[2]; ++w) {
        // source coordinate i * s_out / s_in, clamped to the last voxel
        const double sd = std::min(d * t[0], double(s[0] - 1));
        const double sh = std::min(h * t[1], double(s[1] - 1));
        const double sw = std::min(w * t[2], double(s[2] - 1));
        REQUIRE(r.at(d, h, w) == doctest::Approx(multilinear(sd, sh, sw)).epsilon(1e-10));
      }
}

TEST_CASE("resampling twice to the same target is idempotent on constants and monotone on ramps") {
  Volume c({12, 12, 12}, {1.0, 1.0, 1.0}, -3.0);
  const Spacing t{1.7, 1.7, 1.7};
  const auto [c1, n1] = resample(c, nullptr, t);
  const auto [c2, n2] = resample(c1, nullptr, t);
  CHECK(c2.data == c1.data);

  Volume ramp({12, 12, 12}, {1.0, 1.0, 1.0});
  for (int d = 0; d < 12; ++d)
    for (int h = 0; h < 12; ++h)
      for (int w = 0; w < 12; ++w) ramp.at(d, h, w) = 0.25 * d * d + h;
  const auto [r1, m1] = resample(ramp, nullptr, {0.8, 1.0, 1.0});
  const auto s = r1.shape();
  for (std::int64_t d = 1; d < s[0]; ++d) REQUIRE(r1.at(d, 3, 3) >= r1.at(d - 1, 3, 3));
}

TEST_CASE("labels are resampled by nearest neighbour and keep their value set") {
  auto lm = aps::testing::random_labels({8, 8, 8}, 3, 5);
  Volume v({8, 8, 8}, {1.0, 1.0, 1.0});
  const auto [r, rl] = resample(v, &lm, {0.5, 0.5, 0.5});
  REQUIRE(rl.has_value());
  CHECK(rl->shape == Index3{16, 16, 16});
  // output voxel i sits at source coordinate i/2, whose nearest voxel is round(i/2)
  for (int d = 0; d < 16; ++d) {
    const std::int64_t sd = std::min<std::int64_t>(std::llround(d * 0.5), 7);
    REQUIRE(rl->at(d, 4, 6) == lm.at(sd, 2, 3));
  }
}

TEST_CASE("preset rows reproduce the preprocessing table on boundary inputs") {
  const auto btcv = preprocess_preset("btcv");
  CHECK(normalize_value(275.0, btcv) == 1.0);
  CHECK(normalize_value(-125.0, btcv) == 0.0);
  CHECK(normalize_value(-1000.0, btcv) == normalize_value(-125.0, btcv));
  CHECK(normalize_value(5000.0, btcv) == 1.0);
  CHECK(*btcv.target_spacing == Spacing{1.5, 1.0, 1.0});

  const auto amos = preprocess_preset("amos");
  CHECK(normalize_value(191.0, amos) == 1.0);
  CHECK(normalize_value(50.0, amos) == 0.0);
  CHECK(normalize_value(362.0, amos) == (362.0 - 50.0) / 141.0);
  CHECK(normalize_value(-991.0, amos) == (-991.0 - 50.0) / 141.0);
  CHECK(normalize_value(-2000.0, amos) == normalize_value(-991.0, amos));
  CHECK(*amos.target_spacing == Spacing{1.5, 1.0, 1.0});

  const auto ctorg = preprocess_preset("ct-org");
  CHECK(normalize_value(-1000.0, ctorg) == -1.0);
  CHECK(normalize_value(1000.0, ctorg) == 1.0);
  CHECK(normalize_value(0.0, ctorg) == 0.0);
  CHECK(*ctorg.target_spacing == Spacing{2.0, 2.0, 2.0});

  const auto pelvic = preprocess_preset("pelvic");
  CHECK(normalize_value(-50.0, pelvic) == 0.0);
  CHECK(normalize_value(150.0, pelvic) == 1.0);
  CHECK(normalize_value(50.0, pelvic) == 0.5);
  CHECK(*pelvic.target_spacing == Spacing{1.5, 1.5, 1.5});

  CHECK_THROWS_AS(preprocess_preset("mri"), ConfigError);
}

TEST_CASE("normalized intensities stay inside the mode's range") {
  const auto v = random_volume({10, 10, 10}, 9, -3000, 3000);
  PreprocessConfig unit;
  unit.clip_lo = -200;
  unit.clip_hi = 400;
  PreprocessConfig sym = unit;
  sym.mode = NormMode::Symmetric;
  const auto u = clip_and_normalize(v, unit);
  const auto s = clip_and_normalize(v, sym);
  for (std::int64_t i = 0; i < v.data.numel(); ++i) {
    REQUIRE(u.data[i] >= 0.0);
    REQUIRE(u.data[i] <= 1.0);
    REQUIRE(s.data[i] >= -1.0);
    REQUIRE(s.data[i] <= 1.0);
  }
}

TEST_CASE("invalid preprocessing configs and NaN inputs are rejected") {
  PreprocessConfig c;
  c.clip_lo = 10;
  c.clip_hi = 10;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.mode = NormMode::ShiftScale;
  c.divide = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  Volume v({8, 8, 8}, {1.0, 1.0, 1.0});
  v.data[3] = std::nan("");
  CHECK_THROWS_AS(clip_and_normalize(v, PreprocessConfig{}), DataError);
}

TEST_CASE("patch sampling honours the 1:1 quota and centres foreground patches on labels") {
  synth::PhantomSpec spec;
  spec.seed = 4;
  const auto [v, l] = synth::generate_phantom(spec);
  PatchSpec ps;
  ps.patch_size = {16, 16, 16};
  ps.count = 8;
  const auto patches = sample_patches(v, l, ps, 123);
  REQUIRE(patches.size() == 8);
  int fg = 0;
  for (const auto& p : patches) {
    const int centre_label = l.at(p.center[0], p.center[1], p.center[2]);
    if (p.foreground) {
      ++fg;
      CHECK(centre_label > 0);
    } else {
      CHECK(centre_label == 0);
    }
    for (std::size_t a = 0; a < 3; ++a) CHECK(p.origin[a] == p.center[a] - 8);
    CHECK(p.image.shape() == ps.patch_size);
    CHECK(p.labels.shape == ps.patch_size);
    // the patch centre voxel is the sampled voxel
    CHECK(p.labels.at(8, 8, 8) == centre_label);
    CHECK(p.image.at(8, 8, 8) == v.at(p.center[0], p.center[1], p.center[2]));
  }
  CHECK(fg == 4);

  const auto again = sample_patches(v, l, ps, 123);
  for (std::size_t i = 0; i < patches.size(); ++i) CHECK(again[i].origin == patches[i].origin);
}

TEST_CASE("foreground count rounds the ratio fraction") {
  PatchSpec ps;
  ps.count = 7;
  ps.pos = 1;
  ps.neg = 2;
  CHECK(ps.foreground_count() == 2);  // round(7/3)
  ps.pos = 2;
  ps.neg = 1;
  CHECK(ps.foreground_count() == 5);  // round(14/3)
  ps.pos = 0;
  CHECK(ps.foreground_count() == 0);
}

TEST_CASE("all-background labels with a 0:1 ratio yield background patches only") {
  Volume v({8, 8, 8}, {1.0, 1.0, 1.0}, 1.0);
  LabelMap l({8, 8, 8}, 1, {1.0, 1.0, 1.0});
  PatchSpec ps;
  ps.patch_size = {12, 12, 12};  // larger than the volume: edge replicated
  ps.pos = 0;
  ps.neg = 1;
  ps.count = 5;
  const auto patches = sample_patches(v, l, ps, 1);
  REQUIRE(patches.size() == 5);
  for (const auto& p : patches) {
    CHECK_FALSE(p.foreground);
    for (double x : p.image.data.values()) REQUIRE(x == 1.0);
  }
  ps.pos = 1;
  CHECK_THROWS_AS(sample_patches(v, l, ps, 1), DataError);
}

TEST_CASE("edge replication copies the nearest in-grid voxel") {
  const auto v = random_volume({4, 5, 6}, 3, 0, 1);
  const auto p = extract_patch(v, {-2, -1, 3}, {8, 8, 8});
  for (int d = 0; d < 8; ++d)
    for (int h = 0; h < 8; ++h)
      for (int w = 0; w < 8; ++w) {
        const auto sd = std::clamp<std::int64_t>(d - 2, 0, 3);
        const auto sh = std::clamp<std::int64_t>(h - 1, 0, 4);
        const auto sw = std::clamp<std::int64_t>(w + 3, 0, 5);
        REQUIRE(p.at(d, h, w) == v.at(sd, sh, sw));
      }
}

TEST_CASE("augmentation with zero probabilities is the identity") {
  const auto v = random_volume({6, 6, 6}, 8, 0, 1);
  const auto l = aps::testing::random_labels({6, 6, 6}, 2, 8);
  std::mt19937_64 rng(1);
  const auto [v2, l2] = augment(v, l, AugmentConfig::none(), rng);
  CHECK(v2.data == v.data);
  CHECK(l2 == l);
}

TEST_CASE("flips are involutions and rotations have period four") {
  const auto v0 = random_volume({5, 6, 6}, 10, 0, 1);
  const auto l0 = aps::testing::random_labels({5, 6, 6}, 2, 10);
  for (int axis = 0; axis < 3; ++axis) {
    auto v = v0;
    auto l = l0;
    flip_axis(v, l, axis);
    CHECK_FALSE(v.data == v0.data);
    flip_axis(v, l, axis);
    CHECK(v.data == v0.data);
    CHECK(l == l0);
  }
  auto v = v0;
  auto l = l0;
  rotate_hw(v, l, 1);
  CHECK_FALSE(v.data == v0.data);
  rotate_hw(v, l, 3);
  CHECK(v.data == v0.data);
  CHECK(l == l0);
}

TEST_CASE("augmentation preserves per-class voxel counts and co-registers image and labels") {
  // Image equals the label value, so any geometric mismatch shows up.
  auto l = aps::testing::random_labels({8, 8, 8}, 3, 21);
  Volume v({8, 8, 8}, {1.0, 1.0, 1.0});
  for (std::size_t i = 0; i < l.labels.size(); ++i) v.data[static_cast<std::int64_t>(i)] = l.labels[i];
  AugmentConfig geo{1.0, 1.0, 0.0, 0.0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto [va, la] = augment(v, l, geo, rng);
    REQUIRE(la.histogram() == l.histogram());
    for (std::size_t i = 0; i < la.labels.size(); ++i) REQUIRE(va.data[static_cast<std::int64_t>(i)] == la.labels[i]);
  }
  AugmentConfig all;
  std::mt19937_64 rng(77);
  const auto [va, la] = augment(v, l, all, rng);
  CHECK(la.histogram() == l.histogram());
}

TEST_CASE("intensity augmentation stays within its configured range") {
  Volume v({4, 4, 4}, {1.0, 1.0, 1.0}, 0.5);
  LabelMap l({4, 4, 4}, 1, {1.0, 1.0, 1.0});
  AugmentConfig c{0.0, 0.0, 1.0, 1.0};
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    const auto [va, la] = augment(v, l, c, rng);
    const double x = va.data[0];
    for (double y : va.data.values()) REQUIRE(y == x);
    CHECK(x >= 0.5 * 0.9 - 0.1 - 1e-12);
    CHECK(x <= 0.5 * 1.1 + 0.1 + 1e-12);
    CHECK(la == l);
  }
}
