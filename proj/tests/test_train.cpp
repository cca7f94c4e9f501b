#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/synth/phantom.hpp"
#include "autoprosam/train/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace aps;
using namespace aps::train;
using aps::testing::random_tensor;
using aps::testing::oracle::documented_tunable;
namespace fs = std::filesystem;

namespace {

// probs [1, K+1, n, n, n] that are one-hot on `labels`
Tensor one_hot(const data::LabelMap& l) {
  const std::int64_t V = static_cast<std::int64_t>(l.labels.size()), K1 = l.num_classes + 1;
  Tensor p({1, K1, l.shape[0], l.shape[1], l.shape[2]});
  for (std::int64_t i = 0; i < V; ++i) p[l.labels[static_cast<std::size_t>(i)] * V + i] = 1.0;
  return p;
}

// Direct evaluation of soft Dice + cross-entropy.
LossTerms loss_oracle(const Tensor& p, const data::LabelMap& l, const LossConfig& cfg) {
  const std::int64_t V = static_cast<std::int64_t>(l.labels.size()), K1 = l.num_classes + 1;
  double ce = 0.0;
  for (std::int64_t i = 0; i < V; ++i) ce -= std::log(std::max(p[l.labels[static_cast<std::size_t>(i)] * V + i], 1e-12));
  ce /= static_cast<double>(V);
  double dice = 0.0;
  int n = 0;
  for (std::int64_t c = cfg.include_background_in_dice ? 0 : 1; c < K1; ++c, ++n) {
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::int64_t i = 0; i < V; ++i) {
      const double g = l.labels[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0;
      inter += p[c * V + i] * g;
      sp += p[c * V + i];
      sg += g;
    }
    dice += (2.0 * inter + cfg.dice_smooth) / (sp + sg + cfg.dice_smooth);
  }
  LossTerms t;
  t.dice = 1.0 - dice / n;
  t.ce = ce;
  t.total = cfg.dice_weight * t.dice + cfg.ce_weight * t.ce;
  return t;
}

std::vector<TrainCase> tiny_cases(int n, std::uint64_t seed) {
  std::vector<TrainCase> out;
  for (int i = 0; i < n; ++i) {
    synth::PhantomSpec spec;
    spec.grid_shape = {8, 8, 8};
    spec.num_organs = 2;
    spec.seed = seed + static_cast<std::uint64_t>(i);
    // fixed layout shifted per case; random placement rarely fits two organs in 8^3
    const double o = static_cast<double>((seed + static_cast<std::uint64_t>(i)) % 2);
    spec.organs_override = {{{2.0, 2.0, 2.0 + o}, {1.2, 1.2, 1.2}}, {{5.5, 5.5, 5.5}, {1.2, 1.2, 1.2}}};
    spec.noise_sigma = 0.05;
    spec.background_intensity = 0.0;
    spec.organ_intensity = {0.5, 1.0};
    auto [v, l] = synth::generate_phantom(spec);
    out.push_back({"case" + std::to_string(i), std::move(v), std::move(l)});
  }
  return out;
}

model::AutoProSam tiny_model() {
  const auto cfg = aps::testing::tiny_model_config();
  return model::AutoProSam::from_2d_checkpoint(synth::generate_surrogate_2d_checkpoint(cfg.encoder, 4), cfg, 6);
}

FitOptions tiny_options(std::int64_t epochs, std::int64_t steps) {
  FitOptions o;
  o.optim.epochs = epochs;
  o.optim.warmup_epochs = 1;
  o.optim.steps_per_epoch = steps;
  o.optim.base_lr = 1e-2;
  o.optim.patch_size = {4, 4, 4};
  o.window.patch_size = {4, 4, 4};
  o.window.overlap_ratio = 0.5;
  o.seed = 17;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "aps_test_train" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

// ---- loss ----

TEST_CASE("one-hot probabilities give a near-zero loss") {
  const auto l = aps::testing::random_labels({8, 8, 8}, 2, 1);
  LossTerms t;
  const Var loss = seg_loss(constant(one_hot(l)), l.labels, LossConfig{}, &t);
  CHECK(t.ce == 0.0);
  CHECK(t.dice >= 0.0);
  CHECK(loss.value()[0] < 1e-4);
}

TEST_CASE("uniform probabilities over two classes give CE = ln 2") {
  data::LabelMap l({8, 8, 8}, 1, {1, 1, 1});
  for (std::size_t i = 0; i < l.labels.size(); i += 2) l.labels[i] = 1;
  const auto t = seg_loss_terms(Tensor({1, 2, 8, 8, 8}, 0.5), l.labels, LossConfig{});
  CHECK(t.ce == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  // soft Dice of 0.5 everywhere against half the voxels: 2*128 / (256 + 256)
  CHECK(t.dice == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("loss terms match the direct formula") {
  const auto l = aps::testing::random_labels({5, 4, 3}, 3, 2, 0.6);
  const Tensor logits = random_tensor({1, 4, 5, 4, 3}, 3, -2, 2);
  const Tensor p = ops::softmax_channels(constant(logits)).value();
  for (bool bg : {false, true}) {
    LossConfig cfg;
    cfg.include_background_in_dice = bg;
    cfg.dice_weight = 0.7;
    cfg.ce_weight = 1.3;
    const auto got = seg_loss_terms(p, l.labels, cfg);
    const auto want = loss_oracle(p, l, cfg);
    CHECK(got.dice == doctest::Approx(want.dice).epsilon(1e-12));
    CHECK(got.ce == doctest::Approx(want.ce).epsilon(1e-12));
    CHECK(got.total == doctest::Approx(want.total).epsilon(1e-12));
  }
}

TEST_CASE("loss decreases along the path from uniform to one-hot") {
  const auto l = aps::testing::random_labels({6, 6, 6}, 2, 4);
  const Tensor target = one_hot(l);
  double prev = 1e300;
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    Tensor p(target.shape());
    for (std::int64_t i = 0; i < p.numel(); ++i) p[i] = (1.0 - t) / 3.0 + t * target[i];
    const double v = seg_loss_terms(p, l.labels, LossConfig{}).total;
    CHECK(v < prev);
    CHECK(v >= 0.0);
    prev = v;
  }
}

TEST_CASE("loss gradient through softmax matches finite differences") {
  const auto l = aps::testing::random_labels({4, 4, 4}, 2, 5);
  Var logits = leaf(random_tensor({1, 3, 4, 4, 4}, 6, -1.5, 1.5));
  for (bool bg : {false, true}) {
    LossConfig cfg;
    cfg.include_background_in_dice = bg;
    const double err = aps::testing::grad_check(
        logits, [&] { return seg_loss(ops::softmax_channels(logits), l.labels, cfg); }, 1e-6, 192);
    CHECK(err < 1e-4);
  }
  // gradient with respect to the probabilities themselves
  Var probs = leaf(ops::softmax_channels(constant(random_tensor({1, 3, 4, 4, 4}, 7))).value());
  CHECK(aps::testing::grad_check(probs, [&] { return seg_loss(probs, l.labels, LossConfig{}); }, 1e-7, 192) < 1e-4);
}

TEST_CASE("unnormalized probabilities and bad labels are contract errors") {
  const auto l = aps::testing::random_labels({4, 4, 4}, 1, 8);
  CHECK_THROWS_AS(seg_loss_terms(Tensor({1, 2, 4, 4, 4}, 0.6), l.labels, LossConfig{}), ContractError);
  auto bad = l;
  bad.labels[3] = 5;
  CHECK_THROWS_AS(seg_loss_terms(Tensor({1, 2, 4, 4, 4}, 0.5), bad.labels, LossConfig{}), ContractError);
  LossConfig c;
  c.dice_smooth = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

// ---- schedule ----

TEST_CASE("learning rate schedule hits the recipe values") {
  OptimConfig c;  // 200 epochs, 5 warmup, base 5e-4
  c.steps_per_epoch = 10;
  CHECK(lr_at(0, 0, c) == 0.0);
  CHECK(lr_at(5, 0, c) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(std::abs(lr_at(199, 0, c) - 5e-6) / 5e-6 < 1e-9);
  CHECK(lr_at(2, 5, c) == doctest::Approx(5e-4 * 25.0 / 50.0).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(200, 0, c), ContractError);
}

TEST_CASE("learning rate rises through warmup then never increases") {
  OptimConfig c;
  c.epochs = 40;
  c.warmup_epochs = 3;
  c.steps_per_epoch = 4;
  double prev = -1.0;
  for (std::int64_t e = 0; e < c.warmup_epochs; ++e)
    for (std::int64_t s = 0; s < 4; ++s) {
      const double lr = lr_at(e, s, c);
      CHECK(lr > prev);
      CHECK(lr < c.base_lr);
      prev = lr;
    }
  // the last warmup step is one step short of base_lr
  CHECK(lr_at(2, 3, c) == doctest::Approx(c.base_lr * 11.0 / 12.0).epsilon(1e-12));
  CHECK(lr_at(3, 0, c) == c.base_lr);
  prev = c.base_lr;
  for (std::int64_t e = c.warmup_epochs; e < c.epochs; ++e)
    for (std::int64_t s = 0; s < 4; ++s) {
      const double lr = lr_at(e, s, c);
      CHECK(lr <= prev);
      prev = lr;
    }
  CHECK(lr_at(39, 3, c) == doctest::Approx(c.base_lr * 0.01).epsilon(1e-9));
  c.warmup_epochs = 0;
  CHECK(lr_at(0, 0, c) == c.base_lr);
}

// ---- freezing ----

TEST_CASE("tunable parameter names are exactly the documented set") {
  const auto m = tiny_model();
  std::set<std::string> tunable, expected;
  for (const auto& p : m.params().all()) {
    if (!p.frozen) tunable.insert(p.name);
    if (documented_tunable(p.name)) expected.insert(p.name);
  }
  CHECK(tunable == expected);
  // and the frozen set is the inherited attention/MLP weights, planar kernel and planar table
  for (const auto& p : m.params().all()) {
    if (!p.frozen) continue;
    const bool inherited = p.name.starts_with("encoder.patch_embed.planar.") || p.name == "encoder.pos_embed.planar" ||
                           p.name.find(".attn.") != std::string::npos || p.name.find(".mlp.") != std::string::npos;
    CHECK_MESSAGE(inherited, p.name);
  }
}

TEST_CASE("freeze policy zeroes frozen gradients unless overridden") {
  auto m = tiny_model();
  configure_requires_grad(m.params(), FreezePolicy::AllTunable);
  backward(aps::testing::probe(m.forward(constant(random_tensor({1, 1, 4, 4, 4}, 1)))));
  const GradMap raw = collect_grads(m.params());
  GradMap std_grads = raw, all_grads = raw;
  apply_freeze_policy(m.params(), std_grads, FreezePolicy::Standard);
  apply_freeze_policy(m.params(), all_grads, FreezePolicy::AllTunable);
  CHECK(all_grads == raw);
  bool some_frozen_nonzero = false;
  for (const auto& p : m.params().all()) {
    if (p.frozen) {
      CHECK(max_abs(std_grads.at(p.name)) == 0.0);
      some_frozen_nonzero |= max_abs(raw.at(p.name)) > 0.0;
    } else {
      CHECK(std_grads.at(p.name) == raw.at(p.name));
    }
  }
  CHECK(some_frozen_nonzero);
  GradMap unknown{{"encoder.nonexistent", Tensor({1})}};
  CHECK_THROWS_AS(apply_freeze_policy(m.params(), unknown, FreezePolicy::Standard), ContractError);
}

TEST_CASE("ten optimizer steps leave every frozen parameter bit-identical") {
  auto m = tiny_model();
  // deep copy: ModelParams copies share their parameter nodes
  std::map<std::string, Tensor> before;
  for (const auto& p : m.params().all()) before[p.name] = p.var.value();
  const auto cases = tiny_cases(2, 30);
  const auto opts = tiny_options(2, 5);
  const auto out_dir = fresh_dir("freeze");
  auto o = opts;
  o.out_dir = out_dir;
  const auto r = fit(cases, {cases[1]}, m, o);
  CHECK(r.steps.size() == 10);
  std::size_t changed = 0;
  for (const auto& p : m.params().all()) {
    const Tensor& orig = before.at(p.name);
    if (p.frozen) {
      CHECK_MESSAGE(p.var.value() == orig, p.name);
    } else if (!(p.var.value() == orig)) {
      ++changed;
    }
  }
  CHECK(changed > 0);
  // every written checkpoint carries the imported frozen values too
  for (const auto& c : r.checkpoints) {
    const auto a = io::Archive::read(c.path);
    for (const auto& p : m.params().all()) {
      if (p.frozen) CHECK(a.get(p.name).values == before.at(p.name));
    }
  }
}

TEST_CASE("optimizer keeps no state for frozen parameters") {
  auto m = tiny_model();
  configure_requires_grad(m.params(), FreezePolicy::Standard);
  backward(aps::testing::probe(m.forward(constant(random_tensor({1, 1, 4, 4, 4}, 2)))));
  OptimConfig c;
  AdamW opt(c);
  auto grads = collect_grads(m.params());
  apply_freeze_policy(m.params(), grads, FreezePolicy::Standard);
  opt.step(m.params(), grads, 1e-3, FreezePolicy::Standard);
  for (const auto& p : m.params().all()) CHECK(opt.has_state(p.name) == !p.frozen);
  CHECK(opt.step_count() == 1);

  AdamW all(c);
  all.step(m.params(), grads, 1e-3, FreezePolicy::AllTunable);
  CHECK(all.state_size() == m.params().size());
}

TEST_CASE("AdamW matches the closed-form first step") {
  model::ModelParams params;
  params.add("w", Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}), false);
  params.add("n", Tensor({2}, std::vector<double>{1.0, 1.0}), false, false);
  OptimConfig c;
  c.weight_decay = 0.1;
  AdamW opt(c);
  GradMap g{{"w", Tensor({3}, std::vector<double>{0.3, -0.1, 0.0})}, {"n", Tensor({2}, std::vector<double>{2.0, -2.0})}};
  opt.step(params, g, 0.01, FreezePolicy::Standard);
  // first step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps) + lr * wd * w
  const Tensor& w = params.value("w");
  CHECK(w[0] == doctest::Approx(1.0 - 0.01 * 0.1 * 1.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(-2.0 + 0.01 * 0.1 * 2.0 + 0.01 * 0.1 / (0.1 + 1e-8)).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(0.5 - 0.01 * 0.1 * 0.5).epsilon(1e-12));
  // normalization affine is exempt from decay
  CHECK(params.value("n")[0] == doctest::Approx(1.0 - 0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
}

// ---- training loop ----

TEST_CASE("foreground slots follow the ratio") {
  std::vector<bool> s;
  for (int j = 0; j < 6; ++j) s.push_back(foreground_slot(j, 1, 1));
  CHECK(s == std::vector<bool>{true, false, true, false, true, false});
  for (int j = 0; j < 30; j += 3) {
    CHECK(foreground_slot(j, 1, 2) + foreground_slot(j + 1, 1, 2) + foreground_slot(j + 2, 1, 2) == 1);
  }
  for (int j = 0; j < 5; ++j) CHECK_FALSE(foreground_slot(j, 0, 1));
  for (int j = 0; j < 5; ++j) CHECK(foreground_slot(j, 1, 0));
}

TEST_CASE("select_best takes the highest score with ties to the later checkpoint") {
  CHECK(select_best(4, {80.0, 90.0, 90.0, 85.0}) == 2);
  CHECK(select_best(3, {10.0, 5.0, 1.0}) == 0);
  CHECK(select_best(3, {}) == 2);
  CHECK_THROWS_AS(select_best(0, {}), ContractError);
  CHECK_THROWS_AS(select_best(2, {1.0}), ContractError);
}

TEST_CASE("fit is deterministic for a fixed seed") {
  const auto cases = tiny_cases(2, 40);
  auto a = tiny_model(), b = tiny_model();
  const auto opts = tiny_options(3, 3);
  const auto ra = fit(cases, {cases[0]}, a, opts);
  const auto rb = fit(cases, {cases[0]}, b, opts);
  REQUIRE(ra.steps.size() == 9);
  for (std::size_t i = 0; i < ra.steps.size(); ++i) {
    CHECK(ra.steps[i].loss == rb.steps[i].loss);
    CHECK(ra.steps[i].lr == rb.steps[i].lr);
  }
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params().all()[i].var.value() == b.params().all()[i].var.value());
  REQUIRE(ra.best.has_value());
  CHECK(ra.epochs.back().val_dice.has_value());
  auto c = tiny_model();
  auto other = opts;
  other.seed = 18;
  const auto rc = fit(cases, {}, c, other);
  CHECK_FALSE(rc.steps[0].loss == ra.steps[0].loss);
  // without validation the final epoch is selected
  CHECK(*rc.best == rc.checkpoints.size() - 1);
}

TEST_CASE("resuming from a checkpoint continues the same trajectory") {
  const auto cases = tiny_cases(2, 50);
  const std::vector<TrainCase> val{cases[1]};
  const auto full_dir = fresh_dir("full");
  const auto split_dir = fresh_dir("split");
  auto opts = tiny_options(3, 2);

  auto m_full = tiny_model();
  opts.out_dir = full_dir;
  const auto full = fit(cases, val, m_full, opts);

  auto m_split = tiny_model();
  opts.out_dir = split_dir;
  opts.stop_after_epoch = 0;
  const auto first = fit(cases, val, m_split, opts);
  REQUIRE(first.checkpoints.size() == 1);
  CHECK(first.steps.size() == 2);
  opts.stop_after_epoch.reset();
  opts.resume_from = first.checkpoints.back().path;
  auto m_resumed = tiny_model();
  const auto rest = fit(cases, val, m_resumed, opts);
  REQUIRE(rest.steps.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(rest.steps[i].loss == full.steps[i + 2].loss);
  for (std::size_t i = 0; i < m_full.params().size(); ++i) {
    CHECK(m_resumed.params().all()[i].var.value() == m_full.params().all()[i].var.value());
  }
  CHECK(slurp(split_dir / "train_log.jsonl") == slurp(full_dir / "train_log.jsonl"));
  CHECK(slurp(split_dir / "checkpoints" / "epoch_0002.aps") == slurp(full_dir / "checkpoints" / "epoch_0002.aps"));

  // a checkpoint from a different architecture is refused
  auto cfg = aps::testing::tiny_model_config();
  cfg.decoder.mlam_enabled = false;
  cfg.finalize();
  auto other = model::AutoProSam::from_2d_checkpoint(synth::generate_surrogate_2d_checkpoint(cfg.encoder, 4), cfg, 6);
  CHECK_THROWS_AS(fit(cases, val, other, opts), ConfigError);
}

TEST_CASE("fit validates its inputs and aborts on a non-finite loss") {
  auto m = tiny_model();
  auto cases = tiny_cases(1, 60);
  auto opts = tiny_options(2, 2);
  CHECK_THROWS_AS(fit({}, {}, m, opts), DataError);
  auto wrong = opts;
  wrong.optim.patch_size = {8, 8, 8};
  CHECK_THROWS_AS(fit(cases, {}, m, wrong), ConfigError);
  auto bad = cases;
  bad[0].labels.labels[0] = 7;
  CHECK_THROWS_AS(fit(bad, {}, m, opts), DataError);
  auto nan_case = cases;
  nan_case[0].image.data.fill(std::nan(""));
  try {
    (void)fit(nan_case, {}, m, opts);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("step 0") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
  }
}
