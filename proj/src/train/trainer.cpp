#include "autoprosam/train/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/core/logging.hpp"
#include "autoprosam/core/ops.hpp"
#include "autoprosam/model/mask_decoder.hpp"

namespace aps::train {

namespace {

std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t global_step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(global_step), static_cast<std::uint32_t>(global_step >> 32), 0x7a11u};
  return std::mt19937_64(seq);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

data::Patch draw_patch(const TrainCase& c, const data::Index3& size, bool foreground, std::mt19937_64& rng) {
  std::vector<std::int64_t> pool;
  for (std::size_t i = 0; i < c.labels.labels.size(); ++i) {
    if ((c.labels.labels[i] > 0) == foreground) pool.push_back(static_cast<std::int64_t>(i));
  }
  if (pool.empty()) throw DataError("fit: case '" + c.id + "' has no " + (foreground ? "foreground" : "background") + " voxels");
  const std::int64_t off = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  const auto& g = c.labels.shape;
  data::Patch p;
  p.center = {off / (g[1] * g[2]), (off / g[2]) % g[1], off % g[2]};
  for (std::size_t a = 0; a < 3; ++a) p.origin[a] = p.center[a] - size[a] / 2;
  p.image = data::extract_patch(c.image, p.origin, size);
  p.labels = data::extract_patch(c.labels, p.origin, size);
  p.foreground = foreground;
  return p;
}

bool has_class(const TrainCase& c, bool foreground) {
  for (auto l : c.labels.labels) {
    if ((l > 0) == foreground) return true;
  }
  return false;
}

struct Checkpointer {
  std::filesystem::path dir;

  std::filesystem::path write(const model::AutoProSam& model, const AdamW& opt, std::int64_t epoch,
                              std::int64_t global_step, std::optional<double> val, std::optional<double> best,
                              std::uint64_t seed) const {
    io::Archive a;
    model.save_to(a);
    opt.save_to(a);
    a.set_meta("kind", "autoprosam_checkpoint");
    a.set_meta("epoch", std::to_string(epoch));
    a.set_meta("global_step", std::to_string(global_step));
    a.set_meta("val_dice", val ? fmt(*val) : "none");
    a.set_meta("best_val_dice", best ? fmt(*best) : "none");
    a.set_meta("seed", std::to_string(seed));
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04lld.aps", static_cast<long long>(epoch));
    const auto path = dir / name;
    a.write(path);
    return path;
  }
};

std::optional<double> parse_optional(const std::optional<std::string>& s) {
  if (!s || *s == "none") return std::nullopt;
  return std::stod(*s);
}

}  // namespace

bool foreground_slot(std::int64_t j, std::int64_t pos, std::int64_t neg) {
  const std::int64_t total = pos + neg;
  if (total <= 0) return false;
  // slot j is foreground when floor((j+1)*pos/total) > floor(j*pos/total),
  // offset so a 1:1 ratio starts with foreground
  const std::int64_t a = ((j + 1) * pos + neg) / total;
  const std::int64_t b = (j * pos + neg) / total;
  return a > b;
}

std::size_t select_best(std::size_t n, const std::vector<double>& scores) {
  if (n == 0) throw ContractError("select_best: no checkpoints");
  if (scores.empty()) return n - 1;
  if (scores.size() != n) throw ContractError("select_best: one score per checkpoint required");
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (scores[i] >= scores[best]) best = i;
  }
  return best;
}

double validation_dice(const std::vector<TrainCase>& cases, const model::AutoProSam& model,
                       const eval::SlidingWindowConfig& window) {
  if (cases.empty()) return 0.0;
  double total = 0.0;
  for (const auto& c : cases) {
    const auto pred = model::predict_labels(eval::sliding_window_infer(c.image, model, window), c.image.spacing);
    double dice = 0.0;
    for (int k = 1; k <= c.labels.num_classes; ++k) dice += eval::dice_score(pred, c.labels, k);
    total += dice / std::max(1, c.labels.num_classes);
  }
  return total / static_cast<double>(cases.size());
}

FitResult fit(const std::vector<TrainCase>& train, const std::vector<TrainCase>& val, model::AutoProSam& model,
              const FitOptions& opt) {
  opt.optim.validate();
  opt.loss.validate();
  if (train.empty()) throw DataError("fit: training set is empty");
  if (opt.optim.patch_size != model.patch_size()) {
    throw ConfigError("optim.patch_size must equal the model input size");
  }
  const auto K = model.config().decoder.num_classes;
  for (const auto& c : train) {
    if (c.labels.shape != c.image.shape()) throw DataError("fit: case '" + c.id + "' label/image shape mismatch");
    for (auto l : c.labels.labels) {
      if (l < 0 || l > K) throw DataError("fit: case '" + c.id + "' has label " + std::to_string(l) + " > K");
    }
  }
  std::vector<std::size_t> fg_cases, bg_cases;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (has_class(train[i], true)) fg_cases.push_back(i);
    if (has_class(train[i], false)) bg_cases.push_back(i);
  }

  AdamW optimizer(opt.optim);
  std::int64_t start_epoch = 0, global_step = 0;
  std::optional<double> best_val;
  if (opt.resume_from) {
    const auto ckpt = io::Archive::read(*opt.resume_from);
    auto restored = model::AutoProSam::from_checkpoint(ckpt);
    if (restored.config_hash() != model.config_hash()) {
      throw ConfigError("resume: checkpoint config differs from the run config");
    }
    model = std::move(restored);
    optimizer.load_from(ckpt);
    start_epoch = std::stoll(ckpt.meta("epoch").value_or("-1")) + 1;
    global_step = std::stoll(ckpt.meta("global_step").value_or("0"));
    best_val = parse_optional(ckpt.meta("best_val_dice"));
  }
  configure_requires_grad(model.params(), opt.freeze);

  std::optional<Checkpointer> ckpt;
  std::ofstream log;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir / "checkpoints");
    ckpt = Checkpointer{opt.out_dir / "checkpoints"};
    log.open(opt.out_dir / "train_log.jsonl", opt.resume_from ? std::ios::app : std::ios::trunc);
  }

  const std::int64_t last_epoch = std::min(opt.optim.epochs - 1, opt.stop_after_epoch.value_or(opt.optim.epochs - 1));
  const auto& ps = opt.optim.patch_size;
  FitResult result;
  for (std::int64_t epoch = start_epoch; epoch <= last_epoch; ++epoch) {
    double loss_sum = 0.0;
    for (std::int64_t s = 0; s < opt.optim.steps_per_epoch; ++s, ++global_step) {
      auto rng = step_rng(opt.seed, global_step);
      const std::int64_t B = opt.optim.batch_size;
      Tensor batch({B, 1, ps[0], ps[1], ps[2]});
      std::vector<std::int32_t> labels;
      const std::int64_t PV = ps[0] * ps[1] * ps[2];
      for (std::int64_t b = 0; b < B; ++b) {
        bool fg = foreground_slot(global_step * B + b, opt.pos, opt.neg);
        if (fg && fg_cases.empty()) throw DataError("fit: foreground patches requested but no case has foreground");
        if (!fg && bg_cases.empty()) fg = true;
        const auto& pool = fg ? fg_cases : bg_cases;
        const auto& c = train[pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]];
        auto patch = draw_patch(c, ps, fg, rng);
        auto [img, lab] = data::augment(std::move(patch.image), std::move(patch.labels), opt.augment, rng);
        std::copy(img.data.storage().begin(), img.data.storage().end(), batch.data() + b * PV);
        labels.insert(labels.end(), lab.labels.begin(), lab.labels.end());
      }

      const double lr = lr_at(epoch, s, opt.optim);
      model.params().zero_grad();
      auto non_finite = [&](const char* what) {
        return NumericError(std::string("fit: non-finite ") + what + " at epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(global_step) + ", lr " + fmt(lr));
      };
      const Var logits = model.forward(constant(std::move(batch)));
      if (!all_finite(logits.value())) throw non_finite("logits");
      LossTerms terms;
      const Var loss = seg_loss(ops::softmax_channels(logits), labels, opt.loss, &terms);
      if (!std::isfinite(terms.total)) throw non_finite("loss");
      backward(loss);
      GradMap grads = collect_grads(model.params());
      apply_freeze_policy(model.params(), grads, opt.freeze);
      optimizer.step(model.params(), grads, lr, opt.freeze);

      result.steps.push_back({epoch, global_step, lr, terms.total, terms.dice, terms.ce});
      loss_sum += terms.total;
      if (log) {
        log << "{\"type\":\"step\",\"epoch\":" << epoch << ",\"step\":" << global_step << ",\"lr\":" << fmt(lr)
            << ",\"loss\":" << fmt(terms.total) << ",\"dice_loss\":" << fmt(terms.dice) << ",\"ce_loss\":"
            << fmt(terms.ce) << "}\n";
      }
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(opt.optim.steps_per_epoch), std::nullopt};
    if (!val.empty()) rec.val_dice = validation_dice(val, model, opt.window);
    result.epochs.push_back(rec);
    if (log) {
      log << "{\"type\":\"epoch\",\"epoch\":" << epoch << ",\"step\":" << global_step << ",\"mean_loss\":"
          << fmt(rec.mean_loss) << ",\"val_dice\":" << (rec.val_dice ? fmt(*rec.val_dice) : "null") << "}\n";
      log.flush();
    }
    log::info("epoch " + std::to_string(epoch) + " loss " + fmt(rec.mean_loss) +
              (rec.val_dice ? " val_dice " + fmt(*rec.val_dice) : ""));

    const bool improved = rec.val_dice && (!best_val || *rec.val_dice > *best_val);
    if (improved) best_val = rec.val_dice;
    const bool final_epoch = epoch == last_epoch;
    if (improved || final_epoch) {
      CheckpointRecord cr{epoch, {}, rec.val_dice};
      if (ckpt) cr.path = ckpt->write(model, optimizer, epoch, global_step, rec.val_dice, best_val, opt.seed);
      result.checkpoints.push_back(cr);
    }
  }

  if (!result.checkpoints.empty()) {
    std::vector<double> scores;
    if (!val.empty()) {
      for (const auto& c : result.checkpoints) scores.push_back(c.val_dice.value_or(0.0));
    }
    result.best = select_best(result.checkpoints.size(), scores);
  }
  return result;
}

}  // namespace aps::train
