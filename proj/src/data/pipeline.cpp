#include "autoprosam/data/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "autoprosam/core/errors.hpp"

namespace aps::data {

namespace {

std::int64_t clamp_index(std::int64_t i, std::int64_t n) { return std::clamp<std::int64_t>(i, 0, n - 1); }

struct AxisSample {
  std::int64_t i0, i1;
  double t;
};

AxisSample linear_sample(double x, std::int64_t n) {
  x = std::clamp(x, 0.0, static_cast<double>(n - 1));
  const auto i0 = static_cast<std::int64_t>(std::floor(x));
  const auto i1 = std::min(i0 + 1, n - 1);
  return {i0, i1, x - static_cast<double>(i0)};
}

}  // namespace

void PreprocessConfig::validate() const {
  if (!(clip_lo < clip_hi)) throw ConfigError("preprocess.clip_range: lo must be < hi");
  if (mode == NormMode::ShiftScale && divide == 0.0) throw ConfigError("preprocess.divide: must be nonzero");
  if (target_spacing) {
    for (double s : *target_spacing) {
      if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("preprocess.target_spacing: must be positive");
    }
  }
}

const char* norm_mode_name(NormMode mode) {
  switch (mode) {
    case NormMode::UnitInterval: return "unit_interval";
    case NormMode::Symmetric: return "symmetric";
    case NormMode::ShiftScale: return "shift_scale";
  }
  return "unit_interval";
}

NormMode parse_norm_mode(const std::string& name) {
  if (name == "unit_interval") return NormMode::UnitInterval;
  if (name == "symmetric") return NormMode::Symmetric;
  if (name == "shift_scale") return NormMode::ShiftScale;
  throw ConfigError("preprocess.normalization: expected unit_interval|symmetric|shift_scale, got '" + name + "'");
}

std::vector<std::string> preprocess_preset_names() { return {"btcv", "amos", "ct-org", "pelvic"}; }

PreprocessConfig preprocess_preset(const std::string& name) {
  // Spacing triples are (z, y, x) in mm.
  PreprocessConfig c;
  if (name == "btcv") {
    c.target_spacing = Spacing{1.5, 1.0, 1.0};
    c.clip_lo = -125;
    c.clip_hi = 275;
    c.mode = NormMode::UnitInterval;
  } else if (name == "amos") {
    c.target_spacing = Spacing{1.5, 1.0, 1.0};
    c.clip_lo = -991;
    c.clip_hi = 362;
    c.mode = NormMode::ShiftScale;
    c.shift = 50;
    c.divide = 141;
  } else if (name == "ct-org") {
    c.target_spacing = Spacing{2.0, 2.0, 2.0};
    c.clip_lo = -1000;
    c.clip_hi = 1000;
    c.mode = NormMode::Symmetric;
  } else if (name == "pelvic") {
    c.target_spacing = Spacing{1.5, 1.5, 1.5};
    c.clip_lo = -50;
    c.clip_hi = 150;
    c.mode = NormMode::UnitInterval;
  } else {
    throw ConfigError("preprocess.preset: unknown preset '" + name + "'");
  }
  return c;
}

Index3 resampled_shape(const Index3& shape, const Spacing& from, const Spacing& to) {
  Index3 out{};
  for (std::size_t a = 0; a < 3; ++a) {
    out[a] = std::max<std::int64_t>(1, std::llround(static_cast<double>(shape[a]) * from[a] / to[a]));
  }
  return out;
}

std::pair<Volume, std::optional<LabelMap>> resample(const Volume& volume, const LabelMap* labels,
                                                    const Spacing& target) {
  require_valid_spacing(volume.spacing, "resample source");
  for (double s : target) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ContractError("resample: target spacing must be positive");
  }
  const Index3 in = volume.shape();
  if (labels && labels->shape != in) throw ContractError("resample: label map shape differs from the volume");
  if (target == volume.spacing) {
    std::optional<LabelMap> l;
    if (labels) l = *labels;
    return {volume, std::move(l)};
  }
  const Index3 out = resampled_shape(in, volume.spacing, target);
  std::array<std::vector<AxisSample>, 3> samples;
  for (std::size_t a = 0; a < 3; ++a) {
    const double ratio = target[a] / volume.spacing[a];
    for (std::int64_t i = 0; i < out[a]; ++i) samples[a].push_back(linear_sample(static_cast<double>(i) * ratio, in[a]));
  }

  Volume v(out, target);
  v.origin_mm = volume.origin_mm;
  for (std::int64_t d = 0; d < out[0]; ++d) {
    const auto& sd = samples[0][static_cast<std::size_t>(d)];
    for (std::int64_t h = 0; h < out[1]; ++h) {
      const auto& sh = samples[1][static_cast<std::size_t>(h)];
      for (std::int64_t w = 0; w < out[2]; ++w) {
        const auto& sw = samples[2][static_cast<std::size_t>(w)];
        auto lerp_w = [&](std::int64_t z, std::int64_t y) {
          return (1 - sw.t) * volume.at(z, y, sw.i0) + sw.t * volume.at(z, y, sw.i1);
        };
        auto lerp_hw = [&](std::int64_t z) { return (1 - sh.t) * lerp_w(z, sh.i0) + sh.t * lerp_w(z, sh.i1); };
        v.at(d, h, w) = (1 - sd.t) * lerp_hw(sd.i0) + sd.t * lerp_hw(sd.i1);
      }
    }
  }

  std::optional<LabelMap> l;
  if (labels) {
    LabelMap r(out, labels->num_classes, target);
    std::array<std::vector<std::int64_t>, 3> nearest;
    for (std::size_t a = 0; a < 3; ++a) {
      const double ratio = target[a] / volume.spacing[a];
      for (std::int64_t i = 0; i < out[a]; ++i) {
        nearest[a].push_back(clamp_index(std::llround(static_cast<double>(i) * ratio), in[a]));
      }
    }
    for (std::int64_t d = 0; d < out[0]; ++d) {
      for (std::int64_t h = 0; h < out[1]; ++h) {
        for (std::int64_t w = 0; w < out[2]; ++w) {
          r.at(d, h, w) = labels->at(nearest[0][static_cast<std::size_t>(d)], nearest[1][static_cast<std::size_t>(h)],
                                     nearest[2][static_cast<std::size_t>(w)]);
        }
      }
    }
    l = std::move(r);
  }
  return {std::move(v), std::move(l)};
}

double normalize_value(double x, const PreprocessConfig& cfg) {
  const double c = std::clamp(x, cfg.clip_lo, cfg.clip_hi);
  switch (cfg.mode) {
    case NormMode::UnitInterval:
      return (c - cfg.clip_lo) / (cfg.clip_hi - cfg.clip_lo);
    case NormMode::Symmetric:
      return 2.0 * (c - cfg.clip_lo) / (cfg.clip_hi - cfg.clip_lo) - 1.0;
    case NormMode::ShiftScale:
      return (c - cfg.shift) / cfg.divide;
  }
  return c;
}

Volume clip_and_normalize(const Volume& volume, const PreprocessConfig& cfg) {
  cfg.validate();
  Volume out = volume;
  for (auto& v : out.data.values()) {
    if (std::isnan(v)) throw DataError("clip_and_normalize: NaN intensity in input volume");
    v = normalize_value(v, cfg);
  }
  return out;
}

std::pair<Volume, std::optional<LabelMap>> preprocess(const Volume& volume, const LabelMap* labels,
                                                      const PreprocessConfig& cfg) {
  cfg.validate();
  if (!cfg.target_spacing) {
    std::optional<LabelMap> l;
    if (labels) l = *labels;
    return {clip_and_normalize(volume, cfg), std::move(l)};
  }
  auto [v, l] = resample(volume, labels, *cfg.target_spacing);
  return {clip_and_normalize(v, cfg), std::move(l)};
}

std::int64_t PatchSpec::foreground_count() const {
  if (pos + neg == 0) return 0;
  return std::llround(static_cast<double>(count) * static_cast<double>(pos) / static_cast<double>(pos + neg));
}

void PatchSpec::validate() const {
  for (auto p : patch_size) {
    if (p < 1) throw ConfigError("patch_size: extents must be >= 1");
  }
  if (pos < 0 || neg < 0 || pos + neg == 0) throw ConfigError("pos_neg_ratio: needs nonnegative terms, not both 0");
  if (count < 0) throw ConfigError("patch count: must be >= 0");
}

Volume extract_patch(const Volume& volume, const Index3& origin, const Index3& size) {
  const Index3 in = volume.shape();
  Volume out(size, volume.spacing);
  for (std::int64_t d = 0; d < size[0]; ++d) {
    const auto sd = clamp_index(origin[0] + d, in[0]);
    for (std::int64_t h = 0; h < size[1]; ++h) {
      const auto sh = clamp_index(origin[1] + h, in[1]);
      for (std::int64_t w = 0; w < size[2]; ++w) out.at(d, h, w) = volume.at(sd, sh, clamp_index(origin[2] + w, in[2]));
    }
  }
  return out;
}

LabelMap extract_patch(const LabelMap& labels, const Index3& origin, const Index3& size) {
  LabelMap out(size, labels.num_classes, labels.spacing);
  for (std::int64_t d = 0; d < size[0]; ++d) {
    const auto sd = clamp_index(origin[0] + d, labels.shape[0]);
    for (std::int64_t h = 0; h < size[1]; ++h) {
      const auto sh = clamp_index(origin[1] + h, labels.shape[1]);
      for (std::int64_t w = 0; w < size[2]; ++w) {
        out.at(d, h, w) = labels.at(sd, sh, clamp_index(origin[2] + w, labels.shape[2]));
      }
    }
  }
  return out;
}

std::vector<Patch> sample_patches(const Volume& volume, const LabelMap& labels, const PatchSpec& spec,
                                  std::uint64_t seed) {
  spec.validate();
  if (labels.shape != volume.shape()) throw ContractError("sample_patches: label map shape differs from the volume");
  std::vector<std::int64_t> fg, bg;
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    (labels.labels[i] > 0 ? fg : bg).push_back(static_cast<std::int64_t>(i));
  }
  const std::int64_t n_fg = spec.foreground_count();
  const std::int64_t n_bg = spec.count - n_fg;
  if (n_fg > 0 && fg.empty()) throw DataError("sample_patches: foreground patches requested but no foreground voxels");
  if (n_bg > 0 && bg.empty()) throw DataError("sample_patches: background patches requested but no background voxels");

  std::mt19937_64 rng(seed);
  std::vector<Patch> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  std::int64_t made_fg = 0, made_bg = 0;
  const Index3 g = labels.shape;
  while (made_fg + made_bg < spec.count) {
    const bool want_fg = made_fg < n_fg && (made_bg >= n_bg || made_fg <= made_bg);
    const auto& pool = want_fg ? fg : bg;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const std::int64_t off = pool[pick(rng)];
    Patch p;
    p.center = {off / (g[1] * g[2]), (off / g[2]) % g[1], off % g[2]};
    for (std::size_t a = 0; a < 3; ++a) p.origin[a] = p.center[a] - spec.patch_size[a] / 2;
    p.image = extract_patch(volume, p.origin, spec.patch_size);
    p.labels = extract_patch(labels, p.origin, spec.patch_size);
    p.foreground = want_fg;
    (want_fg ? made_fg : made_bg)++;
    out.push_back(std::move(p));
  }
  return out;
}

void flip_axis(Volume& image, LabelMap& labels, int axis) {
  const Index3 s = image.shape();
  if (labels.shape != s) throw ContractError("flip_axis: image and label shapes differ");
  Volume vi = image;
  LabelMap vl = labels;
  for (std::int64_t d = 0; d < s[0]; ++d) {
    for (std::int64_t h = 0; h < s[1]; ++h) {
      for (std::int64_t w = 0; w < s[2]; ++w) {
        std::int64_t a = d, b = h, c = w;
        if (axis == 0) a = s[0] - 1 - d;
        if (axis == 1) b = s[1] - 1 - h;
        if (axis == 2) c = s[2] - 1 - w;
        image.at(d, h, w) = vi.at(a, b, c);
        labels.at(d, h, w) = vl.at(a, b, c);
      }
    }
  }
}

void rotate_hw(Volume& image, LabelMap& labels, int quarter_turns) {
  const Index3 s = image.shape();
  if (labels.shape != s) throw ContractError("rotate_hw: image and label shapes differ");
  quarter_turns = ((quarter_turns % 4) + 4) % 4;
  if (quarter_turns % 2 == 1 && s[1] != s[2]) throw ContractError("rotate_hw: odd quarter turns need H == W");
  for (int t = 0; t < quarter_turns; ++t) {
    Volume vi = image;
    LabelMap vl = labels;
    const std::int64_t n = s[1];
    for (std::int64_t d = 0; d < s[0]; ++d) {
      for (std::int64_t h = 0; h < s[1]; ++h) {
        for (std::int64_t w = 0; w < s[2]; ++w) {
          // (h, w) <- (w, n - 1 - h): one counter-clockwise quarter turn
          image.at(d, h, w) = vi.at(d, w, n - 1 - h);
          labels.at(d, h, w) = vl.at(d, w, n - 1 - h);
        }
      }
    }
  }
}

std::pair<Volume, LabelMap> augment(Volume image, LabelMap labels, const AugmentConfig& cfg, std::mt19937_64& rng) {
  if (labels.shape != image.shape()) throw ContractError("augment: image and label shapes differ");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  // Every draw happens regardless of outcome so the stream stays aligned.
  for (int axis = 0; axis < 3; ++axis) {
    if (u01(rng) < cfg.p_flip) flip_axis(image, labels, axis);
  }
  const bool rotate = u01(rng) < cfg.p_rotate;
  const double turn_draw = u01(rng);
  if (rotate) {
    const bool square = image.shape()[1] == image.shape()[2];
    const int turns = square ? 1 + static_cast<int>(turn_draw * 3.0) : 2;
    rotate_hw(image, labels, std::min(turns, 3));
  }
  const bool scale = u01(rng) < cfg.p_scale;
  const double factor = cfg.scale_lo + (cfg.scale_hi - cfg.scale_lo) * u01(rng);
  const bool shift = u01(rng) < cfg.p_shift;
  const double offset = cfg.shift_lo + (cfg.shift_hi - cfg.shift_lo) * u01(rng);
  if (scale || shift) {
    for (auto& v : image.data.values()) {
      if (scale) v *= factor;
      if (shift) v += offset;
    }
  }
  return {std::move(image), std::move(labels)};
}

}  // namespace aps::data
