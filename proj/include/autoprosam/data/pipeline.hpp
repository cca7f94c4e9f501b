#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "autoprosam/data/volume.hpp"

namespace aps::data {

enum class NormMode { UnitInterval, Symmetric, ShiftScale };

struct PreprocessConfig {
  std::optional<Spacing> target_spacing;  // unset: keep source spacing
  double clip_lo = -125.0;
  double clip_hi = 275.0;
  NormMode mode = NormMode::UnitInterval;
  double shift = 0.0;   // ShiftScale: (x - shift) / divide
  double divide = 1.0;

  void validate() const;
};

// Dataset presets: "btcv", "amos", "ct-org", "pelvic".
PreprocessConfig preprocess_preset(const std::string& name);
std::vector<std::string> preprocess_preset_names();
const char* norm_mode_name(NormMode mode);
NormMode parse_norm_mode(const std::string& name);

// Output extent per axis: max(1, round(n * s_in / s_out)). Output voxel i maps
// to source coordinate i * s_out / s_in (clamped to the grid); images are
// interpolated trilinearly, labels take the nearest source voxel.
Index3 resampled_shape(const Index3& shape, const Spacing& from, const Spacing& to);
std::pair<Volume, std::optional<LabelMap>> resample(const Volume& volume, const LabelMap* labels,
                                                    const Spacing& target_spacing);

double normalize_value(double x, const PreprocessConfig& cfg);
Volume clip_and_normalize(const Volume& volume, const PreprocessConfig& cfg);
// resample (when a target is set) followed by clip_and_normalize.
std::pair<Volume, std::optional<LabelMap>> preprocess(const Volume& volume, const LabelMap* labels,
                                                      const PreprocessConfig& cfg);

struct PatchSpec {
  Index3 patch_size{32, 32, 32};
  std::int64_t pos = 1;  // foreground : background ratio
  std::int64_t neg = 1;
  std::int64_t count = 2;

  std::int64_t foreground_count() const;
  void validate() const;
};

struct Patch {
  Index3 origin{0, 0, 0};  // may be negative or overhang; outside voxels replicate the edge
  Index3 center{0, 0, 0};
  Volume image;
  LabelMap labels;
  bool foreground = false;
};

// Crops [origin, origin + size) with edge replication outside the grid.
Volume extract_patch(const Volume& volume, const Index3& origin, const Index3& size);
LabelMap extract_patch(const LabelMap& labels, const Index3& origin, const Index3& size);

// Foreground patches are centred on a voxel with label > 0, background ones
// on a label-0 voxel. Foreground and background draws alternate, starting
// with foreground, until each quota is met.
std::vector<Patch> sample_patches(const Volume& volume, const LabelMap& labels, const PatchSpec& spec,
                                  std::uint64_t seed);

struct AugmentConfig {
  double p_flip = 0.5;    // per axis
  double p_rotate = 0.5;  // 90-degree multiples in the (h, w) plane
  double p_scale = 0.5;
  double p_shift = 0.5;
  double scale_lo = 0.9, scale_hi = 1.1;
  double shift_lo = -0.1, shift_hi = 0.1;

  static AugmentConfig none() { return {0.0, 0.0, 0.0, 0.0}; }
};

void flip_axis(Volume& image, LabelMap& labels, int axis);
// Rotates by quarter turns in the (h, w) plane; odd turns need H == W.
void rotate_hw(Volume& image, LabelMap& labels, int quarter_turns);

std::pair<Volume, LabelMap> augment(Volume image, LabelMap labels, const AugmentConfig& cfg, std::mt19937_64& rng);

}  // namespace aps::data
