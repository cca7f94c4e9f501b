#include "autoprosam/synth/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/model/encoder.hpp"
#include "autoprosam/model/params.hpp"

namespace aps::synth {

namespace {

constexpr int kMaxAttempts = 1000;

bool inside(ShapeFamily family, const OrganPlacement& o, const std::array<double, 3>& p) {
  const double dz = p[0] - o.center_mm[0], dy = p[1] - o.center_mm[1], dx = p[2] - o.center_mm[2];
  switch (family) {
    case ShapeFamily::Sphere:
      return dz * dz + dy * dy + dx * dx <= o.radii_mm[0] * o.radii_mm[0];
    case ShapeFamily::Ellipsoid: {
      const double a = dz / o.radii_mm[0], b = dy / o.radii_mm[1], c = dx / o.radii_mm[2];
      return a * a + b * b + c * c <= 1.0;
    }
    case ShapeFamily::Box:
      return std::abs(dz) <= o.radii_mm[0] && std::abs(dy) <= o.radii_mm[1] && std::abs(dx) <= o.radii_mm[2];
  }
  return false;
}

// Voxel offsets of one organ, or empty when it has no voxel in the grid.
std::vector<std::int64_t> rasterize(const PhantomSpec& spec, const OrganPlacement& o) {
  std::vector<std::int64_t> out;
  const auto& g = spec.grid_shape;
  const auto& s = spec.spacing_mm;
  std::array<std::int64_t, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    const double r = spec.shape_family == ShapeFamily::Sphere ? o.radii_mm[0] : o.radii_mm[static_cast<std::size_t>(a)];
    const auto ua = static_cast<std::size_t>(a);
    lo[ua] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor((o.center_mm[ua] - r) / s[ua])));
    hi[ua] = std::min<std::int64_t>(g[ua] - 1, static_cast<std::int64_t>(std::ceil((o.center_mm[ua] + r) / s[ua])));
  }
  for (std::int64_t d = lo[0]; d <= hi[0]; ++d) {
    for (std::int64_t h = lo[1]; h <= hi[1]; ++h) {
      for (std::int64_t w = lo[2]; w <= hi[2]; ++w) {
        const std::array<double, 3> p{static_cast<double>(d) * s[0], static_cast<double>(h) * s[1],
                                      static_cast<double>(w) * s[2]};
        if (inside(spec.shape_family, o, p)) out.push_back((d * g[1] + h) * g[2] + w);
      }
    }
  }
  return out;
}

// True when any voxel of `voxels` is within one voxel (26-neighbourhood) of a
// labelled voxel.
bool touches(const data::LabelMap& labels, const std::vector<std::int64_t>& voxels) {
  const auto& g = labels.shape;
  for (auto off : voxels) {
    const std::int64_t w = off % g[2], h = (off / g[2]) % g[1], d = off / (g[1] * g[2]);
    for (std::int64_t a = std::max<std::int64_t>(d - 1, 0); a <= std::min(d + 1, g[0] - 1); ++a) {
      for (std::int64_t b = std::max<std::int64_t>(h - 1, 0); b <= std::min(h + 1, g[1] - 1); ++b) {
        for (std::int64_t c = std::max<std::int64_t>(w - 1, 0); c <= std::min(w + 1, g[2] - 1); ++c) {
          if (labels.at(a, b, c) != 0) return true;
        }
      }
    }
  }
  return false;
}

OrganPlacement sample_placement(const PhantomSpec& spec, std::mt19937_64& rng) {
  const auto& g = spec.grid_shape;
  const auto& s = spec.spacing_mm;
  double min_extent = 1e300;
  for (std::size_t a = 0; a < 3; ++a) min_extent = std::min(min_extent, static_cast<double>(g[a]) * s[a]);
  std::uniform_real_distribution<double> radius(spec.radius_min_fraction * min_extent,
                                                spec.radius_max_fraction * min_extent);
  OrganPlacement o;
  const double r0 = radius(rng);
  for (std::size_t a = 0; a < 3; ++a) {
    o.radii_mm[a] = spec.shape_family == ShapeFamily::Sphere ? r0 : radius(rng);
  }
  for (std::size_t a = 0; a < 3; ++a) {
    const double r = spec.shape_family == ShapeFamily::Sphere ? r0 : o.radii_mm[a];
    // keep one voxel between the organ and the volume border when possible
    const double lo = std::min(r + s[a], 0.5 * static_cast<double>(g[a] - 1) * s[a]);
    const double hi = std::max(lo, static_cast<double>(g[a] - 1) * s[a] - r - s[a]);
    o.center_mm[a] = std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  return o;
}

}  // namespace

const char* shape_family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::Sphere: return "sphere";
    case ShapeFamily::Ellipsoid: return "ellipsoid";
    case ShapeFamily::Box: return "box";
  }
  return "sphere";
}

ShapeFamily parse_shape_family(const std::string& name) {
  if (name == "sphere") return ShapeFamily::Sphere;
  if (name == "ellipsoid") return ShapeFamily::Ellipsoid;
  if (name == "box") return ShapeFamily::Box;
  throw ConfigError("shape_family: expected sphere|ellipsoid|box, got '" + name + "'");
}

void PhantomSpec::validate() const {
  for (auto n : grid_shape) {
    if (n < 8) throw ConfigError("grid_shape: every extent must be >= 8");
  }
  data::require_valid_spacing(spacing_mm, "spacing_mm");
  if (num_organs < 1) throw ConfigError("num_organs: must be >= 1");
  if (noise_sigma < 0 || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma: must be finite and >= 0");
  if (!organ_intensity.empty() && organ_intensity.size() != static_cast<std::size_t>(num_organs)) {
    throw ConfigError("organ_intensity: needs one value per organ");
  }
  if (!organs_override.empty() && organs_override.size() != static_cast<std::size_t>(num_organs)) {
    throw ConfigError("organs_override: needs one placement per organ");
  }
  if (!(radius_min_fraction > 0) || radius_max_fraction < radius_min_fraction) {
    throw ConfigError("radius fractions: need 0 < min <= max");
  }
}

double PhantomSpec::intensity_of(int organ) const {
  if (!organ_intensity.empty()) return organ_intensity[static_cast<std::size_t>(organ - 1)];
  return 300.0 * organ / (num_organs + 1);
}

std::pair<data::Volume, data::LabelMap> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  data::Volume vol(spec.grid_shape, spec.spacing_mm, spec.background_intensity);
  data::LabelMap labels(spec.grid_shape, spec.num_organs, spec.spacing_mm);
  std::mt19937_64 rng(model::param_rng(spec.seed, "phantom.placement"));

  for (int organ = 1; organ <= spec.num_organs; ++organ) {
    std::vector<std::int64_t> voxels;
    if (!spec.organs_override.empty()) {
      voxels = rasterize(spec, spec.organs_override[static_cast<std::size_t>(organ - 1)]);
      if (voxels.empty() || touches(labels, voxels)) {
        throw DataError("phantom: organ " + std::to_string(organ) + " override is empty or not disjoint");
      }
    } else {
      for (int attempt = 0; attempt < kMaxAttempts && voxels.empty(); ++attempt) {
        auto candidate = rasterize(spec, sample_placement(spec, rng));
        if (!candidate.empty() && !touches(labels, candidate)) voxels = std::move(candidate);
      }
      if (voxels.empty()) {
        throw DataError("phantom: could not place organ " + std::to_string(organ) + " disjointly after " +
                        std::to_string(kMaxAttempts) + " attempts");
      }
    }
    const double value = spec.intensity_of(organ);
    for (auto off : voxels) {
      labels.labels[static_cast<std::size_t>(off)] = organ;
      vol.data[off] = value;
    }
  }

  if (spec.noise_sigma > 0) {
    auto noise_rng = model::param_rng(spec.seed, "phantom.noise");
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (auto& v : vol.data.values()) v += noise(noise_rng);
  }
  return {std::move(vol), std::move(labels)};
}

io::Archive generate_surrogate_2d_checkpoint(const model::EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  io::Archive archive;
  archive.set_meta("kind", "surrogate_2d");
  archive.set_meta("seed", std::to_string(seed));
  for (const auto& [name, shape] : model::expected_2d_entries(cfg)) {
    auto rng = model::param_rng(seed, name);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor t(shape);
    const bool is_norm = name.find(".norm") != std::string::npos;
    const bool is_bias = name.ends_with(".bias");
    const std::int64_t fan_in = shape.size() > 1 ? shape_numel(shape) / shape[0] : 1;
    for (auto& v : t.values()) {
      const double z = normal(rng);
      if (is_norm) {
        v = is_bias ? 0.1 * z : 1.0 + 0.1 * z;
      } else if (is_bias) {
        v = 0.02 * z;
      } else if (name == model::names::kPos2d) {
        v = 0.1 * z;
      } else {
        v = z / std::sqrt(static_cast<double>(fan_in));
      }
    }
    archive.put(name, std::move(t), io::DType::F64, !is_norm);
  }
  return archive;
}

}  // namespace aps::synth
