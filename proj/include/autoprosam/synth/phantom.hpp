#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "autoprosam/data/volume.hpp"
#include "autoprosam/io/archive.hpp"
#include "autoprosam/model/config.hpp"

namespace aps::synth {

enum class ShapeFamily { Sphere, Ellipsoid, Box };

// Explicit organ geometry in millimetres; voxel (d, h, w) sits at
// (d * sz, h * sy, w * sx).
struct OrganPlacement {
  std::array<double, 3> center_mm{0, 0, 0};
  std::array<double, 3> radii_mm{1, 1, 1};  // semi-axes; spheres use radii_mm[0]
};

struct PhantomSpec {
  data::Index3 grid_shape{32, 32, 32};
  data::Spacing spacing_mm{1.0, 1.0, 1.0};
  int num_organs = 1;
  ShapeFamily shape_family = ShapeFamily::Sphere;
  std::vector<double> organ_intensity;  // empty: spread evenly over [0, 300]
  double background_intensity = -100.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  // Radius range for random placement, as fractions of the smallest
  // physical extent.
  double radius_min_fraction = 0.12;
  double radius_max_fraction = 0.25;
  // When non-empty, used verbatim (one entry per organ) instead of sampling.
  std::vector<OrganPlacement> organs_override;

  void validate() const;
  double intensity_of(int organ) const;  // organ in 1..num_organs
};

std::pair<data::Volume, data::LabelMap> generate_phantom(const PhantomSpec& spec);

// Seeded stand-in for pretrained 2D weights, with every entry the encoder
// importer expects for `cfg`.
io::Archive generate_surrogate_2d_checkpoint(const model::EncoderConfig& cfg, std::uint64_t seed);

const char* shape_family_name(ShapeFamily f);
ShapeFamily parse_shape_family(const std::string& name);

}  // namespace aps::synth
