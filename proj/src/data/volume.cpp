#include "autoprosam/data/volume.hpp"

#include <cmath>
#include <string>

#include "autoprosam/core/errors.hpp"

namespace aps::data {

std::int64_t voxel_count(const Index3& shape) { return shape[0] * shape[1] * shape[2]; }

void require_valid_spacing(const Spacing& spacing, const char* context) {
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw DataError(std::string(context) + ": spacing must be positive and finite");
    }
  }
}

Volume::Volume(Index3 shape, Spacing sp, double fill) : data({shape[0], shape[1], shape[2]}, fill), spacing(sp) {}

Index3 Volume::shape() const {
  if (data.rank() != 3) return {0, 0, 0};
  return {data.dim(0), data.dim(1), data.dim(2)};
}

std::int64_t Volume::offset(std::int64_t d, std::int64_t h, std::int64_t w) const {
  return (d * data.dim(1) + h) * data.dim(2) + w;
}

LabelMap::LabelMap(Index3 s, int k, Spacing sp)
    : shape(s), labels(static_cast<std::size_t>(voxel_count(s)), 0), num_classes(k), spacing(sp) {}

std::vector<std::int64_t> LabelMap::histogram() const {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes) + 1, 0);
  for (auto v : labels) {
    if (v >= 0 && v <= num_classes) ++counts[static_cast<std::size_t>(v)];
  }
  return counts;
}

void LabelMap::validate() const {
  if (static_cast<std::int64_t>(labels.size()) != voxel_count(shape)) {
    throw DataError("label map: storage does not match shape");
  }
  for (auto v : labels) {
    if (v < 0 || v > num_classes) {
      throw DataError("label map: value " + std::to_string(v) + " outside [0, " + std::to_string(num_classes) + "]");
    }
  }
}

}  // namespace aps::data
