#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "autoprosam/core/tensor.hpp"

namespace aps::data {

using Index3 = std::array<std::int64_t, 3>;
// Physical voxel size in millimetres, ordered (z, y, x) like the grid axes.
using Spacing = std::array<double, 3>;

std::int64_t voxel_count(const Index3& shape);
void require_valid_spacing(const Spacing& spacing, const char* context);

// 3D scalar grid indexed (d, h, w), stored as a rank-3 tensor.
struct Volume {
  Tensor data;
  Spacing spacing{1.0, 1.0, 1.0};
  std::optional<std::array<double, 3>> origin_mm;

  Volume() = default;
  Volume(Index3 shape, Spacing spacing, double fill = 0.0);

  Index3 shape() const;
  std::int64_t offset(std::int64_t d, std::int64_t h, std::int64_t w) const;
  double& at(std::int64_t d, std::int64_t h, std::int64_t w) { return data[offset(d, h, w)]; }
  double at(std::int64_t d, std::int64_t h, std::int64_t w) const { return data[offset(d, h, w)]; }
};

// Integer class annotation on the same grid as a Volume; 0 is background.
struct LabelMap {
  Index3 shape{0, 0, 0};
  std::vector<std::int32_t> labels;
  int num_classes = 0;  // K foreground classes; values lie in [0, K]
  Spacing spacing{1.0, 1.0, 1.0};

  LabelMap() = default;
  LabelMap(Index3 shape, int num_classes, Spacing spacing);

  std::int64_t offset(std::int64_t d, std::int64_t h, std::int64_t w) const {
    return (d * shape[1] + h) * shape[2] + w;
  }
  std::int32_t& at(std::int64_t d, std::int64_t h, std::int64_t w) {
    return labels[static_cast<std::size_t>(offset(d, h, w))];
  }
  std::int32_t at(std::int64_t d, std::int64_t h, std::int64_t w) const {
    return labels[static_cast<std::size_t>(offset(d, h, w))];
  }
  // Voxel counts per class value 0..num_classes.
  std::vector<std::int64_t> histogram() const;
  void validate() const;

  bool operator==(const LabelMap& other) const = default;
};

}  // namespace aps::data
