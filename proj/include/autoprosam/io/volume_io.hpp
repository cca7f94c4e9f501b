#pragma once

#include <filesystem>
#include <optional>
#include <utility>

#include "autoprosam/data/volume.hpp"

namespace aps::io {

// Volume files are chosen by extension:
//   .nii / .nii.gz  NIfTI-1, single image; spacing from pixdim
//   anything else   raw archive (see archive.hpp) with an "image" entry and an
//                   optional "label" entry; spacing in metadata
bool is_nifti_path(const std::filesystem::path& path);

std::pair<data::Volume, std::optional<data::LabelMap>> load_volume(const std::filesystem::path& path);
data::LabelMap load_label_map(const std::filesystem::path& path, int num_classes = -1);

void save_volume(const std::filesystem::path& path, const data::Volume& volume,
                 const data::LabelMap* labels = nullptr);
void save_label_map(const std::filesystem::path& path, const data::LabelMap& labels);

}  // namespace aps::io
