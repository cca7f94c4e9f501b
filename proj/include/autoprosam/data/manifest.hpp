#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace aps::data {

struct DatasetCase {
  std::string id;  // image file stem
  std::filesystem::path image;
  std::optional<std::filesystem::path> label;
  std::string split;  // train | val | test
};

// Plain text, one case per line: "<image> <label|-> <split>". Blank lines and
// lines starting with '#' are ignored; relative paths resolve against the
// manifest's directory.
std::vector<DatasetCase> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<DatasetCase>& cases);
std::vector<DatasetCase> filter_split(const std::vector<DatasetCase>& cases, const std::string& split);

}  // namespace aps::data
