#include "autoprosam/data/manifest.hpp"

#include <fstream>
#include <sstream>

#include "autoprosam/core/errors.hpp"

namespace aps::data {

namespace {

std::string case_id(const std::filesystem::path& image) {
  std::string name = image.filename().string();
  for (const char* ext : {".nii.gz", ".nii", ".aps"}) {
    const std::string e = ext;
    if (name.size() > e.size() && name.ends_with(e)) return name.substr(0, name.size() - e.size());
  }
  return image.stem().string();
}

}  // namespace

std::vector<DatasetCase> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("manifest: cannot open '" + path.string() + "'");
  const auto base = path.parent_path();
  std::vector<DatasetCase> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string image, label, split, extra;
    if (!(ls >> image) || image.front() == '#') continue;
    if (!(ls >> label >> split) || (ls >> extra)) {
      throw DataError("manifest: line " + std::to_string(line_no) + " needs '<image> <label|-> <split>'");
    }
    DatasetCase c;
    c.image = std::filesystem::path(image).is_absolute() ? std::filesystem::path(image) : base / image;
    if (label != "-") c.label = std::filesystem::path(label).is_absolute() ? std::filesystem::path(label) : base / label;
    c.split = split;
    c.id = case_id(c.image);
    out.push_back(std::move(c));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<DatasetCase>& cases) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("manifest: cannot write '" + path.string() + "'");
  const auto base = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    const auto r = p.lexically_relative(base);
    return r.empty() ? p.string() : r.string();
  };
  f << "# image label split\n";
  for (const auto& c : cases) f << rel(c.image) << ' ' << (c.label ? rel(*c.label) : "-") << ' ' << c.split << '\n';
}

std::vector<DatasetCase> filter_split(const std::vector<DatasetCase>& cases, const std::string& split) {
  std::vector<DatasetCase> out;
  for (const auto& c : cases) {
    if (c.split == split) out.push_back(c);
  }
  return out;
}

}  // namespace aps::data
