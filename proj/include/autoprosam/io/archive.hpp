#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "autoprosam/core/tensor.hpp"

namespace aps::io {

enum class DType { F64, F32, I32, U8 };

std::string dtype_name(DType t);
DType parse_dtype(const std::string& name);
std::size_t dtype_size(DType t);

struct ArchiveEntry {
  std::string name;
  DType dtype = DType::F64;
  bool frozen = false;
  Tensor values;  // carries the declared shape

  const Shape& shape() const { return values.shape(); }
};

// Named dense arrays plus free-form metadata, stored as a single file:
//
//   APSARCHIVE 1
//   meta <key> <value>
//   entry <name> <d0,d1,...|scalar> <dtype> <byte offset> <frozen|tunable>
//   end
//   <little-endian payload>
//
// Offsets are relative to the first payload byte. Names are unique and
// contain no whitespace.
class Archive {
 public:
  void put(std::string name, Tensor values, DType dtype = DType::F64, bool frozen = false);
  bool contains(const std::string& name) const;
  const ArchiveEntry& get(const std::string& name) const;
  ArchiveEntry& get(const std::string& name);
  const std::vector<ArchiveEntry>& entries() const { return entries_; }

  void set_meta(const std::string& key, const std::string& value);
  std::optional<std::string> meta(const std::string& key) const;
  const std::map<std::string, std::string>& all_meta() const { return meta_; }

  void write(const std::filesystem::path& path) const;
  static Archive read(const std::filesystem::path& path);

  // Manifest text (header without payload); stable for hashing and diffs.
  std::string manifest() const;

  bool operator==(const Archive& other) const;

 private:
  std::vector<ArchiveEntry> entries_;
  std::map<std::string, std::size_t> by_name_;
  std::map<std::string, std::string> meta_;
};

// Pretrained weights are surfaced as archives too; this is the common alias.
using CheckpointArchive = Archive;

}  // namespace aps::io
