#include "autoprosam/io/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "autoprosam/core/errors.hpp"

namespace aps::io {

static_assert(std::endian::native == std::endian::little, "archive payload assumes a little-endian host");

std::string dtype_name(DType t) {
  switch (t) {
    case DType::F64:
      return "f64";
    case DType::F32:
      return "f32";
    case DType::I32:
      return "i32";
    case DType::U8:
      return "u8";
  }
  return "?";
}

DType parse_dtype(const std::string& name) {
  if (name == "f64") return DType::F64;
  if (name == "f32") return DType::F32;
  if (name == "i32") return DType::I32;
  if (name == "u8") return DType::U8;
  throw DataError("archive: unknown dtype '" + name + "'");
}

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F64:
      return 8;
    case DType::F32:
    case DType::I32:
      return 4;
    case DType::U8:
      return 1;
  }
  return 0;
}

void Archive::put(std::string name, Tensor values, DType dtype, bool frozen) {
  if (name.empty() || name.find_first_of(" \t\n\r") != std::string::npos) {
    throw ContractError("archive: invalid entry name '" + name + "'");
  }
  if (by_name_.contains(name)) throw ContractError("archive: duplicate entry '" + name + "'");
  by_name_[name] = entries_.size();
  entries_.push_back(ArchiveEntry{std::move(name), dtype, frozen, std::move(values)});
}

bool Archive::contains(const std::string& name) const { return by_name_.contains(name); }

const ArchiveEntry& Archive::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw DataError("archive: missing entry '" + name + "'");
  return entries_[it->second];
}

ArchiveEntry& Archive::get(const std::string& name) {
  return const_cast<ArchiveEntry&>(static_cast<const Archive&>(*this).get(name));
}

void Archive::set_meta(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of(" \t\n\r") != std::string::npos || value.find('\n') != std::string::npos) {
    throw ContractError("archive: invalid metadata key/value for '" + key + "'");
  }
  meta_[key] = value;
}

std::optional<std::string> Archive::meta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::string shape_field(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_shape_field(const std::string& field, const std::string& entry) {
  if (field == "scalar") return {};
  Shape s;
  std::stringstream ss(field);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(tok, &used);
      if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
      s.push_back(v);
    } catch (const std::exception&) {
      throw DataError("archive: bad shape field '" + field + "' for entry '" + entry + "'");
    }
  }
  return s;
}

void encode(const ArchiveEntry& e, std::string& out) {
  const auto& v = e.values.storage();
  switch (e.dtype) {
    case DType::F64: {
      const auto* p = reinterpret_cast<const char*>(v.data());
      out.append(p, v.size() * sizeof(double));
      break;
    }
    case DType::F32:
      for (double d : v) {
        const float f = static_cast<float>(d);
        out.append(reinterpret_cast<const char*>(&f), sizeof f);
      }
      break;
    case DType::I32:
      for (double d : v) {
        const auto i = static_cast<std::int32_t>(d);
        out.append(reinterpret_cast<const char*>(&i), sizeof i);
      }
      break;
    case DType::U8:
      for (double d : v) out.push_back(static_cast<char>(static_cast<std::uint8_t>(d)));
      break;
  }
}

std::vector<double> decode(DType t, const char* p, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    switch (t) {
      case DType::F64:
        std::memcpy(&out[i], p + i * 8, 8);
        break;
      case DType::F32: {
        float f;
        std::memcpy(&f, p + i * 4, 4);
        out[i] = f;
        break;
      }
      case DType::I32: {
        std::int32_t v;
        std::memcpy(&v, p + i * 4, 4);
        out[i] = v;
        break;
      }
      case DType::U8:
        out[i] = static_cast<std::uint8_t>(p[i]);
        break;
    }
  }
  return out;
}

}  // namespace

std::string Archive::manifest() const {
  std::ostringstream os;
  os << "APSARCHIVE 1\n";
  for (const auto& [k, v] : meta_) os << "meta " << k << ' ' << v << '\n';
  std::size_t offset = 0;
  for (const auto& e : entries_) {
    os << "entry " << e.name << ' ' << shape_field(e.shape()) << ' ' << dtype_name(e.dtype) << ' ' << offset << ' '
       << (e.frozen ? "frozen" : "tunable") << '\n';
    offset += static_cast<std::size_t>(e.values.numel()) * dtype_size(e.dtype);
  }
  os << "end\n";
  return os.str();
}

void Archive::write(const std::filesystem::path& path) const {
  std::string payload;
  for (const auto& e : entries_) encode(e, payload);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("archive: cannot open '" + path.string() + "' for writing");
  const std::string header = manifest();
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw DataError("archive: write failed for '" + path.string() + "'");
}

Archive Archive::read(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("archive: cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(f, line) || line != "APSARCHIVE 1") {
    throw DataError("archive: '" + path.string() + "' has an unrecognized header");
  }
  struct Pending {
    std::string name;
    Shape shape;
    DType dtype;
    std::size_t offset;
    bool frozen;
  };
  Archive a;
  std::vector<Pending> pending;
  bool ended = false;
  while (std::getline(f, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      a.meta_[key] = value;
    } else if (kind == "entry") {
      std::string name, shape, dtype, flag;
      std::size_t offset = 0;
      if (!(ls >> name >> shape >> dtype >> offset >> flag) || (flag != "frozen" && flag != "tunable")) {
        throw DataError("archive: malformed entry line '" + line + "'");
      }
      pending.push_back({name, parse_shape_field(shape, name), parse_dtype(dtype), offset, flag == "frozen"});
    } else {
      throw DataError("archive: unexpected manifest line '" + line + "'");
    }
  }
  if (!ended) throw DataError("archive: manifest of '" + path.string() + "' is truncated");
  std::string payload((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  for (const auto& p : pending) {
    const auto count = static_cast<std::size_t>(shape_numel(p.shape));
    const std::size_t bytes = count * dtype_size(p.dtype);
    if (p.offset + bytes > payload.size()) {
      throw DataError("archive: payload for entry '" + p.name + "' is truncated");
    }
    a.put(p.name, Tensor(p.shape, decode(p.dtype, payload.data() + p.offset, count)), p.dtype, p.frozen);
  }
  return a;
}

bool Archive::operator==(const Archive& other) const {
  if (meta_ != other.meta_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.dtype != b.dtype || a.frozen != b.frozen || !(a.values == b.values)) return false;
  }
  return true;
}

}  // namespace aps::io
