#include "autoprosam/io/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/io/archive.hpp"

namespace aps::io {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum NiftiType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string read_all_gz(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw DataError("nifti: cannot open '" + path.string() + "'");
  std::string out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw DataError("nifti: decompression failed for '" + path.string() + "'");
  return out;
}

void write_all(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool gz = lower(path.string()).ends_with(".gz");
  // Fixed mtime/no-name header keeps .nii.gz output byte-reproducible.
  gzFile f = gzopen(path.string().c_str(), gz ? "wb6" : "wbT");
  if (!f) throw DataError("nifti: cannot open '" + path.string() + "' for writing");
  const int written = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
  if (written != static_cast<int>(bytes.size())) throw DataError("nifti: write failed for '" + path.string() + "'");
}

template <typename T>
T get(const std::string& buf, std::size_t off, bool swap) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  if (swap) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    std::reverse(p, p + sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::string& buf, std::size_t off, T v) {
  std::memcpy(buf.data() + off, &v, sizeof(T));
}

struct NiftiImage {
  data::Index3 shape{};
  data::Spacing spacing{};
  std::array<double, 3> origin{};
  bool has_origin = false;
  std::vector<double> values;
};

NiftiImage read_nifti(const std::filesystem::path& path) {
  const std::string buf = read_all_gz(path);
  if (buf.size() < kHeaderSize) throw DataError("nifti: '" + path.string() + "' is shorter than a header");
  bool swap = false;
  const auto hdr = get<std::int32_t>(buf, 0, false);
  if (hdr != kHeaderSize) {
    if (get<std::int32_t>(buf, 0, true) != kHeaderSize) throw DataError("nifti: field sizeof_hdr is not 348");
    swap = true;
  }
  if (std::memcmp(buf.data() + 344, "n+1", 4) != 0 && std::memcmp(buf.data() + 344, "ni1", 4) != 0) {
    throw DataError("nifti: field magic is not 'n+1' or 'ni1'");
  }
  if (std::memcmp(buf.data() + 344, "ni1", 4) == 0) {
    throw DataError("nifti: field magic 'ni1' (separate .img) is not supported");
  }
  const auto ndim = get<std::int16_t>(buf, 40, swap);
  if (ndim < 1 || ndim > 7) throw DataError("nifti: field dim[0] out of range");
  std::int64_t extent[7] = {1, 1, 1, 1, 1, 1, 1};
  for (int i = 1; i <= ndim; ++i) {
    extent[i - 1] = get<std::int16_t>(buf, 40 + 2 * static_cast<std::size_t>(i), swap);
    if (extent[i - 1] < 1) throw DataError("nifti: field dim[" + std::to_string(i) + "] must be positive");
  }
  for (int i = 3; i < ndim; ++i) {
    if (extent[i] != 1) throw DataError("nifti: field dim has non-singleton extent beyond 3D");
  }
  NiftiImage img;
  img.shape = {extent[2], extent[1], extent[0]};  // (z, y, x)
  const double px = get<float>(buf, 80, swap), py = get<float>(buf, 84, swap), pz = get<float>(buf, 88, swap);
  img.spacing = {std::abs(pz), std::abs(py), std::abs(px)};
  for (double s : img.spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw DataError("nifti: field spacing (pixdim) is missing or zero");
  }
  const auto datatype = get<std::int16_t>(buf, 70, swap);
  const double vox_offset = get<float>(buf, 108, swap);
  double slope = get<float>(buf, 112, swap);
  const double inter = get<float>(buf, 116, swap);
  if (slope == 0.0 || !std::isfinite(slope)) slope = 1.0;
  if (get<std::int16_t>(buf, 252, swap) > 0) {
    img.has_origin = true;
    img.origin = {get<float>(buf, 276, swap), get<float>(buf, 272, swap), get<float>(buf, 268, swap)};
  }

  std::size_t elem = 0;
  switch (datatype) {
    case kUInt8:
    case kInt8:
      elem = 1;
      break;
    case kInt16:
    case kUInt16:
      elem = 2;
      break;
    case kInt32:
    case kFloat32:
      elem = 4;
      break;
    case kFloat64:
      elem = 8;
      break;
    default:
      throw DataError("nifti: field datatype " + std::to_string(datatype) + " is not supported");
  }
  const auto count = static_cast<std::size_t>(data::voxel_count(img.shape));
  const auto off = static_cast<std::size_t>(vox_offset);
  if (vox_offset < kHeaderSize || off + count * elem > buf.size()) {
    throw DataError("nifti: field vox_offset/data size inconsistent with file length");
  }
  img.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t p = off + i * elem;
    double v = 0;
    switch (datatype) {
      case kUInt8:
        v = static_cast<std::uint8_t>(buf[p]);
        break;
      case kInt8:
        v = static_cast<std::int8_t>(buf[p]);
        break;
      case kInt16:
        v = get<std::int16_t>(buf, p, swap);
        break;
      case kUInt16:
        v = get<std::uint16_t>(buf, p, swap);
        break;
      case kInt32:
        v = get<std::int32_t>(buf, p, swap);
        break;
      case kFloat32:
        v = get<float>(buf, p, swap);
        break;
      case kFloat64:
        v = get<double>(buf, p, swap);
        break;
      default:
        break;
    }
    img.values[i] = v * slope + inter;
  }
  return img;
}

void write_nifti(const std::filesystem::path& path, const data::Index3& shape, const data::Spacing& spacing,
                 const std::optional<std::array<double, 3>>& origin, const std::vector<double>& values,
                 bool integer) {
  for (auto e : shape) {
    if (e > 32767) throw DataError("nifti: extent exceeds the NIfTI-1 int16 limit");
  }
  std::string buf(kVoxOffset, '\0');
  put<std::int32_t>(buf, 0, kHeaderSize);
  put<char>(buf, 38, 'r');  // regular
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(shape[2]), static_cast<std::int16_t>(shape[1]),
                                static_cast<std::int16_t>(shape[0]), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(buf, 40 + 2 * static_cast<std::size_t>(i), dims[i]);
  put<std::int16_t>(buf, 70, integer ? kInt32 : kFloat32);
  put<std::int16_t>(buf, 72, 32);
  const float pix[8] = {1.0f, static_cast<float>(spacing[2]), static_cast<float>(spacing[1]),
                        static_cast<float>(spacing[0]), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<float>(buf, 76 + 4 * static_cast<std::size_t>(i), pix[i]);
  put<float>(buf, 108, static_cast<float>(kVoxOffset));
  put<float>(buf, 112, 1.0f);
  put<float>(buf, 116, 0.0f);
  put<char>(buf, 123, 2);  // mm
  put<std::int16_t>(buf, 252, 1);
  put<std::int16_t>(buf, 254, 0);
  if (origin) {
    put<float>(buf, 268, static_cast<float>((*origin)[2]));
    put<float>(buf, 272, static_cast<float>((*origin)[1]));
    put<float>(buf, 276, static_cast<float>((*origin)[0]));
  }
  std::memcpy(buf.data() + 344, "n+1\0", 4);
  buf.reserve(buf.size() + values.size() * 4);
  for (double v : values) {
    if (integer) {
      const auto i = static_cast<std::int32_t>(v);
      buf.append(reinterpret_cast<const char*>(&i), 4);
    } else {
      const auto f = static_cast<float>(v);
      buf.append(reinterpret_cast<const char*>(&f), 4);
    }
  }
  write_all(path, buf);
}

std::string spacing_string(const data::Spacing& s) {
  std::ostringstream os;
  os.precision(17);
  os << s[0] << ',' << s[1] << ',' << s[2];
  return os.str();
}

data::Spacing parse_spacing(const std::optional<std::string>& text) {
  if (!text) throw DataError("volume: field spacing is missing");
  data::Spacing s{};
  std::stringstream ss(*text);
  std::string tok;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(ss, tok, ',')) throw DataError("volume: field spacing is malformed");
    try {
      s[static_cast<std::size_t>(i)] = std::stod(tok);
    } catch (const std::exception&) {
      throw DataError("volume: field spacing is malformed");
    }
  }
  for (double v : s) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DataError("volume: field spacing must be positive");
  }
  return s;
}

data::Index3 shape3(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw DataError(std::string("volume: entry ") + what + " is not 3D");
  return {t.dim(0), t.dim(1), t.dim(2)};
}

}  // namespace

bool is_nifti_path(const std::filesystem::path& path) {
  const auto s = lower(path.string());
  return s.ends_with(".nii") || s.ends_with(".nii.gz");
}

std::pair<data::Volume, std::optional<data::LabelMap>> load_volume(const std::filesystem::path& path) {
  if (is_nifti_path(path)) {
    NiftiImage img = read_nifti(path);
    data::Volume v;
    v.data = Tensor({img.shape[0], img.shape[1], img.shape[2]}, std::move(img.values));
    v.spacing = img.spacing;
    if (img.has_origin) v.origin_mm = img.origin;
    return {std::move(v), std::nullopt};
  }
  const Archive a = Archive::read(path);
  if (!a.contains("image")) throw DataError("volume: field image is missing in '" + path.string() + "'");
  data::Volume v;
  v.data = a.get("image").values;
  shape3(v.data, "image");
  v.spacing = parse_spacing(a.meta("spacing"));
  if (a.contains("origin")) {
    const auto& o = a.get("origin").values;
    v.origin_mm = std::array<double, 3>{o[0], o[1], o[2]};
  }
  std::optional<data::LabelMap> labels;
  if (a.contains("label")) labels = load_label_map(path);
  return {std::move(v), std::move(labels)};
}

data::LabelMap load_label_map(const std::filesystem::path& path, int num_classes) {
  data::LabelMap m;
  std::vector<double> raw;
  if (is_nifti_path(path)) {
    NiftiImage img = read_nifti(path);
    m.shape = img.shape;
    m.spacing = img.spacing;
    raw = std::move(img.values);
  } else {
    const Archive a = Archive::read(path);
    if (!a.contains("label")) throw DataError("volume: field label is missing in '" + path.string() + "'");
    const Tensor& t = a.get("label").values;
    m.shape = shape3(t, "label");
    m.spacing = parse_spacing(a.meta("spacing"));
    raw = t.storage();
    if (num_classes < 0) {
      if (auto k = a.meta("num_classes")) num_classes = std::stoi(*k);
    }
  }
  m.labels.resize(raw.size());
  int max_label = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double r = std::round(raw[i]);
    if (r != raw[i] || r < 0) throw DataError("label map: non-integer or negative label in '" + path.string() + "'");
    m.labels[i] = static_cast<std::int32_t>(r);
    max_label = std::max(max_label, m.labels[i]);
  }
  m.num_classes = num_classes >= 0 ? num_classes : max_label;
  m.validate();
  return m;
}

void save_volume(const std::filesystem::path& path, const data::Volume& volume, const data::LabelMap* labels) {
  data::require_valid_spacing(volume.spacing, "save_volume");
  if (labels && labels->shape != volume.shape()) throw ShapeError("save_volume: label map shape differs from image");
  if (is_nifti_path(path)) {
    if (labels) throw ContractError("save_volume: NIfTI files hold one image; save labels separately");
    write_nifti(path, volume.shape(), volume.spacing, volume.origin_mm, volume.data.storage(), false);
    return;
  }
  Archive a;
  a.set_meta("kind", "volume");
  a.set_meta("spacing", spacing_string(volume.spacing));
  a.put("image", volume.data, DType::F64);
  if (volume.origin_mm) a.put("origin", Tensor({3}, {(*volume.origin_mm)[0], (*volume.origin_mm)[1], (*volume.origin_mm)[2]}));
  if (labels) {
    std::vector<double> vals(labels->labels.begin(), labels->labels.end());
    a.set_meta("num_classes", std::to_string(labels->num_classes));
    a.put("label", Tensor({labels->shape[0], labels->shape[1], labels->shape[2]}, std::move(vals)), DType::I32);
  }
  a.write(path);
}

void save_label_map(const std::filesystem::path& path, const data::LabelMap& labels) {
  data::require_valid_spacing(labels.spacing, "save_label_map");
  std::vector<double> vals(labels.labels.begin(), labels.labels.end());
  if (is_nifti_path(path)) {
    write_nifti(path, labels.shape, labels.spacing, std::nullopt, vals, true);
    return;
  }
  Archive a;
  a.set_meta("kind", "label_map");
  a.set_meta("spacing", spacing_string(labels.spacing));
  a.set_meta("num_classes", std::to_string(labels.num_classes));
  a.put("label", Tensor({labels.shape[0], labels.shape[1], labels.shape[2]}, std::move(vals)), DType::I32);
  a.write(path);
}

}  // namespace aps::io
