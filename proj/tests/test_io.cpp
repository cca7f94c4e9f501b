#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "autoprosam/core/errors.hpp"
#include "autoprosam/io/archive.hpp"
#include "autoprosam/io/volume_io.hpp"
#include "support.hpp"

using namespace aps;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "aps_test_io";
  fs::create_directories(dir);
  return dir / name;
}

data::Volume ramp_volume() {
  data::Volume v({5, 4, 3}, {2.5, 0.75, 1.25});
  for (std::int64_t i = 0; i < v.data.numel(); ++i) v.data[i] = static_cast<double>(i) * 0.5 - 7.0;
  return v;
}

}  // namespace

TEST_CASE("archive round-trips entries, flags and metadata") {
  io::Archive a;
  a.put("encoder.block0.attn.qkv.weight", aps::testing::random_tensor({6, 2}, 1), io::DType::F64, true);
  a.put("scalar", Tensor({}, 3.25), io::DType::F64, false);
  a.put("labels", Tensor({4}, std::vector<double>{0, 1, 2, 3}), io::DType::I32, false);
  a.put("mask", Tensor({3}, std::vector<double>{0, 1, 255}), io::DType::U8, false);
  a.set_meta("epoch", "7");
  const auto path = scratch("roundtrip.aps");
  a.write(path);
  const auto b = io::Archive::read(path);
  CHECK(a == b);
  CHECK(b.get("encoder.block0.attn.qkv.weight").frozen);
  CHECK(b.meta("epoch") == std::optional<std::string>("7"));
  CHECK(b.manifest() == a.manifest());
}

TEST_CASE("archive rejects duplicate and malformed names") {
  io::Archive a;
  a.put("x", Tensor({1}));
  CHECK_THROWS_AS(a.put("x", Tensor({1})), ContractError);
  CHECK_THROWS_AS(a.put("has space", Tensor({1})), ContractError);
}

TEST_CASE("truncated archive payload is a data error") {
  io::Archive a;
  a.put("w", aps::testing::random_tensor({16}, 2));
  const auto path = scratch("truncated.aps");
  a.write(path);
  fs::resize_file(path, fs::file_size(path) - 8);
  CHECK_THROWS_AS(io::Archive::read(path), DataError);
}

TEST_CASE("raw volume format round-trips data, spacing and labels") {
  const auto v = ramp_volume();
  data::LabelMap l(v.shape(), 2, v.spacing);
  l.at(1, 2, 0) = 2;
  l.at(4, 3, 2) = 1;
  const auto path = scratch("case.aps");
  io::save_volume(path, v, &l);
  auto [v2, l2] = io::load_volume(path);
  CHECK(v2.data == v.data);
  CHECK(v2.spacing == v.spacing);
  REQUIRE(l2.has_value());
  CHECK(l2->labels == l.labels);
}

TEST_CASE("NIfTI round-trips through plain and gzip files") {
  const auto v = ramp_volume();
  for (const char* name : {"case.nii", "case.nii.gz"}) {
    const auto path = scratch(name);
    io::save_volume(path, v);
    auto [v2, none] = io::load_volume(path);
    CHECK_FALSE(none.has_value());
    CHECK(v2.shape() == v.shape());
    // images are stored as float32; the ramp values are exactly representable
    CHECK(v2.data == v.data);
    for (std::size_t a = 0; a < 3; ++a) CHECK(v2.spacing[a] == doctest::Approx(v.spacing[a]).epsilon(1e-7));
    CHECK(data::voxel_count(v2.shape()) == data::voxel_count(v.shape()));
  }
  data::LabelMap l(v.shape(), 3, v.spacing);
  l.at(2, 1, 1) = 3;
  const auto lpath = scratch("labels.nii.gz");
  io::save_label_map(lpath, l);
  const auto l2 = io::load_label_map(lpath, 3);
  CHECK(l2.labels == l.labels);
}

TEST_CASE("zero spacing in a NIfTI header is rejected by name") {
  const auto path = scratch("zero_spacing.nii");
  io::save_volume(path, ramp_volume());
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    const float zero = 0.0f;
    f.seekp(80);  // pixdim[1]
    f.write(reinterpret_cast<const char*>(&zero), sizeof zero);
  }
  try {
    (void)io::load_volume(path);
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("spacing") != std::string::npos);
  }
}

TEST_CASE("corrupt NIfTI header names the offending field") {
  const auto path = scratch("bad_header.nii");
  io::save_volume(path, ramp_volume());
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    const std::int32_t bogus = 1234;
    f.seekp(0);  // sizeof_hdr
    f.write(reinterpret_cast<const char*>(&bogus), sizeof bogus);
  }
  CHECK_THROWS_AS(io::load_volume(path), DataError);
}
