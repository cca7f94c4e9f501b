#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "autoprosam/app/run_config.hpp"
#include "autoprosam/core/errors.hpp"

using namespace aps;
namespace fs = std::filesystem;

#ifndef APS_SOURCE_DIR
#error "APS_SOURCE_DIR must point at the source tree"
#endif

TEST_CASE("the effective config dump reloads to the same config") {
  const auto cfg = app::load_run_config(fs::path(APS_SOURCE_DIR) / "configs" / "desk_sphere.json");
  const io::Json dumped = app::to_json(cfg);
  const auto again = app::run_config_from_json(dumped);
  CHECK(app::to_json(again) == dumped);
  CHECK(again.window.patch_size == cfg.window.patch_size);
  CHECK(again.optim.patch_size == cfg.optim.patch_size);
  CHECK(again.model.decoder.num_classes == 1);
  CHECK(again.manifest == cfg.manifest);
  CHECK(cfg.manifest.is_absolute());
}

TEST_CASE("run config errors name the offending field") {
  io::Json j = app::to_json(app::load_run_config(fs::path(APS_SOURCE_DIR) / "configs" / "desk_sphere.json"));
  auto expect_field = [](io::Json bad, const char* field) {
    try {
      (void)app::run_config_from_json(bad);
      FAIL("accepted a bad config");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  auto a = j;
  a["eval"]["nsd_tolerance_mm"] = io::Json::array({0.0});
  expect_field(a, "nsd_tolerance_mm");
  auto b = j;
  b["freeze_policy"] = "some";
  expect_field(b, "freeze_policy");
  auto c = j;
  c["unexpected_key"] = 1;
  expect_field(c, "unexpected_key");
}

TEST_CASE("synth config round-trips and validates") {
  std::ifstream f(fs::path(APS_SOURCE_DIR) / "configs" / "desk_sphere_synth.json");
  const auto sc = app::synth_config_from_json(io::Json::parse(f));
  CHECK(sc.cases == 6);
  CHECK(app::to_json(app::synth_config_from_json(app::to_json(sc))) == app::to_json(sc));
  auto bad = app::to_json(sc);
  bad["format"] = "png";
  CHECK_THROWS_AS(app::synth_config_from_json(bad), ConfigError);
  bad = app::to_json(sc);
  bad["train_cases"] = 7;
  CHECK_THROWS_AS(app::synth_config_from_json(bad), ConfigError);
}
