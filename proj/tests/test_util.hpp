#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <unistd.h>

#include <json.hpp>

#include "bamrcd/archive.hpp"
#include "bamrcd/geotiff.hpp"
#include "bamrcd/grid.hpp"
#include "bamrcd/rng.hpp"

namespace test {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("bamrcd_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline bamrcd::Mask random_mask(bamrcd::Rng& rng, int rows, int cols, double p) {
  bamrcd::Mask m(1, rows, cols, 0);
  for (auto& v : m.data()) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

// Toy GeoTIFF events: HR S2 at 60 m (pixel scale in the file), label at 30 m, MODIS at 500 m with
// the spacing given in the event list. One square burn in the top-left tile of each event, or in
// every `burn_tile`-px HR tile when that is set.
inline fs::path write_toy_scenes(const fs::path& dir, int n_events, int size, double area_ha, int burn_tile = 0) {
  using namespace bamrcd;
  nlohmann::json events = nlohmann::json::array();
  Rng rng(17);
  for (int e = 0; e < n_events; ++e) {
    const std::string id = "ev" + std::to_string(e);
    tiff::GeoImage hr;
    hr.data = Image(13, size, size);
    for (auto& v : hr.data.data()) v = static_cast<float>(rng.uniform(0, 0.3));
    hr.has_geo = true;
    hr.geo_transform = {400000, 60, 0, 4500000, 0, -60};
    tiff::write((dir / (id + "_hr_pre.tif")).string(), hr);

    const int lr = static_cast<int>(std::lround(size * 60.0 / 500.0));
    for (const char* which : {"pre", "post"}) {
      tiff::GeoImage m;
      m.data = Image(7, lr, lr);
      for (auto& v : m.data.data()) v = static_cast<float>(rng.uniform(0, 0.3));
      tiff::write((dir / (id + "_lr_" + which + ".tif")).string(), m);
    }

    tiff::GeoImage label;
    label.data = Image(1, 2 * size, 2 * size, 0);
    const int step = burn_tile > 0 ? 2 * burn_tile : 4 * size;
    for (int ty = 0; ty < 2 * size; ty += step)
      for (int tx = 0; tx < 2 * size; tx += step)
        for (int y = 20; y < 80; ++y)
          for (int x = 20; x < 80; ++x) label.data(ty + y, tx + x) = 1;
    label.has_geo = true;
    label.geo_transform = {400000, 30, 0, 4500000, 0, -30};
    tiff::write((dir / (id + "_label.tif")).string(), label, tiff::SampleType::u8);

    events.push_back({{"event_id", id},
                      {"year", 2021},
                      {"burnt_area_ha", area_ha},
                      {"hr_pre", id + "_hr_pre.tif"},
                      {"lr_pre", id + "_lr_pre.tif"},
                      {"lr_post", id + "_lr_post.tif"},
                      {"label", id + "_label.tif"},
                      {"t1_date", "2021-07-01"},
                      {"t2_date", "2021-07-20"},
                      {"lr_gsd_m", 500}});
  }
  const auto list = dir / "events.json";
  write_text_file(list, nlohmann::json{{"events", events}}.dump(2));
  return list;
}

}  // namespace test
