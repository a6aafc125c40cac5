#pragma once

// Scene preparation: GeoTIFF scenes -> common grid -> tiles -> filter -> event split ->
// per-split negative sampling -> archive.
//
// Event list (JSON):
//   {"events": [{"event_id": "...", "year": 2021, "burnt_area_ha": 120.0,
//                "hr_pre": "s2_pre.tif", "lr_pre": "modis_pre.tif", "lr_post": "modis_post.tif",
//                "label": "label.tif", "t1_date": "2021-07-01", "t2_date": "2021-07-20",
//                "hr_gsd_m": 10, "lr_gsd_m": 500}]}
// Paths are relative to the list file. GSDs are optional when the GeoTIFF carries a pixel scale.
// Band identity comes from a "<image>.bands.json" sidecar ({"sensor": "S2", "bands": [...]}) or,
// failing that, from the sensor's standard band order when the band count matches.

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "bamrcd/archive.hpp"
#include "bamrcd/error.hpp"
#include "bamrcd/geotiff.hpp"
#include "bamrcd/patch.hpp"
#include "bamrcd/raster.hpp"
#include "bamrcd/rng.hpp"

namespace bamrcd {

struct EventScene {
  EventRecord record;
  fs::path hr_pre, lr_pre, lr_post, label;
  std::string t1_date, t2_date;
  std::optional<double> hr_gsd_m, lr_gsd_m;
};

struct PrepareOptions {
  double hr_gsd_m = 60.0;
  int s = 8;
  TileOptions tile;
  FilterOptions filter;
  SplitFractions fractions;
  double negative_ratio = 1.0;
  std::uint64_t seed = 0;
  bool common_bands = false;  // keep only the S2/MODIS shared bands
};

struct PrepareResult {
  std::vector<PatchSample> patches;
  SplitManifest manifest;
  std::map<std::string, int> tiles_per_event;
  int n_tiled = 0, n_filtered = 0;
};

inline std::vector<EventScene> read_event_list(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::schema, "cannot parse event list " + path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  std::vector<EventScene> out;
  try {
    for (const auto& e : j.at("events")) {
      EventScene ev;
      ev.record.event_id = e.at("event_id").get<std::string>();
      ev.record.year = e.value("year", 0);
      ev.record.burnt_area_ha = e.at("burnt_area_ha").get<double>();
      ev.hr_pre = base / e.at("hr_pre").get<std::string>();
      ev.lr_pre = base / e.at("lr_pre").get<std::string>();
      ev.lr_post = base / e.at("lr_post").get<std::string>();
      ev.label = base / e.at("label").get<std::string>();
      ev.t1_date = e.value("t1_date", std::string{});
      ev.t2_date = e.value("t2_date", std::string{});
      if (e.contains("hr_gsd_m")) ev.hr_gsd_m = e["hr_gsd_m"].get<double>();
      if (e.contains("lr_gsd_m")) ev.lr_gsd_m = e["lr_gsd_m"].get<double>();
      out.push_back(std::move(ev));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::schema, "malformed event list " + path.string() + ": " + e.what());
  }
  return out;
}

inline std::vector<BandSpec> resolve_bands(const fs::path& image, Sensor sensor, int channels) {
  fs::path side = image;
  side += ".bands.json";
  if (fs::exists(side)) {
    try {
      const auto j = json::parse(read_text_file(side));
      const Sensor sn = sensor_from_string(j.value("sensor", std::string(to_string(sensor))));
      std::vector<BandSpec> bands;
      for (const auto& name : j.at("bands")) {
        const auto n = name.get<std::string>();
        const auto std_bands = standard_bands(sn);
        const auto idx = find_band(std_bands, n);
        if (!idx) fail(ErrorKind::schema, "unknown " + std::string(to_string(sn)) + " band " + n + " in " + side.string());
        bands.push_back(std_bands[*idx]);
      }
      if (static_cast<int>(bands.size()) != channels)
        fail(ErrorKind::schema, side.string() + " lists " + std::to_string(bands.size()) + " bands but " +
                                    image.string() + " has " + std::to_string(channels));
      return bands;
    } catch (const json::exception& e) {
      fail(ErrorKind::schema, "malformed band sidecar " + side.string() + ": " + e.what());
    }
  }
  auto bands = standard_bands(sensor);
  if (static_cast<int>(bands.size()) != channels)
    fail(ErrorKind::schema, image.string() + " has " + std::to_string(channels) + " bands; expected " +
                                std::to_string(bands.size()) + " " + std::string(to_string(sensor)) +
                                " bands or a .bands.json sidecar");
  return bands;
}

inline double pixel_gsd(const tiff::GeoImage& g, const std::optional<double>& fallback, const fs::path& p) {
  if (fallback) return *fallback;
  if (g.has_geo) {
    const double gx = std::hypot(g.geo_transform[1], g.geo_transform[4]);
    if (gx > 0) return gx;
  }
  fail(ErrorKind::schema, p.string() + " carries no pixel scale and no gsd was given");
}

inline Raster load_raster(const fs::path& p, Sensor sensor, const std::optional<double>& gsd,
                          const std::string& date) {
  auto g = tiff::read(p.string());
  Raster r;
  r.bands = resolve_bands(p, sensor, g.data.channels());
  r.gsd_m = pixel_gsd(g, gsd, p);
  r.acquisition_date = date;
  if (g.has_geo) r.geo_transform = g.geo_transform;
  r.nodata_mask = Mask(1, g.data.rows(), g.data.cols(), 0);
  for (int y = 0; y < g.data.rows(); ++y)
    for (int x = 0; x < g.data.cols(); ++x)
      for (int c = 0; c < g.data.channels(); ++c) {
        const float v = g.data.at(c, y, x);
        if (!std::isfinite(v) || (g.nodata && v == static_cast<float>(*g.nodata))) {
          r.nodata_mask(y, x) = 1;
          break;
        }
      }
  for (auto& v : g.data.data())
    if (!std::isfinite(v)) v = 0.0f;
  r.data = std::move(g.data);
  r.validate();
  return r;
}

inline Mask load_label(const fs::path& p, const std::optional<double>& gsd, double& gsd_out) {
  auto g = tiff::read(p.string());
  require(g.data.channels() == 1, ErrorKind::schema, "label " + p.string() + " must be single-band");
  gsd_out = pixel_gsd(g, gsd, p);
  Mask m(1, g.data.rows(), g.data.cols(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const float v = g.data.data()[i];
    m.data()[i] = std::isfinite(v) && v > 0.5f && !(g.nodata && v == static_cast<float>(*g.nodata)) ? 1 : 0;
  }
  return m;
}

inline Mask resample_mask(const Mask& m, double gsd, double target) {
  Raster r = make_raster(mask_to_image(m), gsd, {BandSpec{Sensor::S2, "label", 1.0}});
  return image_to_mask(resample_nearest(r, target).data);
}

// Rounding in resampling can leave a grid one pixel off the target; larger gaps are misregistration.
inline Raster fit_grid(const Raster& r, int rows, int cols, const std::string& what) {
  require(std::abs(r.rows() - rows) <= 1 && std::abs(r.cols() - cols) <= 1, ErrorKind::alignment,
          what + " grid " + std::to_string(r.rows()) + "x" + std::to_string(r.cols()) + " does not cover " +
              std::to_string(rows) + "x" + std::to_string(cols));
  if (r.rows() == rows && r.cols() == cols) return r;
  Raster out = r;
  out.data = Image(r.channels(), rows, cols);
  out.nodata_mask = Mask(1, rows, cols, 0);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      const int sy = std::min(y, r.rows() - 1), sx = std::min(x, r.cols() - 1);
      for (int c = 0; c < r.channels(); ++c) out.data.at(c, y, x) = r.data.at(c, sy, sx);
      out.nodata_mask(y, x) = r.nodata_mask.empty() ? 0 : r.nodata_mask(sy, sx);
    }
  return out;
}

inline PrepareResult prepare_scenes(const std::vector<EventScene>& events, const PrepareOptions& opt) {
  require(opt.tile.s == opt.s, ErrorKind::invalid_argument, "tile scale factor must match s");
  const double lr_gsd = opt.hr_gsd_m * opt.s;
  PrepareResult res;
  std::vector<EventRecord> records;
  std::vector<PatchSample> all;
  for (const auto& ev : events) {
    records.push_back(ev.record);
    Raster hr = load_raster(ev.hr_pre, Sensor::S2, ev.hr_gsd_m, ev.t1_date);
    Raster a = load_raster(ev.lr_pre, Sensor::MODIS, ev.lr_gsd_m, ev.t1_date);
    Raster b = load_raster(ev.lr_post, Sensor::MODIS, ev.lr_gsd_m, ev.t2_date);
    double label_gsd = 0;
    Mask label = load_label(ev.label, ev.hr_gsd_m, label_gsd);
    if (opt.common_bands) {
      auto [hr_c, a_c] = align_common_bands(hr, a);
      Raster b_c = align_common_bands(hr, b).second;
      hr = std::move(hr_c);
      a = std::move(a_c);
      b = std::move(b_c);
    }
    hr = resample_nearest(hr, opt.hr_gsd_m);
    const int lr_rows = hr.rows() / opt.s, lr_cols = hr.cols() / opt.s;
    a = fit_grid(resample_nearest(a, lr_gsd), lr_rows, lr_cols, "LR pre-fire (" + ev.record.event_id + ")");
    b = fit_grid(resample_nearest(b, lr_gsd), lr_rows, lr_cols, "LR post-fire (" + ev.record.event_id + ")");
    label = resample_mask(label, label_gsd, opt.hr_gsd_m);
    require(std::abs(label.rows() - hr.rows()) <= 1 && std::abs(label.cols() - hr.cols()) <= 1,
            ErrorKind::alignment, "label grid does not match the HR grid for event " + ev.record.event_id);
    if (label.rows() != hr.rows() || label.cols() != hr.cols()) {
      Mask fitted(1, hr.rows(), hr.cols(), 0);
      for (int y = 0; y < hr.rows(); ++y)
        for (int x = 0; x < hr.cols(); ++x)
          fitted(y, x) = label(std::min(y, label.rows() - 1), std::min(x, label.cols() - 1));
      label = std::move(fitted);
    }
    auto tiles = tile_patches(hr, a, b, label, ev.record.event_id, opt.tile);
    for (auto& t : tiles) t.burnt_area_ha = ev.record.burnt_area_ha;
    res.tiles_per_event[ev.record.event_id] = static_cast<int>(tiles.size());
    res.n_tiled += static_cast<int>(tiles.size());
    for (auto& t : tiles) all.push_back(std::move(t));
  }
  all = filter_patches(std::move(all), opt.filter);
  res.n_filtered = res.n_tiled - static_cast<int>(all.size());
  res.manifest = split_by_event(records, opt.fractions, opt.seed);

  // negatives are sampled inside each split so the 1:1 ratio holds per split
  for (Split s : {Split::train, Split::val, Split::test}) {
    auto part = patches_in_split(all, res.manifest, s);
    part = sample_negatives(std::move(part), opt.negative_ratio, mix_seed(opt.seed, {static_cast<std::uint64_t>(s)}));
    for (auto& p : part) res.patches.push_back(std::move(p));
  }
  count_patches(res.manifest, res.patches);
  return res;
}

}  // namespace bamrcd
