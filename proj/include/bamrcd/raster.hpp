#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bamrcd/error.hpp"
#include "bamrcd/grid.hpp"

namespace bamrcd {

enum class Sensor { S2, MODIS };

inline std::string_view to_string(Sensor s) { return s == Sensor::S2 ? "S2" : "MODIS"; }

inline Sensor sensor_from_string(std::string_view s) {
  if (s == "S2" || s == "s2" || s == "sentinel2") return Sensor::S2;
  if (s == "MODIS" || s == "modis") return Sensor::MODIS;
  fail(ErrorKind::schema, "unknown sensor '" + std::string(s) + "'");
}

struct BandSpec {
  Sensor sensor = Sensor::S2;
  std::string name;
  double central_wavelength_nm = 0.0;

  friend bool operator==(const BandSpec&, const BandSpec&) = default;
};

/// The 13 Sentinel-2 MSI bands (S2A central wavelengths).
inline std::vector<BandSpec> sentinel2_bands() {
  const std::pair<const char*, double> table[] = {
      {"B01", 442.7},  {"B02", 492.4},  {"B03", 559.8}, {"B04", 664.6}, {"B05", 704.1},
      {"B06", 740.5},  {"B07", 782.8},  {"B08", 832.8}, {"B8A", 864.7}, {"B09", 945.1},
      {"B10", 1373.5}, {"B11", 1613.7}, {"B12", 2202.4}};
  std::vector<BandSpec> out;
  for (auto& [name, wl] : table) out.push_back({Sensor::S2, name, wl});
  return out;
}

/// The 7 MODIS land surface reflectance bands (MOD09GA).
inline std::vector<BandSpec> modis_bands() {
  const std::pair<const char*, double> table[] = {{"B01", 645.0},  {"B02", 858.5},
                                                  {"B03", 469.0},  {"B04", 555.0},
                                                  {"B05", 1240.0}, {"B06", 1640.0},
                                                  {"B07", 2130.0}};
  std::vector<BandSpec> out;
  for (auto& [name, wl] : table) out.push_back({Sensor::MODIS, name, wl});
  return out;
}

inline std::vector<BandSpec> standard_bands(Sensor s) {
  return s == Sensor::S2 ? sentinel2_bands() : modis_bands();
}

inline std::optional<int> find_band(const std::vector<BandSpec>& bands, std::string_view name) {
  for (std::size_t i = 0; i < bands.size(); ++i)
    if (bands[i].name == name) return static_cast<int>(i);
  return std::nullopt;
}

inline void validate_bands(const std::vector<BandSpec>& bands, bool unique_names = true) {
  for (std::size_t i = 0; i < bands.size(); ++i) {
    require(bands[i].central_wavelength_nm > 0, ErrorKind::schema,
            "band " + bands[i].name + " has non-positive wavelength");
    if (!unique_names) continue;
    for (std::size_t j = 0; j < i; ++j)
      require(!(bands[i].sensor == bands[j].sensor && bands[i].name == bands[j].name),
              ErrorKind::schema, "duplicate band " + bands[i].name);
  }
}

struct Raster {
  Image data;
  double gsd_m = 0.0;
  std::vector<BandSpec> bands;
  Mask nodata_mask;
  std::string acquisition_date;
  // GDAL-style affine: x = gt[0] + col*gt[1] + row*gt[2]; y = gt[3] + col*gt[4] + row*gt[5].
  std::array<double, 6> geo_transform{0, 1, 0, 0, 0, -1};

  int channels() const { return data.channels(); }
  int rows() const { return data.rows(); }
  int cols() const { return data.cols(); }

  // Common-band subsets repeat MODIS B02, so they validate with unique_names = false.
  void validate(bool unique_names = true) const {
    require(static_cast<int>(bands.size()) == data.channels(), ErrorKind::schema,
            "raster band list length does not match channel count");
    require(gsd_m > 0, ErrorKind::schema, "raster gsd must be positive");
    require(nodata_mask.rows() == data.rows() && nodata_mask.cols() == data.cols(),
            ErrorKind::schema, "nodata mask shape differs from raster");
    validate_bands(bands, unique_names);
  }
};

inline Raster make_raster(Image data, double gsd_m, std::vector<BandSpec> bands,
                          std::string date = {}) {
  Raster r;
  r.nodata_mask = Mask(1, data.rows(), data.cols(), 0);
  r.data = std::move(data);
  r.gsd_m = gsd_m;
  r.bands = std::move(bands);
  r.acquisition_date = std::move(date);
  r.geo_transform = {0, gsd_m, 0, 0, 0, -gsd_m};
  return r;
}

/// Fraction of flagged pixels in a nodata mask.
inline double invalid_fraction(const Mask& m) {
  if (m.empty()) return 0.0;
  return static_cast<double>(count_positive(m)) / static_cast<double>(m.size());
}

/// Nearest-neighbour resampling onto a grid of `target_gsd_m`.
inline Raster resample_nearest(const Raster& r, double target_gsd_m) {
  require(target_gsd_m > 0, ErrorKind::invalid_argument, "target gsd must be positive");
  require(r.gsd_m > 0, ErrorKind::invalid_argument, "source gsd must be positive");
  const double ratio = r.gsd_m / target_gsd_m;
  const int out_h = static_cast<int>(std::lround(r.rows() * ratio));
  const int out_w = static_cast<int>(std::lround(r.cols() * ratio));
  require(out_h > 0 && out_w > 0, ErrorKind::invalid_argument,
          "resampling yields a degenerate output grid");

  auto source_index = [&](int i, int limit) {
    // output pixel centre mapped back into input pixel units
    const double src = (i + 0.5) * target_gsd_m / r.gsd_m;
    int k = static_cast<int>(std::floor(src));
    return std::clamp(k, 0, limit - 1);
  };
  std::vector<int> src_rows(out_h), src_cols(out_w);
  for (int i = 0; i < out_h; ++i) src_rows[i] = source_index(i, r.rows());
  for (int j = 0; j < out_w; ++j) src_cols[j] = source_index(j, r.cols());

  Raster out;
  out.data = Image(r.channels(), out_h, out_w);
  out.nodata_mask = Mask(1, out_h, out_w, 0);
  for (int c = 0; c < r.channels(); ++c)
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) out.data.at(c, i, j) = r.data.at(c, src_rows[i], src_cols[j]);
  if (!r.nodata_mask.empty())
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) out.nodata_mask(i, j) = r.nodata_mask(src_rows[i], src_cols[j]);
  out.gsd_m = target_gsd_m;
  out.bands = r.bands;
  out.acquisition_date = r.acquisition_date;
  out.geo_transform = r.geo_transform;
  const double scale = target_gsd_m / r.gsd_m;
  out.geo_transform[1] *= scale;
  out.geo_transform[2] *= scale;
  out.geo_transform[4] *= scale;
  out.geo_transform[5] *= scale;
  return out;
}

inline Raster select_bands(const Raster& r, const std::vector<std::string>& names) {
  Raster out = r;
  out.data = Image(static_cast<int>(names.size()), r.rows(), r.cols());
  out.bands.clear();
  for (std::size_t k = 0; k < names.size(); ++k) {
    auto idx = find_band(r.bands, names[k]);
    require(idx.has_value(), ErrorKind::schema,
            "missing band " + names[k] + " in " + std::string(to_string(
                r.bands.empty() ? Sensor::S2 : r.bands.front().sensor)) + " raster");
    auto src = r.data.plane(*idx);
    auto dst = out.data.plane(static_cast<int>(k));
    std::copy(src.begin(), src.end(), dst.begin());
    out.bands.push_back(r.bands[*idx]);
  }
  return out;
}

/// Common-band subsets ordered Blue, Green, Red, NIR, NIR, SWIR. MODIS B02 fills both NIR rows.
inline const std::array<std::pair<const char*, const char*>, 6>& common_band_table() {
  static const std::array<std::pair<const char*, const char*>, 6> table = {{
      {"B02", "B03"}, {"B03", "B04"}, {"B04", "B01"},
      {"B08", "B02"}, {"B8A", "B02"}, {"B12", "B07"},
  }};
  return table;
}

inline std::pair<Raster, Raster> align_common_bands(const Raster& s2, const Raster& modis) {
  std::vector<std::string> s2_names, modis_names;
  for (auto& [a, b] : common_band_table()) {
    s2_names.emplace_back(a);
    modis_names.emplace_back(b);
  }
  return {select_bands(s2, s2_names), select_bands(modis, modis_names)};
}

}  // namespace bamrcd
