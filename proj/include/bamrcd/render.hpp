#pragma once

// Error overlays and FP/FN ratio plots as 8-bit RGBA PNG.
// Overlay colours: TP white, FN red, FP green. The false-colour background is scaled into
// [0, kBackgroundMax] per channel so it never produces one of the three pure overlay colours.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "bamrcd/archive.hpp"
#include "bamrcd/error.hpp"
#include "bamrcd/grid.hpp"
#include "bamrcd/metrics.hpp"

namespace bamrcd {

struct Rgba {
  std::uint8_t r = 0, g = 0, b = 0, a = 255;
  friend bool operator==(const Rgba&, const Rgba&) = default;
};

inline constexpr Rgba kTpColour{255, 255, 255, 255};
inline constexpr Rgba kFnColour{255, 0, 0, 255};
inline constexpr Rgba kFpColour{0, 255, 0, 255};
inline constexpr int kBackgroundMax = 200;

struct RgbaImage {
  int width = 0, height = 0;
  std::vector<Rgba> pixels;

  RgbaImage() = default;
  RgbaImage(int w, int h, Rgba fill = {}) : width(w), height(h), pixels(std::size_t(w) * h, fill) {}
  Rgba& at(int y, int x) { return pixels[std::size_t(y) * width + x]; }
  const Rgba& at(int y, int x) const { return pixels[std::size_t(y) * width + x]; }
};

namespace png_detail {

struct File {
  std::FILE* f = nullptr;
  ~File() {
    if (f) std::fclose(f);
  }
};

[[noreturn]] inline void on_error(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  *what = msg;
  png_longjmp(png, 1);
}

inline void on_warning(png_structp, png_const_charp) {}

}  // namespace png_detail

inline void write_png(const fs::path& path, const RgbaImage& img) {
  require(img.width > 0 && img.height > 0, ErrorKind::invalid_argument, "cannot write an empty image");
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  png_detail::File file{std::fopen(path.string().c_str(), "wb")};
  if (!file.f) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");

  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_detail::on_error, png_detail::on_warning);
  if (!png) fail(ErrorKind::io, "libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(img.height);
  auto* base = reinterpret_cast<png_bytep>(const_cast<Rgba*>(img.pixels.data()));
  for (int y = 0; y < img.height; ++y) rows[y] = base + std::size_t(y) * img.width * 4;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::io, "writing " + path.string() + ": " + err);
  }
  png_init_io(png, file.f);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.f) != 0) fail(ErrorKind::io, "writing " + path.string() + " failed");
}

inline RgbaImage read_png(const fs::path& path) {
  png_detail::File file{std::fopen(path.string().c_str(), "rb")};
  if (!file.f) fail(ErrorKind::io, "cannot open " + path.string());
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_detail::on_error, png_detail::on_warning);
  if (!png) fail(ErrorKind::io, "libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  RgbaImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::integrity, "reading " + path.string() + ": " + err);
  }
  png_init_io(png, file.f);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_gray_to_rgb(png);
  png_set_add_alpha(png, 0xff, PNG_FILLER_AFTER);
  png_read_update_info(png, info);
  img = RgbaImage(static_cast<int>(png_get_image_width(png, info)), static_cast<int>(png_get_image_height(png, info)));
  rows.resize(img.height);
  auto* base = reinterpret_cast<png_bytep>(img.pixels.data());
  for (int y = 0; y < img.height; ++y) rows[y] = base + std::size_t(y) * img.width * 4;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

/// NIR-Red-Green channel indices for the band layouts this project produces.
inline std::array<int, 3> default_composite(int channels) {
  switch (channels) {
    case 13: return {7, 3, 2};  // S2: B08, B04, B03
    case 7: return {1, 0, 3};   // MODIS: B02, B01, B04
    case 6: return {3, 2, 1};   // common-band subset
    default: return {0, std::min(1, channels - 1), std::min(2, channels - 1)};
  }
}

struct OverlayOptions {
  bool background = true;  // false: TN pixels fully transparent
  std::array<int, 3> composite{-1, -1, -1};
  double low_percentile = 0.02, high_percentile = 0.98;
};

inline std::vector<float> percentile_range(std::span<const float> v, double lo, double hi) {
  std::vector<float> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  auto q = [&](double p) { return s[static_cast<std::size_t>(std::lround(p * double(s.size() - 1)))]; };
  return {q(lo), q(hi)};
}

inline RgbaImage false_colour(const Image& img, const OverlayOptions& opt = {}) {
  auto comp = opt.composite[0] < 0 ? default_composite(img.channels()) : opt.composite;
  for (int c : comp)
    require(c >= 0 && c < img.channels(), ErrorKind::invalid_argument, "composite channel out of range");
  RgbaImage out(img.cols(), img.rows());
  for (int k = 0; k < 3; ++k) {
    const auto plane = img.plane(comp[k]);
    const auto r = percentile_range(plane, opt.low_percentile, opt.high_percentile);
    const float span = r[1] > r[0] ? r[1] - r[0] : 1.0f;
    for (int y = 0; y < img.rows(); ++y)
      for (int x = 0; x < img.cols(); ++x) {
        const double t = std::clamp((img.at(comp[k], y, x) - r[0]) / span, 0.0f, 1.0f);
        const auto v = static_cast<std::uint8_t>(std::lround(t * kBackgroundMax));
        auto& px = out.at(y, x);
        (k == 0 ? px.r : k == 1 ? px.g : px.b) = v;
      }
  }
  return out;
}

inline RgbaImage overlay_image(const Image& hr_image, const Mask& pred, const Mask& label,
                               const OverlayOptions& opt = {}) {
  require(pred.same_shape(label), ErrorKind::invalid_argument, "prediction and label shapes differ");
  require(hr_image.rows() == label.rows() && hr_image.cols() == label.cols(), ErrorKind::invalid_argument,
          "image and mask shapes differ");
  RgbaImage out = opt.background ? false_colour(hr_image, opt) : RgbaImage(label.cols(), label.rows(), Rgba{0, 0, 0, 0});
  for (int y = 0; y < label.rows(); ++y)
    for (int x = 0; x < label.cols(); ++x) {
      const bool p = pred(y, x) != 0, l = label(y, x) != 0;
      if (p && l) out.at(y, x) = kTpColour;
      else if (l) out.at(y, x) = kFnColour;
      else if (p) out.at(y, x) = kFpColour;
    }
  return out;
}

inline void render_overlay(const Image& hr_image, const Mask& pred, const Mask& label, const fs::path& path,
                           const OverlayOptions& opt = {}) {
  write_png(path, overlay_image(hr_image, pred, label, opt));
}

/// Confusion counts recovered from overlay colours (TN = everything else).
inline ConfusionCounts overlay_counts(const RgbaImage& img) {
  ConfusionCounts c;
  for (const auto& px : img.pixels) {
    if (px == kTpColour) ++c.tp;
    else if (px == kFnColour) ++c.fn;
    else if (px == kFpColour) ++c.fp;
    else ++c.tn;
  }
  return c;
}

inline std::string ratios_csv(const std::vector<EventRatios>& rows) {
  std::string out = "event_id,fp_ratio,fn_ratio\n";
  char buf[64];
  auto cell = [&](const Metric& m) -> std::string {
    if (!m) return "";
    std::snprintf(buf, sizeof buf, "%.9g", *m);
    return buf;
  };
  for (const auto& r : rows) out += r.event_id + "," + cell(r.fp_ratio) + "," + cell(r.fn_ratio) + "\n";
  return out;
}

struct HistogramOptions {
  int bins = 20;
  int panel_width = 320, panel_height = 200, margin = 10;
};

/// Two side-by-side histograms of per-event ratios: FP (green) left, FN (red) right.
/// Each panel spans [0, max(1, largest value)]; undefined ratios are left out.
inline RgbaImage ratio_histogram(const std::vector<EventRatios>& rows, const HistogramOptions& opt = {}) {
  require(opt.bins > 0 && opt.panel_width > 2 * opt.margin && opt.panel_height > 2 * opt.margin,
          ErrorKind::invalid_argument, "invalid histogram geometry");
  RgbaImage img(2 * opt.panel_width, opt.panel_height, Rgba{255, 255, 255, 255});
  for (int panel = 0; panel < 2; ++panel) {
    std::vector<double> v;
    for (const auto& r : rows) {
      const Metric& m = panel == 0 ? r.fp_ratio : r.fn_ratio;
      if (m) v.push_back(*m);
    }
    double top = 1.0;
    for (double x : v) top = std::max(top, x);
    std::vector<int> counts(opt.bins, 0);
    for (double x : v) counts[std::min(opt.bins - 1, static_cast<int>(x / top * opt.bins))] += 1;
    const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
    const int x0 = panel * opt.panel_width + opt.margin;
    const int plot_w = opt.panel_width - 2 * opt.margin, plot_h = opt.panel_height - 2 * opt.margin;
    const int baseline = opt.panel_height - opt.margin;
    const Rgba bar = panel == 0 ? Rgba{40, 160, 40, 255} : Rgba{200, 40, 40, 255};
    for (int b = 0; b < opt.bins; ++b) {
      const int left = x0 + b * plot_w / opt.bins, right = x0 + (b + 1) * plot_w / opt.bins - 1;
      const int h = counts[b] * plot_h / peak;
      for (int y = baseline - h; y < baseline; ++y)
        for (int x = left; x < right; ++x) img.at(y, x) = bar;
    }
    for (int x = x0; x < x0 + plot_w; ++x) img.at(baseline, x) = Rgba{0, 0, 0, 255};
    for (int y = opt.margin; y <= baseline; ++y) img.at(y, x0) = Rgba{0, 0, 0, 255};
  }
  return img;
}

}  // namespace bamrcd
