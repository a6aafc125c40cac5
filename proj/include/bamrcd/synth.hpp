#pragma once

// Synthetic bitemporal multi-resolution scenes with exact burn masks.
//
// Scenes are piecewise-smooth landcover fields. Burn scars are thresholded smooth blobs
// that only consume the "forest" fuel class, and the fuel class is cleared from a ring
// of width s around every scar, so scar outlines are visible in the pre-fire HR image
// while only the LR post-fire image shows which fuel was burnt.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bamrcd/error.hpp"
#include "bamrcd/grid.hpp"
#include "bamrcd/metrics.hpp"
#include "bamrcd/patch.hpp"
#include "bamrcd/rng.hpp"

namespace bamrcd {

enum class SizeClassTarget { small, medium, large, none };

inline const char* to_string(SizeClassTarget t) {
  switch (t) {
    case SizeClassTarget::small: return "small";
    case SizeClassTarget::medium: return "medium";
    case SizeClassTarget::large: return "large";
    case SizeClassTarget::none: return "none";
  }
  return "none";
}

inline SizeClassTarget size_class_target_from_string(const std::string& s) {
  if (s == "small") return SizeClassTarget::small;
  if (s == "medium") return SizeClassTarget::medium;
  if (s == "large") return SizeClassTarget::large;
  if (s == "none") return SizeClassTarget::none;
  fail(ErrorKind::invalid_argument, "unknown size class '" + s + "'");
}

struct SceneSpec {
  std::uint64_t seed = 0;
  int hr_size = 128;
  int s = 8;
  int n_burns = 1;
  SizeClassTarget size_class_target = SizeClassTarget::medium;
  std::pair<double, double> severity_range{0.6, 1.0};
  double noise_sigma = 0.005;
  double psf_sigma_px = 0.0;  // Gaussian blur before block averaging; 0 disables

  void validate() const {
    require(hr_size > 0 && s > 0 && hr_size % s == 0, ErrorKind::invalid_argument,
            "hr_size must be a positive multiple of s");
    require(n_burns >= 1, ErrorKind::invalid_argument, "n_burns must be >= 1");
    const auto [lo, hi] = severity_range;
    require(lo >= 0 && hi <= 1 && lo <= hi, ErrorKind::invalid_argument,
            "severity range must satisfy 0 <= low <= high <= 1");
    require(noise_sigma >= 0 && psf_sigma_px >= 0, ErrorKind::invalid_argument,
            "noise and psf sigmas must be non-negative");
  }
};

inline constexpr int kS2Bands = 13;
inline constexpr int kModisBands = 7;

namespace synth_detail {

/// Value noise in [0,1] with smoothstep interpolation between lattice points `cell` px apart.
inline std::vector<double> smooth_field(int size, double cell, Rng& rng) {
  const int n = static_cast<int>(std::ceil(size / cell)) + 2;
  std::vector<double> lattice(static_cast<std::size_t>(n) * n);
  for (auto& v : lattice) v = rng.uniform();
  std::vector<double> out(static_cast<std::size_t>(size) * size);
  auto fade = [](double t) { return t * t * (3 - 2 * t); };
  for (int y = 0; y < size; ++y) {
    const double fy = y / cell;
    const int iy = static_cast<int>(fy);
    const double ty = fade(fy - iy);
    for (int x = 0; x < size; ++x) {
      const double fx = x / cell;
      const int ix = static_cast<int>(fx);
      const double tx = fade(fx - ix);
      auto L = [&](int a, int b) { return lattice[static_cast<std::size_t>(a) * n + b]; };
      const double top = L(iy, ix) * (1 - tx) + L(iy, ix + 1) * tx;
      const double bot = L(iy + 1, ix) * (1 - tx) + L(iy + 1, ix + 1) * tx;
      out[static_cast<std::size_t>(y) * size + x] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

inline Mask dilate(const Mask& m, int radius) {
  const int h = m.rows(), w = m.cols();
  Mask tmp(1, h, w, 0), out(1, h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      for (int k = std::max(0, x - radius); k <= std::min(w - 1, x + radius) && !v; ++k) v = m(y, k);
      tmp(y, x) = v;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      for (int k = std::max(0, y - radius); k <= std::min(h - 1, y + radius) && !v; ++k) v = tmp(k, x);
      out(y, x) = v;
    }
  return out;
}

enum Landcover { kForest = 0, kGrass = 1, kSoil = 2, kWater = 3 };

// Surface reflectance per landcover class, Sentinel-2 band order B01..B12 (incl. B8A).
inline const std::array<std::array<double, kS2Bands>, 4>& spectra() {
  static const std::array<std::array<double, kS2Bands>, 4> table = {{
      {0.030, 0.030, 0.050, 0.030, 0.080, 0.220, 0.280, 0.320, 0.340, 0.340, 0.005, 0.160, 0.070},
      {0.050, 0.060, 0.090, 0.080, 0.140, 0.240, 0.270, 0.290, 0.300, 0.300, 0.005, 0.260, 0.150},
      {0.100, 0.120, 0.160, 0.200, 0.220, 0.240, 0.250, 0.270, 0.280, 0.280, 0.006, 0.340, 0.280},
      {0.070, 0.060, 0.050, 0.030, 0.020, 0.015, 0.012, 0.010, 0.010, 0.010, 0.002, 0.005, 0.003},
  }};
  return table;
}

inline constexpr int kRed = 3;
inline constexpr int kNirBands[] = {6, 7, 8};  // B07, B08, B8A
inline constexpr int kSwir1 = 11;
inline constexpr int kSwir2 = 12;

// Reflectance response of a fully burnt pixel (severity 1).
inline constexpr double kNirLoss = 0.7;
inline constexpr double kRedGain = 0.08;
inline constexpr double kSwir1Gain = 0.10;
inline constexpr double kSwir2Gain = 0.15;

}  // namespace synth_detail

/// Inclusive positive-pixel interval realising a size class on a rows x cols mask.
inline std::pair<std::int64_t, std::int64_t> size_class_count_range(SizeClassTarget t, int rows,
                                                                    int cols, int s) {
  const auto [th1, th2] = size_thresholds(rows, cols);
  const auto lo1 = static_cast<std::int64_t>(std::ceil(th1));
  const auto lo2 = static_cast<std::int64_t>(std::ceil(th2));
  switch (t) {
    case SizeClassTarget::small:
      return {std::max<std::int64_t>(1, std::min<std::int64_t>(s * s / 2, lo1 - 1)), lo1 - 1};
    case SizeClassTarget::medium: return {lo1, lo2 - 1};
    case SizeClassTarget::large:
      return {lo2, std::max<std::int64_t>(lo2, static_cast<std::int64_t>(0.4 * rows * cols))};
    case SizeClassTarget::none: return {0, 0};
  }
  return {0, 0};
}

inline bool in_size_class(SizeClassTarget t, std::uint64_t n, int rows, int cols) {
  if (t == SizeClassTarget::none) return n == 0;
  if (n == 0) return false;
  const SizeClass c = size_class(n, rows, cols);
  return (t == SizeClassTarget::small && c == SizeClass::small) ||
         (t == SizeClassTarget::medium && c == SizeClass::medium) ||
         (t == SizeClassTarget::large && c == SizeClass::large);
}

inline Mask gen_burn_mask(const SceneSpec& spec) {
  spec.validate();
  const int n = spec.hr_size;
  if (spec.size_class_target == SizeClassTarget::none) return Mask(1, n, n, 0);
  const auto [k_lo, k_hi] = size_class_count_range(spec.size_class_target, n, n, spec.s);
  require(k_lo >= 1 && k_lo <= k_hi, ErrorKind::generation,
          "size class not realisable on a " + std::to_string(n) + " px mask");

  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng(mix_seed(spec.seed, {0x6d61736bULL, static_cast<std::uint64_t>(attempt)}));
    const auto k = rng.integer(k_lo, k_hi);
    const double base_radius = std::sqrt(static_cast<double>(k) / (M_PI * spec.n_burns));
    std::vector<double> field(static_cast<std::size_t>(n) * n, 0.0);
    for (int b = 0; b < spec.n_burns; ++b) {
      const double cy = rng.uniform(0.2, 0.8) * n, cx = rng.uniform(0.2, 0.8) * n;
      const double ry = base_radius * rng.uniform(0.8, 1.5), rx = base_radius * rng.uniform(0.8, 1.5);
      const double theta = rng.uniform(0, M_PI);
      const double amp = rng.uniform(0.7, 1.0);
      const double ct = std::cos(theta), st = std::sin(theta);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const double dy = y - cy, dx = x - cx;
          const double u = (ct * dx + st * dy) / rx, v = (-st * dx + ct * dy) / ry;
          field[static_cast<std::size_t>(y) * n + x] += amp * std::exp(-0.5 * (u * u + v * v));
        }
    }
    // irregular outlines
    auto rough = synth_detail::smooth_field(n, std::max(4.0, base_radius / 2), rng);
    for (std::size_t i = 0; i < field.size(); ++i) field[i] *= 0.7 + 0.6 * rough[i];

    std::vector<double> sorted = field;
    std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end(), std::greater<>());
    const double threshold = sorted[k - 1];
    if (!(threshold > 0)) continue;
    Mask m(1, n, n, 0);
    for (std::size_t i = 0; i < field.size(); ++i) m.data()[i] = field[i] >= threshold ? 1 : 0;
    if (in_size_class(spec.size_class_target, count_positive(m), n, n)) return m;
  }
  fail(ErrorKind::generation, "no burn mask in class " + std::string(to_string(spec.size_class_target)) +
                                  " after 100 attempts (seed " + std::to_string(spec.seed) + ")");
}

struct BitemporalScene {
  Image hr_pre;
  Image hr_post;
};

inline BitemporalScene render_bitemporal(const SceneSpec& spec, const Mask& mask) {
  using namespace synth_detail;
  spec.validate();
  const int n = spec.hr_size;
  require(mask.rows() == n && mask.cols() == n, ErrorKind::invalid_argument,
          "mask shape does not match the scene spec");
  Rng rng(mix_seed(spec.seed, {0x7363656eULL}));
  auto cover_a = smooth_field(n, n / 4.0, rng);
  auto cover_b = smooth_field(n, n / 6.0, rng);
  auto brightness = smooth_field(n, n / 10.0, rng);
  auto severity = smooth_field(n, n / 5.0, rng);

  const Mask ring = dilate(mask, spec.s);
  std::vector<int> cover(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n * n; ++i) {
    int c = cover_b[i] < 0.15 ? kWater : cover_a[i] > 0.55 ? kForest : cover_a[i] > 0.3 ? kGrass : kSoil;
    if (mask.data()[i]) c = kForest;
    else if (ring.data()[i] && c == kForest) c = kGrass;
    cover[i] = c;
  }

  BitemporalScene out{Image(kS2Bands, n, n), Image(kS2Bands, n, n)};
  const auto& table = spectra();
  for (int b = 0; b < kS2Bands; ++b)
    for (int i = 0; i < n * n; ++i)
      out.hr_pre.data()[static_cast<std::size_t>(b) * n * n + i] =
          static_cast<float>(table[cover[i]][b] * (0.9 + 0.2 * brightness[i]));

  out.hr_post = out.hr_pre;
  const auto [lo, hi] = spec.severity_range;
  for (int i = 0; i < n * n; ++i) {
    if (!mask.data()[i]) continue;
    const double sev = lo + (hi - lo) * severity[i];
    auto px = [&](int band) -> float& { return out.hr_post.data()[static_cast<std::size_t>(band) * n * n + i]; };
    for (int b : kNirBands) px(b) = static_cast<float>(px(b) * (1.0 - kNirLoss * sev));
    px(kRed) = static_cast<float>(px(kRed) + kRedGain * sev);
    px(kSwir1) = static_cast<float>(px(kSwir1) + kSwir1Gain * sev);
    px(kSwir2) = static_cast<float>(px(kSwir2) + kSwir2Gain * sev);
  }
  if (spec.noise_sigma > 0) {
    Rng noise(mix_seed(spec.seed, {0x6e6f6973ULL}));
    for (auto& v : out.hr_post.data()) v = static_cast<float>(v + noise.normal(0, spec.noise_sigma));
  }
  return out;
}

/// For each MODIS band, the Sentinel-2 band indices whose mean it observes.
using BandMap = std::vector<std::vector<int>>;

inline BandMap default_modis_band_map() {
  // MODIS B01..B07 <- S2: B04 | B08,B8A | B02 | B03 | B8A,B11 (1240 nm lies between) | B11 | B12
  return {{3}, {7, 8}, {1}, {2}, {8, 11}, {11}, {12}};
}

inline Image gaussian_blur(const Image& img, double sigma) {
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  Image tmp(img.channels(), img.rows(), img.cols()), out = tmp;
  const int h = img.rows(), w = img.cols();
  auto clampi = [](int v, int n) { return std::clamp(v, 0, n - 1); };
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double a = 0;
        for (int i = -radius; i <= radius; ++i) a += k[i + radius] * img.at(c, y, clampi(x + i, w));
        tmp.at(c, y, x) = static_cast<float>(a);
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double a = 0;
        for (int i = -radius; i <= radius; ++i) a += k[i + radius] * tmp.at(c, clampi(y + i, h), x);
        out.at(c, y, x) = static_cast<float>(a);
      }
  }
  return out;
}

struct DegradeOptions {
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  double psf_sigma_px = 0.0;
};

/// Each LR band is the s x s block mean of its mapped HR bands, plus optional sensor noise.
inline Image degrade_to_lr(const Image& hr, int s, const BandMap& band_map,
                           const DegradeOptions& opt = {}) {
  require(s >= 1 && hr.rows() % s == 0 && hr.cols() % s == 0, ErrorKind::invalid_argument,
          "HR dimensions are not divisible by the scale factor");
  for (const auto& sources : band_map) {
    require(!sources.empty(), ErrorKind::invalid_argument, "empty band map entry");
    for (int b : sources)
      require(b >= 0 && b < hr.channels(), ErrorKind::invalid_argument, "band map index out of range");
  }
  const Image& src = opt.psf_sigma_px > 0 ? gaussian_blur(hr, opt.psf_sigma_px) : hr;
  const int h = hr.rows() / s, w = hr.cols() / s;
  Image out(static_cast<int>(band_map.size()), h, w);
  Rng noise(opt.noise_seed);
  for (std::size_t m = 0; m < band_map.size(); ++m) {
    const auto& sources = band_map[m];
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double acc = 0;
        for (int b : sources)
          for (int r = 0; r < s; ++r)
            for (int c = 0; c < s; ++c) acc += src.at(b, i * s + r, j * s + c);
        double v = acc / (static_cast<double>(s) * s * sources.size());
        if (opt.noise_sigma > 0) v += noise.normal(0, opt.noise_sigma);
        out.at(static_cast<int>(m), i, j) = static_cast<float>(v);
      }
  }
  return out;
}

struct SynthDataset {
  std::vector<PatchSample> patches;
  std::vector<SceneSpec> specs;
};

inline constexpr double kSynthHrGsd = 60.0;

inline SynthDataset make_dataset(int n_pos, int n_neg, const SceneSpec& tmpl, std::uint64_t seed) {
  require(n_pos >= 0 && n_neg >= 0, ErrorKind::invalid_argument, "sample counts must be >= 0");
  tmpl.validate();
  SynthDataset out;
  const BandMap band_map = default_modis_band_map();
  for (int i = 0; i < n_pos + n_neg; ++i) {
    SceneSpec spec = tmpl;
    spec.seed = mix_seed(seed, {static_cast<std::uint64_t>(i)});
    if (i >= n_pos) spec.size_class_target = SizeClassTarget::none;
    else if (spec.size_class_target == SizeClassTarget::none) spec.size_class_target = SizeClassTarget::medium;

    Mask mask = gen_burn_mask(spec);
    auto scene = render_bitemporal(spec, mask);
    DegradeOptions pre_opt{spec.noise_sigma, mix_seed(spec.seed, {1}), spec.psf_sigma_px};
    DegradeOptions post_opt{spec.noise_sigma, mix_seed(spec.seed, {2}), spec.psf_sigma_px};

    char id[32];
    std::snprintf(id, sizeof id, "synth_%04d", i);
    PatchSample p;
    p.event_id = id;
    p.patch_id = std::string(id) + "_p0";
    p.lr_pre = degrade_to_lr(scene.hr_pre, spec.s, band_map, pre_opt);
    p.lr_post = degrade_to_lr(scene.hr_post, spec.s, band_map, post_opt);
    p.hr_pre = std::move(scene.hr_pre);
    p.label_lr = mask_to_image(downsample_label(mask, spec.s));
    p.is_positive = count_positive(mask) > 0;
    p.burnt_area_ha = static_cast<double>(count_positive(mask)) * kSynthHrGsd * kSynthHrGsd / 1e4;
    p.label_hr = std::move(mask);
    p.t1_date = "2021-07-01";
    p.t2_date = "2021-07-20";
    out.patches.push_back(std::move(p));
    out.specs.push_back(spec);
  }
  return out;
}

}  // namespace bamrcd
