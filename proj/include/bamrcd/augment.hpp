#pragma once

#include <cmath>
#include <numbers>

#include "bamrcd/error.hpp"
#include "bamrcd/grid.hpp"
#include "bamrcd/patch.hpp"
#include "bamrcd/rng.hpp"

namespace bamrcd {

struct AugmentationConfig {
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double p_rot = 0.5;
  double rot_min_deg = -15.0;
  double rot_max_deg = 15.0;

  void validate() const {
    for (double p : {p_hflip, p_vflip, p_rot})
      require(p >= 0.0 && p <= 1.0, ErrorKind::invalid_argument, "augmentation probabilities must lie in [0, 1]");
    require(rot_min_deg == -rot_max_deg && rot_max_deg >= 0.0 && rot_max_deg < 90.0,
            ErrorKind::invalid_argument, "rotation range must be symmetric and within (-90, 90)");
  }

  static AugmentationConfig none() { return {0.0, 0.0, 0.0, 0.0, 0.0}; }
};

struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  bool rotate = false;
  double angle_deg = 0.0;
};

/// Three independent coins then one angle; the angle is always drawn so the stream
/// consumption does not depend on the coin outcomes.
inline AugmentDraw draw_augmentation(Rng& rng, const AugmentationConfig& cfg) {
  AugmentDraw d;
  d.hflip = rng.bernoulli(cfg.p_hflip);
  d.vflip = rng.bernoulli(cfg.p_vflip);
  d.rotate = rng.bernoulli(cfg.p_rot);
  d.angle_deg = rng.uniform(cfg.rot_min_deg, cfg.rot_max_deg);
  return d;
}

namespace augment_detail {

// Mirror about the edge pixels (..c b | a b c d | c b..).
inline int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Maps an output pixel centre to source continuous coordinates (pixel i spans [i, i+1)).
struct InverseRotation {
  double c, s, cx, cy;
  InverseRotation(double angle_deg, int rows, int cols)
      : c(std::cos(angle_deg * std::numbers::pi / 180.0)),
        s(std::sin(angle_deg * std::numbers::pi / 180.0)),
        cx(cols / 2.0),
        cy(rows / 2.0) {}
  void operator()(int r, int x, double& sr, double& sx) const {
    const double dx = x + 0.5 - cx, dy = r + 0.5 - cy;
    sx = c * dx + s * dy + cx;
    sr = -s * dx + c * dy + cy;
  }
};

}  // namespace augment_detail

/// Bilinear rotation about the image centre with reflect padding.
inline Image rotate_bilinear(const Image& img, double angle_deg) {
  using namespace augment_detail;
  if (angle_deg == 0.0) return img;
  const int H = img.rows(), W = img.cols();
  InverseRotation inv(angle_deg, H, W);
  Image out(img.channels(), H, W);
  for (int r = 0; r < H; ++r)
    for (int x = 0; x < W; ++x) {
      double sr, sx;
      inv(r, x, sr, sx);
      const double fy = sr - 0.5, fx = sx - 0.5;
      const int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
      const double ay = fy - y0, ax = fx - x0;
      const int ya = reflect(y0, H), yb = reflect(y0 + 1, H);
      const int xa = reflect(x0, W), xb = reflect(x0 + 1, W);
      for (int ch = 0; ch < img.channels(); ++ch) {
        const double v = (1 - ay) * ((1 - ax) * img.at(ch, ya, xa) + ax * img.at(ch, ya, xb)) +
                         ay * ((1 - ax) * img.at(ch, yb, xa) + ax * img.at(ch, yb, xb));
        out.at(ch, r, x) = static_cast<float>(v);
      }
    }
  return out;
}

/// Nearest-neighbour rotation, output re-binarised.
inline Mask rotate_nearest(const Mask& m, double angle_deg) {
  using namespace augment_detail;
  if (angle_deg == 0.0) return m;
  const int H = m.rows(), W = m.cols();
  InverseRotation inv(angle_deg, H, W);
  Mask out(m.channels(), H, W);
  for (int r = 0; r < H; ++r)
    for (int x = 0; x < W; ++x) {
      double sr, sx;
      inv(r, x, sr, sx);
      const int y = reflect(static_cast<int>(std::floor(sr)), H);
      const int xx = reflect(static_cast<int>(std::floor(sx)), W);
      for (int ch = 0; ch < m.channels(); ++ch) out.at(ch, r, x) = m.at(ch, y, xx) ? 1 : 0;
    }
  return out;
}

/// Applies one geometric draw to every raster of the sample. Rotation re-derives label_lr from
/// the rotated HR label; flips act on label_lr directly.
inline PatchSample apply_augmentation(PatchSample p, const AugmentDraw& d, bool soft_lr_labels = false) {
  if (d.hflip) {
    p.hr_pre = flip_horizontal(p.hr_pre);
    p.lr_pre = flip_horizontal(p.lr_pre);
    p.lr_post = flip_horizontal(p.lr_post);
    p.label_hr = flip_horizontal(p.label_hr);
    p.label_lr = flip_horizontal(p.label_lr);
  }
  if (d.vflip) {
    p.hr_pre = flip_vertical(p.hr_pre);
    p.lr_pre = flip_vertical(p.lr_pre);
    p.lr_post = flip_vertical(p.lr_post);
    p.label_hr = flip_vertical(p.label_hr);
    p.label_lr = flip_vertical(p.label_lr);
  }
  if (d.rotate && d.angle_deg != 0.0) {
    const int s = p.scale();
    p.hr_pre = rotate_bilinear(p.hr_pre, d.angle_deg);
    p.lr_pre = rotate_bilinear(p.lr_pre, d.angle_deg);
    p.lr_post = rotate_bilinear(p.lr_post, d.angle_deg);
    p.label_hr = rotate_nearest(p.label_hr, d.angle_deg);
    p.label_lr = soft_lr_labels ? downsample_label_soft(p.label_hr, s) : mask_to_image(downsample_label(p.label_hr, s));
  }
  return p;
}

inline PatchSample augment(const PatchSample& p, Rng& rng, const AugmentationConfig& cfg,
                           bool soft_lr_labels = false) {
  return apply_augmentation(p, draw_augmentation(rng, cfg), soft_lr_labels);
}

}  // namespace bamrcd
