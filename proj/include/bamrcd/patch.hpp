#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "bamrcd/error.hpp"
#include "bamrcd/grid.hpp"
#include "bamrcd/raster.hpp"
#include "bamrcd/rng.hpp"

namespace bamrcd {

enum class Split { train, val, test, unassigned };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "unassigned";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "unassigned") return Split::unassigned;
  fail(ErrorKind::invalid_argument, "unknown split '" + s + "'");
}

struct EventRecord {
  std::string event_id;
  int year = 0;
  double burnt_area_ha = 0.0;
  Split split = Split::unassigned;
};

struct PatchSample {
  std::string patch_id;
  std::string event_id;
  Image hr_pre;    // C1 x H x W
  Image lr_pre;    // C2 x H/s x W/s
  Image lr_post;   // C2 x H/s x W/s
  Mask label_hr;   // H x W, values {0,1}
  Image label_lr;  // 1 x H/s x W/s
  bool is_positive = false;
  std::string t1_date;
  std::string t2_date;
  // quality metadata consumed by filter_patches
  double burnt_area_ha = 0.0;
  double lr_invalid_fraction = 0.0;

  int scale() const { return lr_pre.rows() > 0 ? hr_pre.rows() / lr_pre.rows() : 0; }
};

inline bool patches_equal(const PatchSample& a, const PatchSample& b) {
  return a.patch_id == b.patch_id && a.event_id == b.event_id && a.hr_pre == b.hr_pre &&
         a.lr_pre == b.lr_pre && a.lr_post == b.lr_post && a.label_hr == b.label_hr &&
         a.label_lr == b.label_lr && a.is_positive == b.is_positive && a.t1_date == b.t1_date &&
         a.t2_date == b.t2_date && a.burnt_area_ha == b.burnt_area_ha &&
         a.lr_invalid_fraction == b.lr_invalid_fraction;
}

struct SplitCounts {
  int n_events = 0;
  int n_patches = 0;
};

struct SplitManifest {
  std::map<std::string, Split> assignments;
  std::uint64_t seed = 0;
  std::map<Split, SplitCounts> counts;

  Split split_of(const std::string& event_id) const {
    auto it = assignments.find(event_id);
    return it == assignments.end() ? Split::unassigned : it->second;
  }
};

/// Block-mean LR label: an LR pixel is 1 when at least half of its s x s block is burnt.
inline Mask downsample_label(const Mask& label_hr, int s) {
  require(s >= 1, ErrorKind::invalid_argument, "scale factor must be >= 1");
  require(label_hr.rows() % s == 0 && label_hr.cols() % s == 0, ErrorKind::invalid_argument,
          "label dimensions are not divisible by the scale factor");
  const int h = label_hr.rows() / s, w = label_hr.cols() / s;
  Mask out(1, h, w, 0);
  const int block = s * s;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      int n = 0;
      for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c) n += label_hr(i * s + r, j * s + c) != 0;
      // n / block >= 0.5, evaluated in integers
      out(i, j) = 2 * n >= block ? 1 : 0;
    }
  return out;
}

/// Fraction of burnt pixels per LR block.
inline Image downsample_label_soft(const Mask& label_hr, int s) {
  require(s >= 1 && label_hr.rows() % s == 0 && label_hr.cols() % s == 0,
          ErrorKind::invalid_argument, "label dimensions are not divisible by the scale factor");
  const int h = label_hr.rows() / s, w = label_hr.cols() / s;
  Image out(1, h, w, 0.0f);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      int n = 0;
      for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c) n += label_hr(i * s + r, j * s + c) != 0;
      out(i, j) = static_cast<float>(n) / static_cast<float>(s * s);
    }
  return out;
}

inline Image mask_to_image(const Mask& m) {
  Image out(m.channels(), m.rows(), m.cols());
  std::transform(m.data().begin(), m.data().end(), out.data().begin(),
                 [](std::uint8_t v) { return v ? 1.0f : 0.0f; });
  return out;
}

inline Mask image_to_mask(const Image& img, float threshold = 0.5f) {
  Mask out(img.channels(), img.rows(), img.cols());
  std::transform(img.data().begin(), img.data().end(), out.data().begin(),
                 [threshold](float v) { return v >= threshold ? 1 : 0; });
  return out;
}

struct TileOptions {
  int size = 256;
  int s = 8;
  bool soft_lr_labels = false;
};

/// Cuts co-registered scenes into non-overlapping row-major tiles; residual borders are dropped.
inline std::vector<PatchSample> tile_patches(const Raster& hr_pre, const Raster& lr_pre,
                                             const Raster& lr_post, const Mask& label,
                                             const std::string& event_id,
                                             const TileOptions& opt = {}) {
  const int size = opt.size, s = opt.s;
  require(size > 0 && s > 0 && size % s == 0, ErrorKind::invalid_argument,
          "tile size must be a positive multiple of the scale factor");
  require(label.rows() == hr_pre.rows() && label.cols() == hr_pre.cols(), ErrorKind::alignment,
          "label grid differs from the HR grid for event " + event_id);
  for (const Raster* lr : {&lr_pre, &lr_post}) {
    require(lr->rows() == hr_pre.rows() / s && lr->cols() == hr_pre.cols() / s,
            ErrorKind::alignment,
            "LR grid " + std::to_string(lr->rows()) + "x" + std::to_string(lr->cols()) +
                " is not the HR grid / " + std::to_string(s) + " for event " + event_id);
  }
  require(lr_pre.channels() == lr_post.channels(), ErrorKind::alignment,
          "LR pre/post band counts differ for event " + event_id);
  if (!hr_pre.acquisition_date.empty() && !lr_pre.acquisition_date.empty())
    require(hr_pre.acquisition_date == lr_pre.acquisition_date, ErrorKind::alignment,
            "pre-fire HR and LR images must share an acquisition date (event " + event_id + ")");
  if (!lr_pre.acquisition_date.empty() && !lr_post.acquisition_date.empty())
    require(lr_post.acquisition_date > lr_pre.acquisition_date, ErrorKind::alignment,
            "post-fire date must follow the pre-fire date (event " + event_id + ")");

  const int lr_size = size / s;
  const int tiles_y = hr_pre.rows() / size, tiles_x = hr_pre.cols() / size;
  std::vector<PatchSample> out;
  for (int ty = 0; ty < tiles_y; ++ty) {
    for (int tx = 0; tx < tiles_x; ++tx) {
      PatchSample p;
      p.patch_id = event_id + "_r" + std::to_string(ty) + "_c" + std::to_string(tx);
      p.event_id = event_id;
      p.hr_pre = crop(hr_pre.data, ty * size, tx * size, size, size);
      p.lr_pre = crop(lr_pre.data, ty * lr_size, tx * lr_size, lr_size, lr_size);
      p.lr_post = crop(lr_post.data, ty * lr_size, tx * lr_size, lr_size, lr_size);
      p.label_hr = crop(label, ty * size, tx * size, size, size);
      p.label_lr = opt.soft_lr_labels ? downsample_label_soft(p.label_hr, s)
                                      : mask_to_image(downsample_label(p.label_hr, s));
      p.is_positive = count_positive(p.label_hr) > 0;
      p.t1_date = lr_pre.acquisition_date;
      p.t2_date = lr_post.acquisition_date;
      std::size_t invalid = 0;
      for (int r = 0; r < lr_size; ++r)
        for (int c = 0; c < lr_size; ++c) {
          const int y = ty * lr_size + r, x = tx * lr_size + c;
          const bool bad = (!lr_pre.nodata_mask.empty() && lr_pre.nodata_mask(y, x)) ||
                           (!lr_post.nodata_mask.empty() && lr_post.nodata_mask(y, x));
          invalid += bad;
        }
      p.lr_invalid_fraction = static_cast<double>(invalid) / (lr_size * lr_size);
      out.push_back(std::move(p));
    }
  }
  return out;
}

struct FilterOptions {
  double min_burn_area_ha = 25.0;
  double max_invalid_fraction = 0.05;
};

/// Keeps positives only from events larger than one MODIS pixel and drops low-quality LR tiles.
inline std::vector<PatchSample> filter_patches(std::vector<PatchSample> patches,
                                               const FilterOptions& opt = {}) {
  std::vector<PatchSample> out;
  for (auto& p : patches) {
    if (p.is_positive && !(p.burnt_area_ha > opt.min_burn_area_ha)) continue;
    if (p.lr_invalid_fraction > opt.max_invalid_fraction) continue;
    out.push_back(std::move(p));
  }
  return out;
}

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

inline SplitManifest split_by_event(std::vector<EventRecord> events, const SplitFractions& f,
                                    std::uint64_t seed) {
  require(f.train >= 0 && f.val >= 0 && f.test >= 0, ErrorKind::invalid_argument,
          "split fractions must be non-negative");
  require(std::abs(f.train + f.val + f.test - 1.0) < 1e-9, ErrorKind::invalid_argument,
          "split fractions must sum to 1");
  require(events.size() >= 3, ErrorKind::invalid_argument, "at least 3 events are required");
  std::set<std::string> seen;
  for (auto& e : events) {
    require(seen.insert(e.event_id).second, ErrorKind::invalid_argument,
            "duplicate event id " + e.event_id);
    require(e.burnt_area_ha >= 0, ErrorKind::invalid_argument,
            "negative burnt area for event " + e.event_id);
  }
  std::sort(events.begin(), events.end(),
            [](const EventRecord& a, const EventRecord& b) { return a.event_id < b.event_id; });
  Rng rng(seed);
  std::shuffle(events.begin(), events.end(), rng.engine());

  const auto n = static_cast<long>(events.size());
  long n_train = std::lround(f.train * n);
  long n_val = std::lround(f.val * n);
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);

  SplitManifest m;
  m.seed = seed;
  for (long i = 0; i < n; ++i) {
    const Split s = i < n_train ? Split::train : i < n_train + n_val ? Split::val : Split::test;
    m.assignments[events[i].event_id] = s;
    m.counts[s].n_events += 1;
  }
  for (Split s : {Split::train, Split::val, Split::test}) m.counts[s];
  return m;
}

inline void count_patches(SplitManifest& m, const std::vector<PatchSample>& patches) {
  for (auto& [split, c] : m.counts) c.n_patches = 0;
  for (auto& p : patches) m.counts[m.split_of(p.event_id)].n_patches += 1;
}

/// All positives plus round(ratio * n_positive) negatives drawn without replacement.
inline std::vector<PatchSample> sample_negatives(std::vector<PatchSample> patches, double ratio,
                                                 std::uint64_t seed) {
  require(ratio > 0, ErrorKind::invalid_argument, "negative sampling ratio must be positive");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < patches.size(); ++i)
    (patches[i].is_positive ? pos : neg).push_back(i);
  const auto want = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(pos.size())));
  Rng rng(seed);
  std::shuffle(neg.begin(), neg.end(), rng.engine());
  neg.resize(std::min(want, neg.size()));
  std::sort(neg.begin(), neg.end());

  std::vector<PatchSample> out;
  out.reserve(pos.size() + neg.size());
  for (auto i : pos) out.push_back(std::move(patches[i]));
  for (auto i : neg) out.push_back(std::move(patches[i]));
  return out;
}

inline std::vector<PatchSample> patches_in_split(const std::vector<PatchSample>& patches,
                                                 const SplitManifest& m, Split s) {
  std::vector<PatchSample> out;
  for (auto& p : patches)
    if (m.split_of(p.event_id) == s) out.push_back(p);
  return out;
}

}  // namespace bamrcd
