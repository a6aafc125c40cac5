#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bamrcd/error.hpp"
#include "bamrcd/grid.hpp"

namespace bamrcd {

/// Undefined ratios (0/0) are carried as std::nullopt and never folded into 0 or 1.
using Metric = std::optional<double>;

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp; fp += o.fp; fn += o.fn; tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts confusion(const Mask& pred, const Mask& label) {
  require(pred.same_shape(label), ErrorKind::invalid_argument,
          "prediction and label shapes differ");
  ConfusionCounts c;
  const auto& p = pred.data();
  const auto& l = label.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] != 0, b = l[i] != 0;
    c.tp += a && b;
    c.fp += a && !b;
    c.fn += !a && b;
    c.tn += !a && !b;
  }
  return c;
}

inline Metric safe_ratio(double num, double den) {
  if (den == 0) return std::nullopt;
  return num / den;
}

struct Scores {
  Metric precision, recall, f1, iou;
};

inline Scores prf_iou(const ConfusionCounts& c) {
  Scores s;
  s.precision = safe_ratio(double(c.tp), double(c.tp + c.fp));
  s.recall = safe_ratio(double(c.tp), double(c.tp + c.fn));
  if (s.precision && s.recall) s.f1 = safe_ratio(2 * *s.precision * *s.recall, *s.precision + *s.recall);
  s.iou = safe_ratio(double(c.tp), double(c.tp + c.fp + c.fn));
  return s;
}

enum class SizeClass { small, medium, large };

inline const char* to_string(SizeClass c) {
  switch (c) {
    case SizeClass::small: return "small";
    case SizeClass::medium: return "medium";
    case SizeClass::large: return "large";
  }
  return "small";
}

struct SizeThresholds {
  double th1, th2;
};

inline SizeThresholds size_thresholds(int rows, int cols) {
  const double area = static_cast<double>(rows) * cols;
  return {0.02 * area, 0.1 * area};
}

inline SizeClass size_class(std::uint64_t n_pos, int rows, int cols) {
  const auto [th1, th2] = size_thresholds(rows, cols);
  const double n = static_cast<double>(n_pos);
  if (n < th1) return SizeClass::small;
  if (n < th2) return SizeClass::medium;
  return SizeClass::large;
}

/// One evaluated patch reduced to what the aggregate metrics need.
struct PatchResult {
  std::string patch_id;
  std::string event_id;
  int rows = 0, cols = 0;
  std::uint64_t label_positives = 0;
  ConfusionCounts counts;
};

inline PatchResult make_patch_result(const Mask& pred, const Mask& label,
                                     std::string event_id = {}, std::string patch_id = {}) {
  PatchResult r;
  r.patch_id = std::move(patch_id);
  r.event_id = std::move(event_id);
  r.rows = label.rows();
  r.cols = label.cols();
  r.counts = confusion(pred, label);
  r.label_positives = r.counts.tp + r.counts.fn;
  return r;
}

enum class GroupAggregation { micro, macro };

struct MultiscaleIou {
  Metric iou_s, iou_m, iou_l;
  ConfusionCounts small, medium, large;
  int n_small = 0, n_medium = 0, n_large = 0;
};

/// IoU per ground-truth size group; negatives (no labelled positives) join no group.
inline MultiscaleIou multiscale_iou(const std::vector<PatchResult>& results,
                                    GroupAggregation agg = GroupAggregation::micro) {
  MultiscaleIou out;
  std::vector<double> macro[3];
  for (const auto& r : results) {
    if (r.label_positives == 0) continue;
    const auto cls = size_class(r.label_positives, r.rows, r.cols);
    ConfusionCounts* group = cls == SizeClass::small    ? &out.small
                             : cls == SizeClass::medium ? &out.medium
                                                        : &out.large;
    int* n = cls == SizeClass::small ? &out.n_small : cls == SizeClass::medium ? &out.n_medium : &out.n_large;
    *group += r.counts;
    *n += 1;
    if (auto iou = prf_iou(r.counts).iou) macro[static_cast<int>(cls)].push_back(*iou);
  }
  if (agg == GroupAggregation::micro) {
    out.iou_s = prf_iou(out.small).iou;
    out.iou_m = prf_iou(out.medium).iou;
    out.iou_l = prf_iou(out.large).iou;
  } else {
    auto mean = [](const std::vector<double>& v) -> Metric {
      if (v.empty()) return std::nullopt;
      double s = 0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    out.iou_s = mean(macro[0]);
    out.iou_m = mean(macro[1]);
    out.iou_l = mean(macro[2]);
  }
  return out;
}

inline MultiscaleIou multiscale_iou(const std::vector<std::pair<Mask, Mask>>& samples,
                                    GroupAggregation agg = GroupAggregation::micro) {
  std::vector<PatchResult> r;
  for (auto& [pred, label] : samples) r.push_back(make_patch_result(pred, label));
  return multiscale_iou(r, agg);
}

/// An event counts as retrieved when some patch has at least one true-positive pixel.
inline int events_detected(const std::vector<PatchResult>& results) {
  std::map<std::string, bool> hit;
  for (const auto& r : results) hit[r.event_id] = hit[r.event_id] || r.counts.tp > 0;
  int n = 0;
  for (auto& [id, h] : hit) n += h;
  return n;
}

inline int events_detected(const std::map<std::string, std::vector<std::pair<Mask, Mask>>>& per_event) {
  int n = 0;
  for (const auto& [id, pairs] : per_event) {
    bool hit = false;
    for (const auto& [pred, label] : pairs) {
      require(pred.same_shape(label), ErrorKind::invalid_argument,
              "prediction and label shapes differ in event " + id);
      for (std::size_t i = 0; i < pred.size() && !hit; ++i)
        hit = pred.data()[i] != 0 && label.data()[i] != 0;
      if (hit) break;
    }
    n += hit;
  }
  return n;
}

enum class RatioConvention {
  // fp / ground-truth positives, fn / ground-truth negatives
  respective,
  // fp / ground-truth negatives, fn / ground-truth positives (standard error rates)
  standard_rates,
};

struct EventRatios {
  std::string event_id;
  Metric fp_ratio, fn_ratio;
};

inline EventRatios event_ratios(const std::string& id, const ConfusionCounts& c,
                                RatioConvention conv = RatioConvention::respective) {
  const double positives = double(c.tp + c.fn), negatives = double(c.fp + c.tn);
  if (conv == RatioConvention::respective)
    return {id, safe_ratio(double(c.fp), positives), safe_ratio(double(c.fn), negatives)};
  return {id, safe_ratio(double(c.fp), negatives), safe_ratio(double(c.fn), positives)};
}

inline std::vector<EventRatios> fp_fn_ratios(const std::map<std::string, ConfusionCounts>& per_event,
                                             RatioConvention conv = RatioConvention::respective) {
  std::vector<EventRatios> out;
  for (const auto& [id, c] : per_event) out.push_back(event_ratios(id, c, conv));
  return out;
}

inline std::map<std::string, ConfusionCounts> counts_per_event(const std::vector<PatchResult>& results) {
  std::map<std::string, ConfusionCounts> out;
  for (const auto& r : results) out[r.event_id] += r.counts;
  return out;
}

}  // namespace bamrcd
