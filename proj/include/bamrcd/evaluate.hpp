#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bamrcd/checkpoint.hpp"
#include "bamrcd/error.hpp"
#include "bamrcd/metrics.hpp"
#include "bamrcd/model.hpp"
#include "bamrcd/nn/tensor.hpp"
#include "bamrcd/patch.hpp"

namespace bamrcd {

struct PatchPrediction {
  Mask hr;
  Mask lr;
};

/// Runs both heads over `patches` in fixed-size batches.
inline std::vector<PatchPrediction> predict_patches(const BamMrcd<float>& model, const nn::Parameters<float>& params,
                                                    const std::vector<PatchSample>& patches, double threshold = 0.5,
                                                    int batch = 4) {
  std::vector<PatchPrediction> out;
  for (std::size_t i = 0; i < patches.size(); i += batch) {
    std::vector<const Image*> hr, a, b;
    for (std::size_t k = i; k < std::min(patches.size(), i + batch); ++k) {
      hr.push_back(&patches[k].hr_pre);
      a.push_back(&patches[k].lr_pre);
      b.push_back(&patches[k].lr_post);
    }
    const auto o = model.run(params, nn::stack<float>(hr), nn::stack<float>(a), nn::stack<float>(b));
    for (int n = 0; n < o.y_hr_logits.n; ++n)
      out.push_back({predict(o.y_hr_logits, n, threshold), predict(o.y_lr_logits, n, threshold)});
  }
  return out;
}

/// Hard LR reference label (soft labels are thresholded at 0.5).
inline Mask lr_reference(const PatchSample& p) { return image_to_mask(p.label_lr, 0.5f); }

inline std::uint32_t dataset_hash(const std::vector<PatchSample>& patches) {
  uLong h = crc32(0L, Z_NULL, 0);
  auto feed = [&](const void* d, std::size_t n) { h = crc32(h, static_cast<const Bytef*>(d), static_cast<uInt>(n)); };
  for (const auto& p : patches) {
    feed(p.patch_id.data(), p.patch_id.size());
    for (const Image* g : {&p.hr_pre, &p.lr_pre, &p.lr_post, &p.label_lr}) feed(g->data().data(), 4 * g->size());
    feed(p.label_hr.data().data(), p.label_hr.size());
  }
  return static_cast<std::uint32_t>(h);
}

struct EvalOptions {
  double threshold = 0.5;
  GroupAggregation aggregation = GroupAggregation::micro;
  RatioConvention ratio_convention = RatioConvention::respective;
  bool labels_as_predictions = false;
  int batch = 4;
};

struct MetricsReport {
  Scores hr;  // global, micro over all pixels
  Scores lr;
  ConfusionCounts hr_counts, lr_counts;
  MultiscaleIou multiscale;
  int n_events_detected = 0;
  int n_events = 0;
  std::vector<EventRatios> per_event;
  std::vector<PatchResult> per_patch;
  json metadata = json::object();
};

inline MetricsReport score_predictions(const std::vector<PatchSample>& patches,
                                       const std::vector<PatchPrediction>& preds, const EvalOptions& opt = {}) {
  require(patches.size() == preds.size(), ErrorKind::invalid_argument, "prediction count mismatch");
  MetricsReport r;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& p = patches[i];
    auto pr = make_patch_result(preds[i].hr, p.label_hr, p.event_id, p.patch_id);
    r.hr_counts += pr.counts;
    r.lr_counts += confusion(preds[i].lr, lr_reference(p));
    r.per_patch.push_back(std::move(pr));
  }
  r.hr = prf_iou(r.hr_counts);
  r.lr = prf_iou(r.lr_counts);
  r.multiscale = multiscale_iou(r.per_patch, opt.aggregation);
  r.n_events_detected = events_detected(r.per_patch);
  const auto per_event = counts_per_event(r.per_patch);
  r.n_events = static_cast<int>(per_event.size());
  r.per_event = fp_fn_ratios(per_event, opt.ratio_convention);
  r.metadata["threshold"] = opt.threshold;
  r.metadata["aggregation"] = opt.aggregation == GroupAggregation::micro ? "micro" : "macro";
  r.metadata["ratio_convention"] = opt.ratio_convention == RatioConvention::respective ? "respective" : "standard_rates";
  r.metadata["n_patches"] = patches.size();
  r.metadata["dataset_hash"] = dataset_hash(patches);
  return r;
}

inline void check_compatible(const ModelConfig& cfg, const std::vector<PatchSample>& patches) {
  for (const auto& p : patches) {
    auto why = [&](const std::string& m) {
      fail(ErrorKind::compatibility, "patch " + p.patch_id + " is incompatible with the checkpoint: " + m);
    };
    if (p.hr_pre.channels() != cfg.c1) why("HR channels " + std::to_string(p.hr_pre.channels()) + " != c1 " + std::to_string(cfg.c1));
    if (p.lr_pre.channels() != cfg.c2) why("LR channels " + std::to_string(p.lr_pre.channels()) + " != c2 " + std::to_string(cfg.c2));
    if (p.scale() != cfg.s || p.hr_pre.rows() != p.lr_pre.rows() * cfg.s || p.hr_pre.cols() != p.lr_pre.cols() * cfg.s)
      why("scale factor does not match s = " + std::to_string(cfg.s));
    const int m = std::max(1 << cfg.hr_depth, (1 << (cfg.widths.size() - 1)) * cfg.s);
    if (p.hr_pre.rows() % m != 0 || p.hr_pre.cols() % m != 0)
      why("patch size not divisible by " + std::to_string(m));
  }
}

inline MetricsReport evaluate(const Checkpoint& ckpt, const std::vector<PatchSample>& patches,
                              const EvalOptions& opt = {}) {
  std::vector<PatchPrediction> preds;
  if (opt.labels_as_predictions) {
    for (const auto& p : patches) preds.push_back({p.label_hr, lr_reference(p)});
  } else {
    check_compatible(ckpt.config, patches);
    preds = predict_patches(BamMrcd<float>(ckpt.config), ckpt.params, patches, opt.threshold, opt.batch);
  }
  auto r = score_predictions(patches, preds, opt);
  r.metadata["seed"] = ckpt.seed;
  r.metadata["step"] = ckpt.step;
  r.metadata["labels_as_predictions"] = opt.labels_as_predictions;
  return r;
}

inline json metric_json(const Metric& m) { return m ? json(*m) : json(nullptr); }

inline json counts_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

inline json scores_json(const Scores& s) {
  return {{"precision", metric_json(s.precision)},
          {"recall", metric_json(s.recall)},
          {"f1", metric_json(s.f1)},
          {"iou", metric_json(s.iou)}};
}

inline json to_json(const MetricsReport& r) {
  json j = scores_json(r.hr);
  j["iou_s"] = metric_json(r.multiscale.iou_s);
  j["iou_m"] = metric_json(r.multiscale.iou_m);
  j["iou_l"] = metric_json(r.multiscale.iou_l);
  j["n_events_detected"] = r.n_events_detected;
  j["n_events"] = r.n_events;
  j["counts"] = counts_json(r.hr_counts);
  j["lr_head"] = scores_json(r.lr);
  j["lr_head"]["counts"] = counts_json(r.lr_counts);
  j["size_groups"] = {{"small", r.multiscale.n_small}, {"medium", r.multiscale.n_medium}, {"large", r.multiscale.n_large}};
  json ev = json::array();
  for (const auto& e : r.per_event)
    ev.push_back({{"event_id", e.event_id}, {"fp_ratio", metric_json(e.fp_ratio)}, {"fn_ratio", metric_json(e.fn_ratio)}});
  j["per_event"] = ev;
  j["metadata"] = r.metadata;
  return j;
}

// ---- tables ----

inline const std::vector<std::string>& table_columns() {
  static const std::vector<std::string> c{"Prec", "Rec", "F1", "IoU_S", "IoU_M", "IoU_L", "#Events"};
  return c;
}

/// Metrics in table column order (percent for ratios, raw count for events).
inline std::vector<Metric> table_values(const MetricsReport& r) {
  auto pct = [](const Metric& m) -> Metric { return m ? Metric(100.0 * *m) : std::nullopt; };
  return {pct(r.hr.precision), pct(r.hr.recall), pct(r.hr.f1), pct(r.multiscale.iou_s), pct(r.multiscale.iou_m),
          pct(r.multiscale.iou_l), Metric(static_cast<double>(r.n_events_detected))};
}

struct MeanStd {
  Metric mean, std;
  int n = 0;  // runs where the metric was defined
};

/// Mean and population standard deviation over the runs where the metric is defined.
inline MeanStd mean_std(const std::vector<Metric>& xs) {
  MeanStd out;
  double s = 0;
  for (const auto& x : xs)
    if (x) {
      s += *x;
      ++out.n;
    }
  if (out.n == 0) return out;
  const double mean = s / out.n;
  double v = 0;
  for (const auto& x : xs)
    if (x) v += (*x - mean) * (*x - mean);
  out.mean = mean;
  out.std = std::sqrt(v / out.n);
  return out;
}

inline std::vector<MeanStd> summarize(const std::vector<MetricsReport>& runs) {
  std::vector<MeanStd> out;
  for (std::size_t c = 0; c < table_columns().size(); ++c) {
    std::vector<Metric> xs;
    for (const auto& r : runs) xs.push_back(table_values(r)[c]);
    out.push_back(mean_std(xs));
  }
  return out;
}

inline std::string format_metric(const Metric& m, int decimals = 2) {
  if (!m) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, *m);
  return buf;
}

inline std::string format_mean_std(const MeanStd& m, int decimals = 2) {
  if (!m.mean) return "n/a";
  return format_metric(m.mean, decimals) + " ± " + format_metric(m.std, decimals);
}

inline json summary_json(const std::vector<MeanStd>& s) {
  json j = json::object();
  for (std::size_t c = 0; c < s.size(); ++c)
    j[table_columns()[c]] = {{"mean", metric_json(s[c].mean)}, {"std", metric_json(s[c].std)}, {"n_defined", s[c].n}};
  return j;
}

/// Aligned text table; `rows` are (label, cells).
inline std::string render_table(const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& rows) {
  // width in code points so "±" counts once
  auto width = [](const std::string& s) {
    int n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
  };
  std::vector<int> w(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) w[c] = width(header[c]);
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < w.size(); ++c) w[c] = std::max(w[c], width(r[c]));
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < w.size(); ++c) {
      const std::string v = c < cells.size() ? cells[c] : "";
      if (c) os << "  ";
      if (c == 0) os << v << std::string(w[c] - width(v), ' ');
      else os << std::string(w[c] - width(v), ' ') << v;
    }
    os << '\n';
  };
  line(header);
  int total = 0;
  for (int x : w) total += x;
  os << std::string(total + 2 * (w.size() - 1), '-') << '\n';
  for (const auto& r : rows) line(r);
  return os.str();
}

inline std::string report_table(const std::string& label, const MetricsReport& r) {
  std::vector<std::string> header{"Model"};
  for (const auto& c : table_columns()) header.push_back(c);
  std::vector<std::string> row{label};
  const auto v = table_values(r);
  for (std::size_t c = 0; c < v.size(); ++c) row.push_back(format_metric(v[c], c + 1 == v.size() ? 0 : 2));
  return render_table(header, {row});
}

inline std::string summary_table(const std::string& label, const std::vector<MeanStd>& s) {
  std::vector<std::string> header{"Model"};
  for (const auto& c : table_columns()) header.push_back(c);
  std::vector<std::string> row{label};
  for (const auto& m : s) row.push_back(format_mean_std(m));
  return render_table(header, {row});
}

}  // namespace bamrcd
