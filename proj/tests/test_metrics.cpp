#include <gtest/gtest.h>

#include <cmath>

#include "bamrcd/ablate.hpp"
#include "bamrcd/evaluate.hpp"
#include "bamrcd/metrics.hpp"
#include "bamrcd/render.hpp"
#include "bamrcd/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace bamrcd;

namespace {

Mask mask_from(int rows, int cols, const std::vector<int>& on) {
  Mask m(1, rows, cols, 0);
  for (int i : on) m.data()[i] = 1;
  return m;
}

void expect_same(const Metric& got, const std::optional<double>& want, double tol = 1e-12) {
  ASSERT_EQ(got.has_value(), want.has_value());
  if (want) {
    EXPECT_NEAR(*got, *want, tol);
  }
}

std::vector<oracle::Pair> random_pairs(Rng& rng, int n, int size) {
  std::vector<oracle::Pair> out;
  for (int i = 0; i < n; ++i) {
    const double density = rng.uniform(0, 0.3);
    oracle::Pair p;
    p.label = test::random_mask(rng, size, size, rng.bernoulli(0.2) ? 0.0 : density);
    p.pred = test::random_mask(rng, size, size, rng.uniform(0, 0.3));
    p.event = "e" + std::to_string(rng.integer(0, 5));
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PatchResult> results_of(const std::vector<oracle::Pair>& pairs) {
  std::vector<PatchResult> r;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    r.push_back(make_patch_result(pairs[i].pred, pairs[i].label, pairs[i].event, "p" + std::to_string(i)));
  return r;
}

}  // namespace

TEST(Confusion, PerfectPrediction) {
  const auto l = mask_from(4, 4, {0, 3, 5, 9, 15});
  const auto c = confusion(l, l);
  EXPECT_EQ(c.tp, 5u);
  EXPECT_EQ(c.tn, 11u);
  EXPECT_EQ(c.fp, 0u);
  EXPECT_EQ(c.fn, 0u);
}

TEST(Confusion, AllFalsePositives) {
  const auto c = confusion(Mask(1, 2, 2, 1), Mask(1, 2, 2, 0));
  EXPECT_EQ(c.fp, 4u);
  EXPECT_EQ(c.total(), 4u);
}

TEST(Confusion, ShapeMismatch) {
  try {
    confusion(Mask(1, 2, 2, 0), Mask(1, 2, 3, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
  }
}

TEST(Confusion, MatchesLoopOracle) {
  Rng rng(1);
  for (const auto& p : random_pairs(rng, 30, 16)) {
    const auto c = confusion(p.pred, p.label);
    const auto o = oracle::counts(p.pred, p.label);
    EXPECT_EQ(c.tp, o.tp);
    EXPECT_EQ(c.fp, o.fp);
    EXPECT_EQ(c.fn, o.fn);
    EXPECT_EQ(c.tn, o.tn);
  }
}

TEST(PrfIou, Examples) {
  const auto a = prf_iou({5, 0, 0, 0});
  EXPECT_EQ(*a.precision, 1.0);
  EXPECT_EQ(*a.recall, 1.0);
  EXPECT_EQ(*a.f1, 1.0);
  EXPECT_EQ(*a.iou, 1.0);
  const auto b = prf_iou({1, 1, 1, 0});
  EXPECT_DOUBLE_EQ(*b.precision, 0.5);
  EXPECT_DOUBLE_EQ(*b.recall, 0.5);
  EXPECT_DOUBLE_EQ(*b.f1, 0.5);
  EXPECT_DOUBLE_EQ(*b.iou, 1.0 / 3.0);
  const auto c = prf_iou({0, 0, 0, 7});
  EXPECT_FALSE(c.precision || c.recall || c.f1 || c.iou);
}

TEST(PrfIou, ZeroTruePositivesWithErrors) {
  const auto s = prf_iou({0, 3, 2, 10});
  EXPECT_EQ(*s.precision, 0.0);
  EXPECT_EQ(*s.recall, 0.0);
  EXPECT_FALSE(s.f1);
  EXPECT_EQ(*s.iou, 0.0);
}

TEST(PrfIou, F1IsHarmonicMean) {
  Rng rng(2);
  for (const auto& p : random_pairs(rng, 30, 16)) {
    const auto s = prf_iou(confusion(p.pred, p.label));
    const auto o = oracle::scores(oracle::counts(p.pred, p.label));
    expect_same(s.precision, o.p);
    expect_same(s.recall, o.r);
    expect_same(s.f1, o.f1);
    expect_same(s.iou, o.iou);
  }
}

TEST(SizeClassTest, BoundariesAt256) {
  EXPECT_EQ(size_class(1310, 256, 256), SizeClass::small);
  EXPECT_EQ(size_class(1311, 256, 256), SizeClass::medium);
  EXPECT_EQ(size_class(6553, 256, 256), SizeClass::medium);
  EXPECT_EQ(size_class(6554, 256, 256), SizeClass::large);
  EXPECT_EQ(size_class(0, 256, 256), SizeClass::small);
}

TEST(SizeClassTest, ExhaustiveScan16) {
  for (std::uint64_t n = 0; n <= 256; ++n)
    EXPECT_EQ(static_cast<int>(size_class(n, 16, 16)), oracle::size_class(n, 16, 16)) << n;
}

TEST(MultiscaleIouTest, SingleSmallPerfect) {
  const auto l = mask_from(16, 16, {1, 2});
  const auto m = multiscale_iou(std::vector<std::pair<Mask, Mask>>{{l, l}});
  EXPECT_EQ(*m.iou_s, 1.0);
  EXPECT_FALSE(m.iou_m);
  EXPECT_FALSE(m.iou_l);
}

TEST(MultiscaleIouTest, MicroAverageOverGroup) {
  // label 16x16 with 5 positives each -> small (5 < 5.12); summed tp 10, fp 5, fn 5
  const auto l1 = mask_from(16, 16, {0, 1, 2, 3, 4});
  const auto p1 = mask_from(16, 16, {0, 1, 2, 3, 4, 10, 11, 12});  // tp 5, fp 3
  const auto l2 = mask_from(16, 16, {20, 21, 22, 23, 24});
  const auto p2 = mask_from(16, 16, {30, 31});  // tp 0, fp 2, fn 5
  const auto m = multiscale_iou(std::vector<std::pair<Mask, Mask>>{{p1, l1}, {p2, l2}});
  EXPECT_EQ(m.n_small, 2);
  EXPECT_DOUBLE_EQ(*m.iou_s, 5.0 / 15.0);
  // with the documented example numbers
  std::vector<PatchResult> r(2);
  for (auto& x : r) {
    x.rows = x.cols = 16;
    x.label_positives = 5;
  }
  r[0].counts = {6, 2, 3, 0};
  r[1].counts = {4, 3, 2, 0};
  EXPECT_DOUBLE_EQ(*multiscale_iou(r).iou_s, 0.5);
  const auto macro = multiscale_iou(r, GroupAggregation::macro);
  EXPECT_DOUBLE_EQ(*macro.iou_s, (6.0 / 11 + 4.0 / 9) / 2);
}

TEST(MultiscaleIouTest, GroupsByLabelNotPrediction) {
  std::vector<int> big;
  for (int i = 0; i < 100; ++i) big.push_back(i);
  const auto l = mask_from(16, 16, big);
  const auto m = multiscale_iou(std::vector<std::pair<Mask, Mask>>{{Mask(1, 16, 16, 0), l}});
  EXPECT_EQ(m.n_large, 1);
  EXPECT_EQ(m.large.fn, 100u);
  EXPECT_EQ(*m.iou_l, 0.0);
}

TEST(MultiscaleIouTest, NegativesJoinNoGroupAndPartitionHolds) {
  Rng rng(3);
  const auto pairs = random_pairs(rng, 50, 16);
  const auto r = results_of(pairs);
  const auto m = multiscale_iou(r);
  ConfusionCounts positives_only;
  int n_pos = 0;
  for (const auto& x : r)
    if (x.label_positives > 0) {
      positives_only += x.counts;
      ++n_pos;
    }
  EXPECT_EQ(m.small.tp + m.medium.tp + m.large.tp, positives_only.tp);
  EXPECT_EQ(m.small.fp + m.medium.fp + m.large.fp, positives_only.fp);
  EXPECT_EQ(m.small.fn + m.medium.fn + m.large.fn, positives_only.fn);
  EXPECT_EQ(m.n_small + m.n_medium + m.n_large, n_pos);
  expect_same(m.iou_s, oracle::group_iou(pairs, 0));
  expect_same(m.iou_m, oracle::group_iou(pairs, 1));
  expect_same(m.iou_l, oracle::group_iou(pairs, 2));
}

TEST(MicroAggregation, SummedCountsEqualConcatenation) {
  Rng rng(4);
  const auto pairs = random_pairs(rng, 10, 16);
  ConfusionCounts sum;
  Mask cp(1, 16 * 10, 16, 0), cl(1, 16 * 10, 16, 0);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    sum += confusion(pairs[i].pred, pairs[i].label);
    std::copy(pairs[i].pred.data().begin(), pairs[i].pred.data().end(), cp.data().begin() + i * 256);
    std::copy(pairs[i].label.data().begin(), pairs[i].label.data().end(), cl.data().begin() + i * 256);
  }
  EXPECT_EQ(*prf_iou(sum).iou, *prf_iou(confusion(cp, cl)).iou);
}

TEST(EventsDetected, OnePixelOverlapCounts) {
  const auto l = mask_from(4, 4, {5, 6});
  std::map<std::string, std::vector<std::pair<Mask, Mask>>> ev;
  ev["a"] = {{mask_from(4, 4, {6}), l}};
  ev["b"] = {{Mask(1, 4, 4, 1), Mask(1, 4, 4, 0)}};
  ev["c"] = {{mask_from(4, 4, {0}), l}, {Mask(1, 4, 4, 0), l}};
  EXPECT_EQ(events_detected(ev), 1);
  EXPECT_EQ(events_detected(std::map<std::string, std::vector<std::pair<Mask, Mask>>>{}), 0);
}

TEST(EventsDetected, MatchesOracleAndIsMonotone) {
  Rng rng(5);
  auto pairs = random_pairs(rng, 50, 16);
  EXPECT_EQ(events_detected(results_of(pairs)), oracle::events_detected(pairs));
  int before = events_detected(results_of(pairs));
  for (int round = 0; round < 5; ++round) {
    for (auto& p : pairs)
      for (auto& v : p.pred.data())
        if (rng.bernoulli(0.1)) v = 1;
    const int after = events_detected(results_of(pairs));
    EXPECT_GE(after, before);
    before = after;
  }
}

TEST(Ratios, Examples) {
  const auto perfect = event_ratios("a", {10, 0, 0, 90});
  EXPECT_EQ(*perfect.fp_ratio, 0.0);
  EXPECT_EQ(*perfect.fn_ratio, 0.0);
  const auto r = event_ratios("b", {0, 5, 10, 85});
  EXPECT_DOUBLE_EQ(*r.fp_ratio, 0.5);
  EXPECT_DOUBLE_EQ(*r.fn_ratio, 10.0 / 90.0);
  const auto s = event_ratios("b", {0, 5, 10, 85}, RatioConvention::standard_rates);
  EXPECT_DOUBLE_EQ(*s.fp_ratio, 5.0 / 90.0);
  EXPECT_DOUBLE_EQ(*s.fn_ratio, 1.0);
  const auto neg = event_ratios("c", {0, 3, 0, 97});
  EXPECT_FALSE(neg.fp_ratio);
  EXPECT_DOUBLE_EQ(*neg.fn_ratio, 0.0);
}

TEST(Ratios, PerEventAggregation) {
  std::vector<PatchResult> r(3);
  r[0].event_id = "x";
  r[0].counts = {1, 2, 3, 4};
  r[1].event_id = "x";
  r[1].counts = {1, 0, 1, 10};
  r[2].event_id = "y";
  r[2].counts = {0, 0, 0, 5};
  const auto per = counts_per_event(r);
  EXPECT_EQ(per.at("x"), (ConfusionCounts{2, 2, 4, 14}));
  const auto rows = fp_fn_ratios(per);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(*rows[0].fp_ratio, 2.0 / 6.0);
  EXPECT_FALSE(rows[1].fp_ratio);
}

TEST(Report, LabelsAgainstThemselves) {
  SceneSpec spec;
  spec.hr_size = 64;
  auto data = make_dataset(3, 2, spec, 9).patches;
  for (std::size_t i = 0; i < data.size(); ++i) data[i].event_id = "ev" + std::to_string(i % 3);
  EvalOptions opt;
  opt.labels_as_predictions = true;
  const auto r = evaluate(Checkpoint{}, data, opt);
  EXPECT_EQ(*r.hr.precision, 1.0);
  EXPECT_EQ(*r.hr.recall, 1.0);
  EXPECT_EQ(*r.hr.f1, 1.0);
  EXPECT_EQ(*r.hr.iou, 1.0);
  EXPECT_EQ(*r.lr.f1, 1.0);
  EXPECT_EQ(r.n_events, 3);
  EXPECT_EQ(r.n_events_detected, 3);
  ASSERT_EQ(r.per_patch.size(), data.size());
  EXPECT_EQ(r.per_patch[0].patch_id, data[0].patch_id);
  EXPECT_EQ(r.per_patch[0].event_id, data[0].event_id);
}

TEST(Report, AllZeroPredictor) {
  SceneSpec spec;
  spec.hr_size = 64;
  const auto data = make_dataset(2, 1, spec, 9).patches;
  std::vector<PatchPrediction> preds;
  for (std::size_t i = 0; i < data.size(); ++i) preds.push_back({Mask(1, 64, 64, 0), Mask(1, 8, 8, 0)});
  const auto r = score_predictions(data, preds);
  EXPECT_EQ(*r.hr.recall, 0.0);
  EXPECT_FALSE(r.hr.precision);
  EXPECT_FALSE(r.hr.f1);
  EXPECT_EQ(r.n_events_detected, 0);
  const auto j = to_json(r);
  EXPECT_TRUE(j["precision"].is_null());
  EXPECT_EQ(j["recall"], 0.0);
}

TEST(Report, IdenticalRunsHaveZeroStd) {
  SceneSpec spec;
  spec.hr_size = 64;
  const auto data = make_dataset(2, 1, spec, 9).patches;
  std::vector<PatchPrediction> preds;
  Rng rng(6);
  for (std::size_t i = 0; i < data.size(); ++i) preds.push_back({test::random_mask(rng, 64, 64, 0.1), test::random_mask(rng, 8, 8, 0.1)});
  const auto r = score_predictions(data, preds);
  const auto s = summarize({r, r, r});
  for (const auto& m : s) {
    if (!m.mean) continue;
    EXPECT_EQ(*m.std, 0.0);
  }
  EXPECT_NE(summary_table("x", s).find("± 0.00"), std::string::npos);
}

TEST(Report, MeanStdSkipsUndefined) {
  const auto m = mean_std({Metric(1.0), std::nullopt, Metric(3.0)});
  EXPECT_EQ(m.n, 2);
  EXPECT_DOUBLE_EQ(*m.mean, 2.0);
  EXPECT_DOUBLE_EQ(*m.std, 1.0);
  EXPECT_FALSE(mean_std({std::nullopt}).mean);
}

TEST(Report, TableColumnsInOrder) {
  MetricsReport r;
  r.hr = prf_iou({1, 1, 1, 0});
  r.n_events_detected = 4;
  const auto t = report_table("BAM-MRCD", r);
  const auto header = t.substr(0, t.find('\n'));
  std::size_t pos = 0;
  for (const auto& c : table_columns()) {
    const auto at = header.find(c, pos);
    ASSERT_NE(at, std::string::npos) << c;
    pos = at + c.size();
  }
  EXPECT_NE(t.find("50.00"), std::string::npos);
  EXPECT_NE(t.find("n/a"), std::string::npos);
}

TEST(Report, IncompatibleCheckpoint) {
  SceneSpec spec;
  spec.hr_size = 64;
  const auto data = make_dataset(1, 0, spec, 9).patches;
  Checkpoint c;
  c.config.c2 = 6;
  c.config.widths = {4, 8};
  c.params = BamMrcd<float>(c.config).init_params(0);
  try {
    evaluate(c, data);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::compatibility);
  }
}

TEST(Overlay, ColoursMatchConfusion) {
  Rng rng(7);
  Image hr(13, 16, 16);
  for (auto& v : hr.data()) v = static_cast<float>(rng.uniform(0, 1));
  for (int trial = 0; trial < 10; ++trial) {
    const auto pred = test::random_mask(rng, 16, 16, 0.3), label = test::random_mask(rng, 16, 16, 0.3);
    const auto o = overlay_counts(overlay_image(hr, pred, label));
    EXPECT_EQ(o, confusion(pred, label));
  }
}

TEST(Overlay, PerfectIsWhiteOnlyAndMissIsRedOnly) {
  Image hr(13, 8, 8, 0.1f);
  const auto label = mask_from(8, 8, {1, 2, 3, 9});
  const auto perfect = overlay_image(hr, label, label);
  const auto miss = overlay_image(hr, Mask(1, 8, 8, 0), label);
  for (std::size_t i = 0; i < perfect.pixels.size(); ++i) {
    const bool pos = label.data()[i] != 0;
    EXPECT_EQ(perfect.pixels[i] == kTpColour, pos);
    EXPECT_FALSE(perfect.pixels[i] == kFnColour || perfect.pixels[i] == kFpColour);
    EXPECT_EQ(miss.pixels[i] == kFnColour, pos);
    EXPECT_FALSE(miss.pixels[i] == kTpColour || miss.pixels[i] == kFpColour);
  }
}

TEST(Overlay, TransparentNegativesWithoutBackground) {
  Image hr(13, 4, 4, 0.2f);
  const auto label = mask_from(4, 4, {0});
  OverlayOptions opt;
  opt.background = false;
  const auto img = overlay_image(hr, mask_from(4, 4, {0, 1}), label, opt);
  EXPECT_EQ(img.at(0, 0), kTpColour);
  EXPECT_EQ(img.at(0, 1), kFpColour);
  EXPECT_EQ(img.at(2, 2).a, 0);
}

TEST(Overlay, BackgroundNeverLooksLikeAnError) {
  Rng rng(8);
  Image hr(13, 32, 32);
  for (auto& v : hr.data()) v = static_cast<float>(rng.uniform(0, 5));
  const auto bg = false_colour(hr);
  for (const auto& px : bg.pixels) {
    EXPECT_LE(std::max({px.r, px.g, px.b}), kBackgroundMax);
    EXPECT_EQ(px.a, 255);
  }
}

TEST(Overlay, PngRoundTripAndIoError) {
  Rng rng(9);
  Image hr(7, 12, 10);
  for (auto& v : hr.data()) v = static_cast<float>(rng.uniform(0, 1));
  const auto pred = test::random_mask(rng, 12, 10, 0.4), label = test::random_mask(rng, 12, 10, 0.4);
  test::TempDir dir;
  const auto path = dir.path / "o.png";
  render_overlay(hr, pred, label, path);
  const auto back = read_png(path);
  EXPECT_EQ(back.width, 10);
  EXPECT_EQ(back.height, 12);
  EXPECT_EQ(back.pixels, overlay_image(hr, pred, label).pixels);
  EXPECT_EQ(overlay_counts(back), confusion(pred, label));
  write_text_file(dir.path / "file", "x");
  try {
    render_overlay(hr, pred, label, dir.path / "file" / "o.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(RatiosOutput, CsvAndHistogram) {
  const std::vector<EventRatios> rows{{"a", 0.5, 0.25}, {"b", std::nullopt, 0.0}};
  EXPECT_EQ(ratios_csv(rows), "event_id,fp_ratio,fn_ratio\na,0.5,0.25\nb,,0\n");
  const auto img = ratio_histogram(rows);
  EXPECT_EQ(img.width, 640);
  EXPECT_EQ(img.height, 200);
  int green = 0, red = 0;
  for (const auto& px : img.pixels) {
    green += px.g > 100 && px.r < 100;
    red += px.r > 150 && px.g < 100;
  }
  EXPECT_GT(green, 0);
  EXPECT_GT(red, 0);
}

TEST(AblationTable, RowsColumnsAndFailures) {
  const auto rows = ablation_rows();
  ASSERT_EQ(rows.size(), 8u);
  std::vector<AblationResult> res;
  MetricsReport r;
  r.hr = prf_iou({3, 1, 1, 10});
  r.n_events_detected = 2;
  for (const auto& row : rows) {
    AblationResult a;
    a.row = row;
    for (std::uint64_t s = 0; s < 3; ++s) a.cells.push_back({s, r, ""});
    a.summary = summarize({r, r, r});
    res.push_back(a);
  }
  res.back().cells[2] = {2, std::nullopt, "boom"};
  res.back().n_failed = 1;
  res[3].summary.clear();
  res[3].n_failed = 3;
  const auto t = ablation_table(res);
  std::vector<std::string> lines;
  for (std::size_t a = 0, b; (b = t.find('\n', a)) != std::string::npos; a = b + 1) lines.push_back(t.substr(a, b - a));
  ASSERT_EQ(lines.size(), 10u);
  for (const char* c : {"Siamese", "LR-attn", "HR-attn", "Prec", "Rec", "F1", "IoU_S", "IoU_M", "IoU_L", "#Events", "Runs"})
    EXPECT_NE(lines[0].find(c), std::string::npos) << c;
  EXPECT_NE(lines[2].find("75.00 ± 0.00"), std::string::npos);
  EXPECT_NE(lines[2].find("3/3"), std::string::npos);
  EXPECT_NE(lines[5].find("failed"), std::string::npos);
  EXPECT_NE(lines[9].find("2/3"), std::string::npos);
  const auto j = ablation_json(res);
  EXPECT_EQ(j["rows"].size(), 8u);
  EXPECT_EQ(j["rows"][7]["cells"][2]["error"], "boom");
  EXPECT_EQ(j["columns"].size(), 7u);
}
