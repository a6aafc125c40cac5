// bamrcd: synth / prepare / train / eval / predict / ablate / render
//
// Precedence: command-line flag > config file (--config, TOML or JSON) > built-in default.
// BAMRCD_OUTPUT_ROOT, when set, prefixes every relative --out path.
// Exit codes: 0 ok, 2 usage or invalid argument, 3 data/IO/compatibility error, 4 numeric failure.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bamrcd/ablate.hpp"
#include "bamrcd/archive.hpp"
#include "bamrcd/checkpoint.hpp"
#include "bamrcd/error.hpp"
#include "bamrcd/evaluate.hpp"
#include "bamrcd/geotiff.hpp"
#include "bamrcd/model.hpp"
#include "bamrcd/prepare.hpp"
#include "bamrcd/render.hpp"
#include "bamrcd/synth.hpp"
#include "bamrcd/train.hpp"
#include "config_format.hpp"

namespace {

using namespace bamrcd;

fs::path output_path(const std::string& p) {
  fs::path out(p);
  if (out.is_relative())
    if (const char* root = std::getenv("BAMRCD_OUTPUT_ROOT"); root && *root) out = fs::path(root) / out;
  return out;
}

// The sidecar goes down before any long-running work starts.
void write_resolved(const fs::path& dir, const std::string& command, json body) {
  body["command"] = command;
  write_text_file(dir / "resolved_config.json", body.dump(2) + "\n");
}

Split parse_split(const std::string& s) {
  const Split sp = split_from_string(s);
  require(sp != Split::unassigned, ErrorKind::invalid_argument, "unknown split '" + s + "'");
  return sp;
}

std::vector<PatchSample> load_split(const Archive& a, const std::string& split) {
  if (split == "all") return a.patches;
  return a.split(parse_split(split));
}

// ---- shared option groups ----

struct ModelOpts {
  ModelConfig cfg;
  std::string mode = "pseudo_siamese";
  CLI::Option* hr_depth = nullptr;

  void add(CLI::App* app) {
    app->add_option("--widths", cfg.widths, "BAM-CD encoder widths, comma separated")->delimiter(',');
    app->add_option("--hr-widths", cfg.hr_widths, "UNet widths per level (default: derived from --widths)")
        ->delimiter(',');
    hr_depth = app->add_option("--hr-depth", cfg.hr_depth, "UNet depth (default: log2 s)");
    app->add_option("--siamese-mode", mode, "siamese | pseudo_siamese")
        ->check(CLI::IsMember({"siamese", "pseudo_siamese"}));
    app->add_option("--attn-lr", cfg.attn_lr, "SE attention in the LR decoder (true/false)");
    app->add_option("--attn-hr", cfg.attn_hr, "SE attention at the HR fusion (true/false)");
    app->add_option("--se-reduction", cfg.se_reduction);
    app->add_option("--norm-groups", cfg.norm_groups);
  }

  // channel counts and scale come from the data
  ModelConfig resolve(const std::vector<PatchSample>& data) {
    ModelConfig c = cfg;
    c.siamese_mode = siamese_mode_from_string(mode);
    require(!data.empty(), ErrorKind::invalid_argument, "no patches to infer channel counts from");
    c.c1 = data.front().hr_pre.channels();
    c.c2 = data.front().lr_pre.channels();
    c.s = data.front().scale();
    if (hr_depth->count() == 0) {
      int d = 0;
      while ((1 << d) < c.s) ++d;
      c.hr_depth = d;
    }
    c.validate();
    return c;
  }
};

struct TrainOpts {
  TrainConfig cfg;
  bool no_augment = false;
  double rot_deg = 15.0;

  void add(CLI::App* app) {
    app->add_option("--lr0", cfg.lr0, "initial learning rate");
    app->add_option("--steps", cfg.total_steps, "optimizer steps");
    app->add_option("--batch-size", cfg.batch_size);
    app->add_option("--seed", cfg.seed);
    app->add_option("--schedule", cfg.schedule, "linear_decay | constant")
        ->transform(CLI::CheckedTransformer(
            std::map<std::string, Schedule>{{"linear_decay", Schedule::linear_decay}, {"constant", Schedule::constant}}));
    app->add_option("--adam-beta1", cfg.adam_beta1);
    app->add_option("--adam-beta2", cfg.adam_beta2);
    app->add_option("--adam-eps", cfg.adam_eps);
    app->add_option("--p-hflip", cfg.aug.p_hflip);
    app->add_option("--p-vflip", cfg.aug.p_vflip);
    app->add_option("--p-rot", cfg.aug.p_rot);
    app->add_option("--rot-deg", rot_deg, "rotation range is [-rot-deg, rot-deg]");
    app->add_flag("--no-augment", no_augment, "disable flips and rotations");
    app->add_option("--checkpoint-every", cfg.checkpoint_every, "0: final checkpoint only");
    app->add_option("--validate-every", cfg.validate_every, "0: no best-val tracking");
    app->add_option("--lr-weight", cfg.loss_weights.lr, "weight of the LR loss term");
    app->add_option("--hr-weight", cfg.loss_weights.hr, "weight of the HR loss term");
    app->add_flag("--soft-lr-labels", cfg.soft_lr_labels, "train the LR head on block fractions");
  }

  TrainConfig resolve() const {
    TrainConfig c = cfg;
    c.aug.rot_min_deg = -rot_deg;
    c.aug.rot_max_deg = rot_deg;
    if (no_augment) c.aug = AugmentationConfig::none();
    c.validate();
    return c;
  }
};

struct EvalOpts {
  EvalOptions opt;
  std::string aggregation = "micro", ratio = "respective";

  void add(CLI::App* app) {
    app->add_option("--threshold", opt.threshold, "probability threshold");
    app->add_option("--aggregation", aggregation, "size-group IoU: micro | macro")
        ->check(CLI::IsMember({"micro", "macro"}));
    app->add_option("--ratio-convention", ratio, "FP/FN ratio denominators: respective | standard_rates")
        ->check(CLI::IsMember({"respective", "standard_rates"}));
    app->add_option("--batch", opt.batch, "inference batch size");
  }

  EvalOptions resolve() const {
    EvalOptions o = opt;
    o.aggregation = aggregation == "macro" ? GroupAggregation::macro : GroupAggregation::micro;
    o.ratio_convention = ratio == "standard_rates" ? RatioConvention::standard_rates : RatioConvention::respective;
    require(o.threshold > 0 && o.threshold < 1, ErrorKind::invalid_argument, "threshold must lie in (0, 1)");
    require(o.batch >= 1, ErrorKind::invalid_argument, "batch must be positive");
    return o;
  }

  json to_json() const { return {{"threshold", opt.threshold}, {"aggregation", aggregation}, {"ratio_convention", ratio}}; }
};

// ---- synth ----

struct SynthOpts {
  std::string out;
  int n_pos = 4, n_neg = 4;
  SceneSpec spec;
  std::string size_class = "medium";
  std::uint64_t seed = 0;
  double severity_min = 0.6, severity_max = 1.0;
  std::string split = "train";
  std::vector<double> fractions;
};

int cmd_synth(const SynthOpts& o) {
  SceneSpec spec = o.spec;
  spec.size_class_target = size_class_target_from_string(o.size_class);
  spec.severity_range = {o.severity_min, o.severity_max};
  spec.validate();
  const fs::path out = output_path(o.out);
  fs::create_directories(out);
  write_resolved(out, "synth",
                 {{"out", out.string()},
                  {"n_pos", o.n_pos},
                  {"n_neg", o.n_neg},
                  {"seed", o.seed},
                  {"scene",
                   {{"hr_size", spec.hr_size},
                    {"s", spec.s},
                    {"n_burns", spec.n_burns},
                    {"size_class", o.size_class},
                    {"severity_range", {o.severity_min, o.severity_max}},
                    {"noise_sigma", spec.noise_sigma},
                    {"psf_sigma_px", spec.psf_sigma_px}}},
                  {"split", o.fractions.empty() ? json(o.split) : json(o.fractions)}});

  auto ds = make_dataset(o.n_pos, o.n_neg, spec, o.seed);
  SplitManifest m;
  m.seed = o.seed;
  if (o.fractions.empty()) {
    const Split s = parse_split(o.split);
    for (const auto& p : ds.patches) {
      m.assignments[p.event_id] = s;
      m.counts[s].n_events += 1;
    }
  } else {
    require(o.fractions.size() == 3, ErrorKind::invalid_argument, "--fractions needs train,val,test");
    std::vector<EventRecord> events;
    for (const auto& p : ds.patches) events.push_back({p.event_id, 2021, p.burnt_area_ha});
    m = split_by_event(events, {o.fractions[0], o.fractions[1], o.fractions[2]}, o.seed);
  }
  write_archive(ds.patches, m, out);
  std::printf("wrote %zu patches to %s\n", ds.patches.size(), out.string().c_str());
  return kExitOk;
}

// ---- prepare ----

struct PrepareOpts {
  std::string events, out;
  PrepareOptions p;
  std::vector<double> fractions{0.6, 0.2, 0.2};
};

int cmd_prepare(PrepareOpts o) {
  require(o.fractions.size() == 3, ErrorKind::invalid_argument, "--fractions needs train,val,test");
  o.p.fractions = {o.fractions[0], o.fractions[1], o.fractions[2]};
  o.p.tile.s = o.p.s;
  const fs::path out = output_path(o.out);
  fs::create_directories(out);
  write_resolved(out, "prepare",
                 {{"events", o.events},
                  {"out", out.string()},
                  {"hr_gsd_m", o.p.hr_gsd_m},
                  {"s", o.p.s},
                  {"tile_size", o.p.tile.size},
                  {"soft_lr_labels", o.p.tile.soft_lr_labels},
                  {"min_area_ha", o.p.filter.min_burn_area_ha},
                  {"max_invalid_fraction", o.p.filter.max_invalid_fraction},
                  {"fractions", o.fractions},
                  {"negative_ratio", o.p.negative_ratio},
                  {"seed", o.p.seed},
                  {"common_bands", o.p.common_bands}});
  const auto events = read_event_list(o.events);
  const auto res = prepare_scenes(events, o.p);
  write_archive(res.patches, res.manifest, out);
  std::printf("tiled %d patches, filtered %d, kept %zu\n", res.n_tiled, res.n_filtered, res.patches.size());
  for (Split s : {Split::train, Split::val, Split::test}) {
    const auto it = res.manifest.counts.find(s);
    const SplitCounts c = it == res.manifest.counts.end() ? SplitCounts{} : it->second;
    std::printf("  %-5s events %d patches %d\n", to_string(s), c.n_events, c.n_patches);
  }
  return kExitOk;
}

// ---- train ----

struct TrainCmdOpts {
  std::string archive, out;
  std::string train_split = "train", val_split = "val";
  int log_every = 10;
  ModelOpts model;
  TrainOpts train;
};

int cmd_train(TrainCmdOpts& o) {
  const auto a = read_archive(o.archive);
  const auto train_set = load_split(a, o.train_split);
  require(!train_set.empty(), ErrorKind::invalid_argument, "split '" + o.train_split + "' is empty");
  const auto val_set = o.val_split == "none" ? std::vector<PatchSample>{} : load_split(a, o.val_split);
  const auto mcfg = o.model.resolve(train_set);
  const auto tcfg = o.train.resolve();
  const fs::path out = output_path(o.out);
  fs::create_directories(out);
  write_resolved(out, "train",
                 {{"archive", o.archive},
                  {"out", out.string()},
                  {"train_split", o.train_split},
                  {"val_split", o.val_split},
                  {"model", mcfg},
                  {"train", tcfg},
                  {"n_params", count_params(mcfg)}});
  std::printf("model: %zu parameters; %zu training patches, %zu validation patches\n", count_params(mcfg),
              train_set.size(), val_set.size());
  TrainHooks hooks;
  hooks.out_dir = out;
  hooks.on_step = [&](const TraceRow& r) {
    if (o.log_every > 0 && (r.step % o.log_every == 0 || r.step == tcfg.total_steps || r.step == 1))
      std::printf("step %lld  lr %.3g  L %.6f  L_lr %.6f  L_hr %.6f\n", static_cast<long long>(r.step), r.lr, r.L,
                  r.L_lr, r.L_hr);
    std::fflush(stdout);
  };
  const auto res = train(mcfg, train_set, tcfg, val_set, hooks);
  if (res.best_val_f1) std::printf("best validation F1 %.4f\n", *res.best_val_f1);
  for (const auto& p : res.written) std::printf("wrote %s\n", p.string().c_str());
  return kExitOk;
}

// ---- eval ----

struct EvalCmdOpts {
  std::string archive, split = "test", out;
  std::vector<std::string> checkpoints;
  bool labels_as_predictions = false;
  EvalOpts eval;
};

int cmd_eval(EvalCmdOpts& o) {
  require(o.labels_as_predictions || !o.checkpoints.empty(), ErrorKind::invalid_argument,
          "give --checkpoint (repeatable) or --labels-as-predictions");
  auto opt = o.eval.resolve();
  opt.labels_as_predictions = o.labels_as_predictions;
  std::optional<fs::path> out;
  if (!o.out.empty()) {
    out = output_path(o.out);
    fs::create_directories(*out);
    write_resolved(*out, "eval",
                   {{"archive", o.archive},
                    {"split", o.split},
                    {"checkpoints", o.checkpoints},
                    {"labels_as_predictions", o.labels_as_predictions},
                    {"eval", o.eval.to_json()}});
  }
  const auto a = read_archive(o.archive);
  const auto patches = load_split(a, o.split);
  require(!patches.empty(), ErrorKind::invalid_argument, "split '" + o.split + "' is empty");

  std::vector<MetricsReport> runs;
  json jruns = json::array();
  std::string text;
  auto add = [&](MetricsReport r, const std::string& label) {
    text += report_table(label, r);
    json j = to_json(r);
    j["source"] = label;
    jruns.push_back(std::move(j));
    runs.push_back(std::move(r));
  };
  if (o.labels_as_predictions) {
    add(evaluate(Checkpoint{}, patches, opt), "labels");
  } else {
    for (const auto& c : o.checkpoints) {
      auto r = evaluate(load_checkpoint(c), patches, opt);
      r.metadata["checkpoint"] = c;
      add(std::move(r), fs::path(c).filename().string());
    }
  }
  json doc{{"runs", jruns}};
  if (runs.size() > 1) {
    const auto s = summarize(runs);
    text += summary_table("mean ± std (" + std::to_string(runs.size()) + " runs)", s);
    doc["summary"] = summary_json(s);
  }
  std::fputs(text.c_str(), stdout);
  if (out) {
    write_text_file(*out / "metrics.json", doc.dump(2) + "\n");
    write_text_file(*out / "table.txt", text);
    write_text_file(*out / "ratios.csv", ratios_csv(runs.front().per_event));
  }
  return kExitOk;
}

// ---- predict ----

struct PredictOpts {
  std::string archive, split = "test", checkpoint, out;
  std::vector<std::string> patch_ids;
  double threshold = 0.5;
};

int cmd_predict(const PredictOpts& o) {
  const fs::path out = output_path(o.out);
  fs::create_directories(out);
  write_resolved(out, "predict",
                 {{"archive", o.archive},
                  {"split", o.split},
                  {"checkpoint", o.checkpoint},
                  {"patch_ids", o.patch_ids},
                  {"threshold", o.threshold}});
  const auto ck = load_checkpoint(o.checkpoint);
  const auto a = read_archive(o.archive);
  auto patches = load_split(a, o.split);
  if (!o.patch_ids.empty()) {
    const std::set<std::string> want(o.patch_ids.begin(), o.patch_ids.end());
    std::erase_if(patches, [&](const PatchSample& p) { return !want.count(p.patch_id); });
    require(patches.size() == want.size(), ErrorKind::invalid_argument, "some --patch ids are not in the split");
  }
  require(!patches.empty(), ErrorKind::invalid_argument, "no patches to predict");
  check_compatible(ck.config, patches);
  const auto preds = predict_patches(BamMrcd<float>(ck.config), ck.params, patches, o.threshold);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    for (const auto& [suffix, m] : {std::pair{"hr", &preds[i].hr}, std::pair{"lr", &preds[i].lr}}) {
      tiff::GeoImage g;
      g.data = mask_to_image(*m);
      const auto p = out / (patches[i].patch_id + "." + suffix + "_mask.tif");
      tiff::write(p.string(), g, tiff::SampleType::u8);
    }
  }
  std::printf("wrote %zu HR and %zu LR masks to %s\n", patches.size(), patches.size(), out.string().c_str());
  return kExitOk;
}

// ---- ablate ----

struct AblateOpts {
  std::string archive, out;
  std::string train_split = "train", eval_split = "test";
  int n_seeds = 3;
  std::vector<std::uint64_t> seed_list;
  ModelOpts model;
  TrainOpts train;
  EvalOpts eval;
};

int cmd_ablate(AblateOpts& o) {
  const auto a = read_archive(o.archive);
  const auto train_set = load_split(a, o.train_split);
  const auto eval_set = load_split(a, o.eval_split);
  require(!train_set.empty(), ErrorKind::invalid_argument, "split '" + o.train_split + "' is empty");
  require(!eval_set.empty(), ErrorKind::invalid_argument, "split '" + o.eval_split + "' is empty");
  const auto mcfg = o.model.resolve(train_set);
  const auto tcfg = o.train.resolve();
  AblationOptions opt;
  opt.eval = o.eval.resolve();
  if (!o.seed_list.empty()) {
    opt.seeds = o.seed_list;
  } else {
    require(o.n_seeds >= 1, ErrorKind::invalid_argument, "--seeds must be at least 1");
    opt.seeds.clear();
    for (int i = 0; i < o.n_seeds; ++i) opt.seeds.push_back(static_cast<std::uint64_t>(i));
  }
  const fs::path out = output_path(o.out);
  fs::create_directories(out);
  write_resolved(out, "ablate",
                 {{"archive", o.archive},
                  {"train_split", o.train_split},
                  {"eval_split", o.eval_split},
                  {"seeds", opt.seeds},
                  {"model", mcfg},
                  {"train", tcfg},
                  {"eval", o.eval.to_json()}});
  opt.on_cell = [](const AblationRow& row, const AblationCell& cell) {
    if (cell.error.empty())
      std::printf("%-34s seed %llu  F1 %s\n", row_label(row).c_str(), static_cast<unsigned long long>(cell.seed),
                  format_metric(cell.report->hr.f1 ? Metric(100 * *cell.report->hr.f1) : std::nullopt).c_str());
    else
      std::printf("%-34s seed %llu  FAILED: %s\n", row_label(row).c_str(), static_cast<unsigned long long>(cell.seed),
                  cell.error.c_str());
    std::fflush(stdout);
  };
  const auto results = run_ablation(mcfg, tcfg, train_set, eval_set, opt);
  const auto table = ablation_table(results);
  std::fputs(table.c_str(), stdout);
  write_text_file(out / "ablation.txt", table);
  write_text_file(out / "ablation.json", ablation_json(results).dump(2) + "\n");
  return kExitOk;
}

// ---- render ----

struct RenderOpts {
  std::string archive, split = "test", checkpoint, out;
  bool labels_as_predictions = false, transparent_tn = false, lr = false;
  int max_patches = 0;
  EvalOpts eval;
};

int cmd_render(RenderOpts& o) {
  require(o.labels_as_predictions || !o.checkpoint.empty(), ErrorKind::invalid_argument,
          "give --checkpoint or --labels-as-predictions");
  auto opt = o.eval.resolve();
  opt.labels_as_predictions = o.labels_as_predictions;
  const fs::path out = output_path(o.out);
  fs::create_directories(out);
  write_resolved(out, "render",
                 {{"archive", o.archive},
                  {"split", o.split},
                  {"checkpoint", o.checkpoint},
                  {"labels_as_predictions", o.labels_as_predictions},
                  {"transparent_tn", o.transparent_tn},
                  {"lr", o.lr},
                  {"max_patches", o.max_patches},
                  {"eval", o.eval.to_json()}});
  const auto a = read_archive(o.archive);
  auto patches = load_split(a, o.split);
  require(!patches.empty(), ErrorKind::invalid_argument, "split '" + o.split + "' is empty");

  std::vector<PatchPrediction> preds;
  if (o.labels_as_predictions) {
    for (const auto& p : patches) preds.push_back({p.label_hr, lr_reference(p)});
  } else {
    const auto ck = load_checkpoint(o.checkpoint);
    check_compatible(ck.config, patches);
    preds = predict_patches(BamMrcd<float>(ck.config), ck.params, patches, opt.threshold, opt.batch);
  }
  const auto report = score_predictions(patches, preds, opt);

  OverlayOptions ov;
  ov.background = !o.transparent_tn;
  const std::size_t n = o.max_patches > 0 ? std::min<std::size_t>(o.max_patches, patches.size()) : patches.size();
  for (std::size_t i = 0; i < n; ++i) {
    render_overlay(patches[i].hr_pre, preds[i].hr, patches[i].label_hr, out / "overlays" / (patches[i].patch_id + ".hr.png"), ov);
    if (o.lr)
      render_overlay(patches[i].lr_post, preds[i].lr, lr_reference(patches[i]),
                     out / "overlays" / (patches[i].patch_id + ".lr.png"), ov);
  }
  write_text_file(out / "ratios.csv", ratios_csv(report.per_event));
  write_png(out / "ratio_histogram.png", ratio_histogram(report.per_event));
  write_text_file(out / "table.txt", report_table(o.labels_as_predictions ? "labels" : "model", report));
  write_text_file(out / "metrics.json", to_json(report).dump(2) + "\n");
  std::printf("rendered %zu overlays, %zu event ratios to %s\n", n, report.per_event.size(), out.string().c_str());
  return kExitOk;
}

int report_error(const char* kind, const std::string& msg, int code) {
  std::fprintf(stderr, "bamrcd: error [%s]: %s\n", kind, msg.c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-resolution burnt-area change detection (S2 pre-fire + MODIS pre/post)"};
  app.config_formatter(std::make_shared<bamrcd::cli::ConfigFormat>());
  app.set_config("--config", "", "TOML or JSON config; [section] names the subcommand");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  SynthOpts synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic patch archive");
  s->add_option("--out", synth.out, "archive directory")->required();
  s->add_option("--n-pos", synth.n_pos);
  s->add_option("--n-neg", synth.n_neg);
  s->add_option("--hr-size", synth.spec.hr_size);
  s->add_option("--s", synth.spec.s, "HR/LR scale factor");
  s->add_option("--n-burns", synth.spec.n_burns);
  s->add_option("--size-class", synth.size_class, "small | medium | large")
      ->check(CLI::IsMember({"small", "medium", "large"}));
  s->add_option("--severity-min", synth.severity_min);
  s->add_option("--severity-max", synth.severity_max);
  s->add_option("--noise-sigma", synth.spec.noise_sigma);
  s->add_option("--psf-sigma", synth.spec.psf_sigma_px, "LR point-spread blur in HR pixels");
  s->add_option("--seed", synth.seed);
  s->add_option("--split", synth.split, "split every patch lands in (train | val | test)");
  s->add_option("--fractions", synth.fractions, "event split train,val,test instead of --split")->delimiter(',');

  PrepareOpts prep;
  auto* p = app.add_subcommand("prepare", "GeoTIFF scenes to a patch archive");
  p->add_option("--events", prep.events, "event list JSON")->required()->check(CLI::ExistingFile);
  p->add_option("--out", prep.out, "archive directory")->required();
  p->add_option("--hr-gsd", prep.p.hr_gsd_m, "common HR grid spacing in metres");
  p->add_option("--s", prep.p.s, "HR/LR scale factor");
  p->add_option("--tile-size", prep.p.tile.size);
  p->add_option("--min-area-ha", prep.p.filter.min_burn_area_ha, "positives need burnt area above this");
  p->add_option("--max-invalid", prep.p.filter.max_invalid_fraction, "max LR nodata fraction per tile");
  p->add_option("--fractions", prep.fractions, "train,val,test event fractions")->delimiter(',');
  p->add_option("--negative-ratio", prep.p.negative_ratio, "negatives per positive");
  p->add_option("--seed", prep.p.seed);
  p->add_flag("--common-bands", prep.p.common_bands, "keep only the bands shared by S2 and MODIS");
  p->add_flag("--soft-lr-labels", prep.p.tile.soft_lr_labels);

  TrainCmdOpts tr;
  auto* t = app.add_subcommand("train", "train a model on an archive split");
  t->add_option("--archive", tr.archive)->required();
  t->add_option("--out", tr.out, "run directory")->required();
  t->add_option("--train-split", tr.train_split);
  t->add_option("--val-split", tr.val_split, "validation split, or none");
  t->add_option("--log-every", tr.log_every);
  tr.model.add(t);
  tr.train.add(t);

  EvalCmdOpts ev;
  auto* e = app.add_subcommand("eval", "score checkpoints on an archive split");
  e->add_option("--archive", ev.archive)->required();
  e->add_option("--split", ev.split, "train | val | test | all");
  e->add_option("--checkpoint", ev.checkpoints, "repeat for mean ± std over runs");
  e->add_flag("--labels-as-predictions", ev.labels_as_predictions, "score the labels against themselves");
  e->add_option("--out", ev.out, "write metrics.json, table.txt and ratios.csv here");
  ev.eval.add(e);

  PredictOpts pr;
  auto* pd = app.add_subcommand("predict", "write HR and LR mask rasters");
  pd->add_option("--archive", pr.archive)->required();
  pd->add_option("--checkpoint", pr.checkpoint)->required();
  pd->add_option("--out", pr.out)->required();
  pd->add_option("--split", pr.split, "train | val | test | all");
  pd->add_option("--patch", pr.patch_ids, "restrict to these patch ids");
  pd->add_option("--threshold", pr.threshold);

  AblateOpts ab;
  auto* b = app.add_subcommand("ablate", "siamese mode x LR attention x HR attention sweep");
  b->add_option("--archive", ab.archive)->required();
  b->add_option("--out", ab.out)->required();
  b->add_option("--train-split", ab.train_split);
  b->add_option("--eval-split", ab.eval_split);
  b->add_option("--seeds", ab.n_seeds, "seeds 0..N-1 per row");
  b->add_option("--seed-list", ab.seed_list, "explicit seeds")->delimiter(',');
  ab.model.add(b);
  ab.train.add(b);
  ab.eval.add(b);

  RenderOpts rd;
  auto* r = app.add_subcommand("render", "error overlays, FP/FN ratio CSV and histogram");
  r->add_option("--archive", rd.archive)->required();
  r->add_option("--out", rd.out)->required();
  r->add_option("--split", rd.split, "train | val | test | all");
  r->add_option("--checkpoint", rd.checkpoint);
  r->add_flag("--labels-as-predictions", rd.labels_as_predictions);
  r->add_flag("--transparent-tn", rd.transparent_tn, "no background; true negatives fully transparent");
  r->add_flag("--lr", rd.lr, "also render LR-head overlays on the post-fire MODIS image");
  r->add_option("--max-patches", rd.max_patches, "0: all");
  rd.eval.add(r);

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (p->parsed()) return cmd_prepare(prep);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (pd->parsed()) return cmd_predict(pr);
    if (b->parsed()) return cmd_ablate(ab);
    if (r->parsed()) return cmd_render(rd);
  } catch (const Error& err) {
    return report_error(to_string(err.kind()), err.what(), exit_code(err.kind()));
  } catch (const fs::filesystem_error& err) {
    return report_error("io", err.what(), kExitData);
  } catch (const std::exception& err) {
    return report_error("internal", err.what(), kExitData);
  }
  return kExitUsage;
}
