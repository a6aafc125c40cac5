#pragma once

// Ablation sweep over siamese mode x LR attention x HR attention, N seeds per row.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bamrcd/error.hpp"
#include "bamrcd/evaluate.hpp"
#include "bamrcd/model.hpp"
#include "bamrcd/train.hpp"

namespace bamrcd {

struct AblationRow {
  SiameseMode mode = SiameseMode::pseudo_siamese;
  bool attn_lr = false, attn_hr = false;
};

/// Row order: siamese before pseudo-siamese, then attention off/on for LR, then HR.
inline std::vector<AblationRow> ablation_rows() {
  std::vector<AblationRow> rows;
  for (auto mode : {SiameseMode::siamese, SiameseMode::pseudo_siamese})
    for (bool lr : {false, true})
      for (bool hr : {false, true}) rows.push_back({mode, lr, hr});
  return rows;
}

inline std::string row_label(const AblationRow& r) {
  return std::string(r.mode == SiameseMode::siamese ? "S" : "PS") + " | LR-attn " + (r.attn_lr ? "yes" : "no") +
         " | HR-attn " + (r.attn_hr ? "yes" : "no");
}

struct AblationCell {
  std::uint64_t seed = 0;
  std::optional<MetricsReport> report;
  std::string error;  // non-empty when the cell failed
};

struct AblationResult {
  AblationRow row;
  std::vector<AblationCell> cells;
  std::vector<MeanStd> summary;  // over successful cells
  int n_failed = 0;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  EvalOptions eval;
  std::function<void(const AblationRow&, const AblationCell&)> on_cell;
};

inline std::vector<AblationResult> run_ablation(const ModelConfig& base, const TrainConfig& tcfg,
                                                const std::vector<PatchSample>& train_set,
                                                const std::vector<PatchSample>& eval_set,
                                                const AblationOptions& opt = {}) {
  require(!opt.seeds.empty(), ErrorKind::invalid_argument, "ablation needs at least one seed");
  std::vector<AblationResult> out;
  for (const auto& row : ablation_rows()) {
    AblationResult res;
    res.row = row;
    ModelConfig cfg = base;
    cfg.siamese_mode = row.mode;
    cfg.attn_lr = row.attn_lr;
    cfg.attn_hr = row.attn_hr;
    std::vector<MetricsReport> ok;
    for (auto seed : opt.seeds) {
      AblationCell cell;
      cell.seed = seed;
      try {
        TrainConfig t = tcfg;
        t.seed = seed;
        const auto trained = train(cfg, train_set, t);
        cell.report = evaluate(trained.final, eval_set, opt.eval);
        ok.push_back(*cell.report);
      } catch (const std::exception& e) {
        cell.error = e.what();
        ++res.n_failed;
      }
      if (opt.on_cell) opt.on_cell(row, cell);
      res.cells.push_back(std::move(cell));
    }
    if (!ok.empty()) res.summary = summarize(ok);
    out.push_back(std::move(res));
  }
  return out;
}

inline std::string ablation_table(const std::vector<AblationResult>& results) {
  std::vector<std::string> header{"Siamese", "LR-attn", "HR-attn"};
  for (const auto& c : table_columns()) header.push_back(c);
  header.push_back("Runs");
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : results) {
    std::vector<std::string> line{r.row.mode == SiameseMode::siamese ? "S" : "PS", r.row.attn_lr ? "yes" : "no",
                                  r.row.attn_hr ? "yes" : "no"};
    for (std::size_t k = 0; k < table_columns().size(); ++k)
      line.push_back(r.summary.empty() ? "failed" : format_mean_std(r.summary[k]));
    const int n = static_cast<int>(r.cells.size());
    line.push_back(std::to_string(n - r.n_failed) + "/" + std::to_string(n) + (r.n_failed ? " (failed)" : ""));
    rows.push_back(std::move(line));
  }
  return render_table(header, rows);
}

inline json ablation_json(const std::vector<AblationResult>& results) {
  json rows = json::array();
  for (const auto& r : results) {
    json cells = json::array();
    for (const auto& c : r.cells) {
      json jc{{"seed", c.seed}, {"failed", !c.error.empty()}};
      if (c.report) jc["report"] = to_json(*c.report);
      if (!c.error.empty()) jc["error"] = c.error;
      cells.push_back(std::move(jc));
    }
    rows.push_back({{"siamese_mode", to_string(r.row.mode)},
                    {"attn_lr", r.row.attn_lr},
                    {"attn_hr", r.row.attn_hr},
                    {"summary", r.summary.empty() ? json(nullptr) : summary_json(r.summary)},
                    {"n_failed", r.n_failed},
                    {"cells", std::move(cells)}});
  }
  return json{{"columns", table_columns()}, {"rows", std::move(rows)}};
}

}  // namespace bamrcd
