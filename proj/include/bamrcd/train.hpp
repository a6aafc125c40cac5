#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bamrcd/augment.hpp"
#include "bamrcd/checkpoint.hpp"
#include "bamrcd/error.hpp"
#include "bamrcd/evaluate.hpp"
#include "bamrcd/loss.hpp"
#include "bamrcd/model.hpp"
#include "bamrcd/optim.hpp"
#include "bamrcd/patch.hpp"
#include "bamrcd/rng.hpp"

namespace bamrcd {

struct TrainConfig {
  double lr0 = 1e-4;
  std::int64_t total_steps = 1000;
  int batch_size = 4;
  std::uint64_t seed = 0;
  Schedule schedule = Schedule::linear_decay;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  AugmentationConfig aug;
  std::int64_t checkpoint_every = 0;  // 0: final only
  std::int64_t validate_every = 0;    // 0: no best-val tracking
  LossWeights loss_weights;
  bool soft_lr_labels = false;

  void validate() const {
    require(lr0 > 0, ErrorKind::invalid_argument, "lr0 must be positive");
    require(total_steps >= 1, ErrorKind::invalid_argument, "total_steps must be at least 1");
    require(batch_size >= 1, ErrorKind::invalid_argument, "batch_size must be at least 1");
    require(checkpoint_every >= 0 && validate_every >= 0, ErrorKind::invalid_argument,
            "checkpoint/validation intervals must be non-negative");
    require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0,
            ErrorKind::invalid_argument, "invalid Adam hyper-parameters");
    aug.validate();
  }

  AdamConfig adam() const { return {adam_beta1, adam_beta2, adam_eps}; }
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr0", c.lr0},
           {"total_steps", c.total_steps},
           {"batch_size", c.batch_size},
           {"seed", c.seed},
           {"schedule", to_string(c.schedule)},
           {"adam_betas", {c.adam_beta1, c.adam_beta2}},
           {"adam_eps", c.adam_eps},
           {"aug",
            {{"p_hflip", c.aug.p_hflip},
             {"p_vflip", c.aug.p_vflip},
             {"p_rot", c.aug.p_rot},
             {"rot_range_deg", {c.aug.rot_min_deg, c.aug.rot_max_deg}}}},
           {"checkpoint_every", c.checkpoint_every},
           {"validate_every", c.validate_every},
           {"loss_weights", {{"lr", c.loss_weights.lr}, {"hr", c.loss_weights.hr}}},
           {"soft_lr_labels", c.soft_lr_labels}};
}

struct TraceRow {
  std::int64_t step = 0;
  double lr = 0;
  double L = 0, L_lr = 0, L_hr = 0;
  double wall_ms = 0;
};

inline std::string trace_csv(const std::vector<TraceRow>& rows) {
  std::string out = "step,lr,L,L_lr,L_hr,wall_ms\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.3f\n", static_cast<long long>(r.step), r.lr, r.L,
                  r.L_lr, r.L_hr, r.wall_ms);
    out += buf;
  }
  return out;
}

struct TrainResult {
  Checkpoint final;
  std::vector<TraceRow> trace;
  std::optional<Checkpoint> best;
  std::optional<double> best_val_f1;
  std::vector<fs::path> written;
};

struct TrainHooks {
  std::function<void(const TraceRow&)> on_step;
  std::optional<fs::path> out_dir;  // checkpoints and trace are written here when set
};

/// Deterministic sample order: a fresh seeded permutation per epoch.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::vector<std::size_t> next(int batch) {
    std::vector<std::size_t> out;
    while (static_cast<int>(out.size()) < batch) {
      if (pos_ == order_.size()) refill();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void refill() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(mix_seed(seed_, {0x5eed, epoch_++}));
    std::shuffle(order_.begin(), order_.end(), rng.engine());
    pos_ = 0;
  }

  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

struct Batch {
  nn::Tensor<float> hr, lr_pre, lr_post, y_hr, y_lr;
  std::vector<std::string> ids;
};

inline Batch make_batch(const std::vector<PatchSample>& samples) {
  Batch b;
  std::vector<const Image*> hr, a, c, ylr;
  std::vector<Image> yhr;
  yhr.reserve(samples.size());
  for (const auto& s : samples) {
    hr.push_back(&s.hr_pre);
    a.push_back(&s.lr_pre);
    c.push_back(&s.lr_post);
    yhr.push_back(mask_to_image(s.label_hr));
    ylr.push_back(&s.label_lr);
    b.ids.push_back(s.patch_id);
  }
  std::vector<const Image*> yh;
  for (const auto& y : yhr) yh.push_back(&y);
  b.hr = nn::stack<float>(hr);
  b.lr_pre = nn::stack<float>(a);
  b.lr_post = nn::stack<float>(c);
  b.y_hr = nn::stack<float>(yh);
  b.y_lr = nn::stack<float>(ylr);
  return b;
}

/// Loss of each batch member alone; used to name the culprit of a non-finite batch loss.
inline std::string first_nonfinite_patch(const BamMrcd<float>& model, const nn::Parameters<float>& params,
                                         const std::vector<PatchSample>& samples, const LossWeights& w) {
  for (const auto& s : samples) {
    const auto b = make_batch({s});
    const auto out = model.run(params, b.hr, b.lr_pre, b.lr_post);
    const auto l = compound_loss(out, b.y_hr, b.y_lr, w);
    if (!std::isfinite(l.L)) return s.patch_id;
  }
  return samples.empty() ? "?" : samples.front().patch_id;
}

/// One forward/backward over a batch; returns the loss values and fills `grads`.
inline LossValues loss_and_gradients(const BamMrcd<float>& model, const nn::Parameters<float>& params,
                                     const Batch& b, const LossWeights& w, nn::Gradients<float>& grads) {
  nn::Tape<float> tape(true);
  nn::Binder<float> binder(tape, params);
  const auto nodes = model.forward(binder, tape.constant(b.hr), tape.constant(b.lr_pre), tape.constant(b.lr_post));
  const auto loss = compound_loss(tape, nodes, b.y_hr, b.y_lr, w);
  const auto v = loss.values(tape);
  if (std::isfinite(v.L)) {
    tape.backward(loss.L);
    grads.zero();
    tape.accumulate(grads);
  }
  return v;
}

inline TrainResult train(const ModelConfig& mcfg, const std::vector<PatchSample>& train_set, const TrainConfig& cfg,
                         const std::vector<PatchSample>& val_set = {}, const TrainHooks& hooks = {}) {
  cfg.validate();
  require(!train_set.empty(), ErrorKind::invalid_argument, "training split is empty");
  check_compatible(mcfg, train_set);
  if (!val_set.empty()) check_compatible(mcfg, val_set);

  const BamMrcd<float> model(mcfg);
  TrainResult res;
  Checkpoint& ck = res.final;
  ck.config = mcfg;
  ck.seed = cfg.seed;
  ck.params = model.init_params(cfg.seed);
  ck.optimizer = AdamState<float>(ck.params);
  ck.metadata["train"] = cfg;
  nn::Gradients<float> grads(ck.params);
  BatchStream stream(train_set.size(), cfg.seed);

  auto write = [&](const Checkpoint& c, const std::string& name) {
    if (!hooks.out_dir) return;
    const auto p = *hooks.out_dir / name;
    save_checkpoint(p, c);
    res.written.push_back(p);
  };

  const auto t_start = std::chrono::steady_clock::now();
  for (std::int64_t step = 0; step < cfg.total_steps; ++step) {
    const auto idx = stream.next(cfg.batch_size);
    std::vector<PatchSample> samples;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Rng rng(mix_seed(cfg.seed, {0xa06, static_cast<std::uint64_t>(step), k}));
      samples.push_back(augment(train_set[idx[k]], rng, cfg.aug, cfg.soft_lr_labels));
    }
    const auto batch = make_batch(samples);
    const auto lv = loss_and_gradients(model, ck.params, batch, cfg.loss_weights, grads);
    if (!std::isfinite(lv.L))
      fail(ErrorKind::training, "non-finite loss at step " + std::to_string(step + 1) + " (patch " +
                                    first_nonfinite_patch(model, ck.params, samples, cfg.loss_weights) + ")");
    const double lr = linear_lr(step, cfg.total_steps, cfg.lr0, cfg.schedule);
    try {
      adam_step(ck.params, grads, *ck.optimizer, lr, cfg.adam());
    } catch (const Error& e) {
      fail(ErrorKind::training, "step " + std::to_string(step + 1) + ": " + e.what());
    }
    ck.step = step + 1;

    TraceRow row{ck.step, lr, lv.L, lv.L_lr, lv.L_hr,
                 std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count()};
    res.trace.push_back(row);
    if (hooks.on_step) hooks.on_step(row);

    if (cfg.checkpoint_every > 0 && ck.step % cfg.checkpoint_every == 0 && ck.step != cfg.total_steps)
      write(ck, "step_" + std::to_string(ck.step) + ".ckpt");
    const bool last = ck.step == cfg.total_steps;
    if (!val_set.empty() && cfg.validate_every > 0 && (ck.step % cfg.validate_every == 0 || last)) {
      const auto rep = evaluate(ck, val_set);
      const double f1 = rep.hr.f1.value_or(0.0);
      if (!res.best_val_f1 || f1 > *res.best_val_f1) {
        res.best_val_f1 = f1;
        res.best = ck;
        res.best->metadata["val_f1"] = f1;
        write(*res.best, "best.ckpt");
      }
    }
  }
  write(ck, "final.ckpt");
  if (hooks.out_dir) {
    const auto p = *hooks.out_dir / "trace.csv";
    write_text_file(p, trace_csv(res.trace));
    res.written.push_back(p);
  }
  return res;
}

}  // namespace bamrcd
