#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "bamrcd/error.hpp"
#include "bamrcd/loss.hpp"
#include "bamrcd/model.hpp"
#include "bamrcd/rng.hpp"

namespace bamrcd {

struct GradCheckOptions {
  int patch = 32;
  int batch = 2;
  std::size_t min_samples = 200;
  double h = 1e-4;
  double tolerance = 1e-5;
  // Denominator floor: at h = 1e-4 in double precision the difference quotient resolves
  // gradients only to about 1e-10 absolute, so smaller gradients are judged against the floor.
  double abs_floor = 1e-4;
  double perturb_sigma = 0.1;
};

struct GradCheckEntry {
  std::string array;
  std::size_t index = 0;
  double analytic = 0, numeric = 0, rel_error = 0;
  bool kink_free = true;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t n_checked = 0;
  std::size_t n_arrays = 0;
  std::size_t n_arrays_covered = 0;
  std::size_t n_kink_free = 0;          // probes whose stencil stays on one linear piece
  double max_rel_error_kink_free = 0;
  std::set<std::string> kinds_covered;
  std::vector<GradCheckEntry> worst;  // descending by rel_error
  bool passed = false;
};

/// Two-stage widths, one normalisation group per layer: per-channel groups on the 2x2 deepest LR
/// grid hold four elements, where the stencil's truncation error swamps the comparison.
/// Narrow UNet keeps every variant under 10k scalars.
inline ModelConfig tiny_check_config(SiameseMode mode, bool attn_lr, bool attn_hr) {
  ModelConfig c;
  c.widths = {4, 8};
  c.hr_widths = {2, 2, 4, 4};
  c.siamese_mode = mode;
  c.attn_lr = attn_lr;
  c.attn_hr = attn_hr;
  c.norm_groups = 1;
  return c;
}

inline double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Compares analytic compound-loss gradients with central finite differences in double precision.
/// Parameters are perturbed away from the initial state so zero-initialised gates carry signal.
inline GradCheckReport grad_check(const ModelConfig& cfg, std::uint64_t seed, const GradCheckOptions& opt = {}) {
  const BamMrcd<double> model(cfg);
  auto params = model.init_params(seed);
  Rng rng(mix_seed(seed, {0x9c}));
  for (auto& a : params.storage())
    for (auto& v : a.value) v += rng.normal(0.0, opt.perturb_sigma);

  const int H = opt.patch, h = opt.patch / cfg.s;
  nn::Tensor<double> hr(opt.batch, cfg.c1, H, H), a(opt.batch, cfg.c2, h, h), b(opt.batch, cfg.c2, h, h);
  nn::Tensor<double> y_hr(opt.batch, 1, H, H), y_lr(opt.batch, 1, h, h);
  for (auto* t : {&hr, &a, &b})
    for (auto& v : t->data) v = rng.uniform(0.0, 1.0);
  for (auto& v : y_hr.data) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
  for (auto& v : y_lr.data) v = rng.bernoulli(0.3) ? 1.0 : 0.0;

  auto loss_of = [&](const nn::Parameters<double>& p, std::vector<bool>* log, const std::vector<bool>* pattern) {
    return compound_loss(model.run(p, hr, a, b, log, pattern), y_hr, y_lr).L;
  };
  std::vector<bool> base_signs;
  loss_of(params, &base_signs, nullptr);

  nn::Gradients<double> grads(params);
  {
    nn::Tape<double> tape(true);
    nn::Binder<double> binder(tape, params);
    const auto nodes = model.forward(binder, tape.constant(hr), tape.constant(a), tape.constant(b));
    const auto loss = compound_loss(tape, nodes, y_hr, y_lr);
    tape.backward(loss.L);
    tape.accumulate(grads);
  }

  std::vector<std::size_t> offsets{0};
  for (const auto& arr : params.storage()) offsets.push_back(offsets.back() + arr.size());

  GradCheckReport rep;
  rep.n_arrays = params.storage_count();
  std::set<std::size_t> covered;
  std::vector<GradCheckEntry> all;
  std::set<std::pair<std::size_t, std::size_t>> seen;

  // Central difference at one scalar. Where +-h moves a rectifier input across zero the loss
  // has a kink inside the stencil; there the difference is taken with the rectifier pattern held
  // at the base point, which is the function the analytic gradient differentiates.
  auto probe = [&](std::size_t slot, std::size_t k) {
    if (!seen.insert({slot, k}).second) return;
    auto& v = params[slot].value[k];
    const double orig = v;
    auto eval = [&](double x) {
      v = x;
      std::vector<bool> signs;
      double l = loss_of(params, &signs, nullptr);
      const bool smooth = signs == base_signs;
      if (!smooth) l = loss_of(params, nullptr, &base_signs);
      return std::pair{l, smooth};
    };
    const auto [lp, sp] = eval(orig + opt.h);
    const auto [lm, sm] = eval(orig - opt.h);
    v = orig;
    GradCheckEntry e;
    e.array = params[slot].name;
    e.index = k;
    e.analytic = grads.slots[slot][k];
    e.numeric = (lp - lm) / (2 * opt.h);
    e.rel_error = relative_error(e.analytic, e.numeric, opt.abs_floor);
    e.kink_free = sp && sm;
    if (e.kink_free) {
      ++rep.n_kink_free;
      rep.max_rel_error_kink_free = std::max(rep.max_rel_error_kink_free, e.rel_error);
    }
    all.push_back(e);
    covered.insert(slot);
    rep.kinds_covered.insert(nn::to_string(params[slot].kind));
  };

  // One element from every array, then uniform draws over all scalars.
  for (std::size_t i = 0; i < params.storage_count(); ++i)
    probe(i, static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(params[i].size()) - 1)));
  while (all.size() < std::min(opt.min_samples, offsets.back())) {
    const auto flat = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(offsets.back()) - 1));
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat) - 1;
    probe(static_cast<std::size_t>(it - offsets.begin()), flat - *it);
  }
  std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.rel_error > y.rel_error; });
  rep.n_checked = all.size();
  rep.n_arrays_covered = covered.size();
  rep.max_rel_error = all.empty() ? 0.0 : all.front().rel_error;
  all.resize(std::min<std::size_t>(all.size(), 5));
  rep.worst = std::move(all);
  rep.passed = rep.max_rel_error < opt.tolerance && rep.n_arrays_covered == rep.n_arrays &&
               rep.n_checked >= std::min(opt.min_samples, offsets.back());
  return rep;
}

}  // namespace bamrcd
