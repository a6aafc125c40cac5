#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bamrcd/error.hpp"
#include "bamrcd/nn/params.hpp"

namespace bamrcd {

enum class Schedule { linear_decay, constant };

inline const char* to_string(Schedule s) { return s == Schedule::constant ? "constant" : "linear_decay"; }

inline Schedule schedule_from_string(const std::string& s) {
  if (s == "linear_decay" || s == "linear") return Schedule::linear_decay;
  if (s == "constant") return Schedule::constant;
  fail(ErrorKind::invalid_argument, "unknown schedule '" + s + "'");
}

inline double linear_lr(std::int64_t step, std::int64_t total_steps, double lr0,
                        Schedule schedule = Schedule::linear_decay) {
  require(total_steps >= 1 && step >= 0 && step <= total_steps, ErrorKind::invalid_argument,
          "schedule step out of range");
  if (schedule == Schedule::constant) return lr0;
  return lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> m, v;

  AdamState() = default;
  explicit AdamState(const nn::Parameters<T>& p) {
    for (const auto& a : p.storage()) {
      m.emplace_back(a.size(), T{});
      v.emplace_back(a.size(), T{});
    }
  }
};

/// One bias-corrected Adam update over every storage slot. Tied arrays hold a single slot, so
/// they see the summed gradient of all their views once.
template <class T>
void adam_step(nn::Parameters<T>& params, const nn::Gradients<T>& grads, AdamState<T>& st, double lr,
               const AdamConfig& cfg = {}) {
  require(grads.slots.size() == params.storage_count() && st.m.size() == params.storage_count(),
          ErrorKind::invalid_argument, "optimizer state does not match the parameter set");
  for (std::size_t i = 0; i < grads.slots.size(); ++i)
    for (T g : grads.slots[i])
      if (!std::isfinite(static_cast<double>(g)))
        fail(ErrorKind::training, "non-finite gradient in " + params[i].name);

  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < grads.slots.size(); ++i) {
    auto& p = params[i].value;
    auto& m = st.m[i];
    auto& v = st.v[i];
    const auto& g = grads.slots[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = cfg.beta1 * m[k] + (1 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * v[k] + (1 - cfg.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      p[k] = static_cast<T>(p[k] - lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg.eps));
    }
  }
}

}  // namespace bamrcd
