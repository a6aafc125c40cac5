#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "bamrcd/error.hpp"
#include "bamrcd/model.hpp"
#include "bamrcd/nn/ops.hpp"
#include "bamrcd/nn/tape.hpp"

namespace bamrcd {

/// Mean binary cross-entropy on probabilities, clamped to [eps, 1 - eps].
inline double bce(const std::vector<double>& y, const std::vector<double>& y_hat,
                  double eps = nn::kProbabilityEps) {
  require(y.size() == y_hat.size(), ErrorKind::invalid_argument, "bce: shape mismatch");
  require(!y.empty(), ErrorKind::invalid_argument, "bce of an empty array");
  double total = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::clamp(y_hat[i], eps, 1 - eps);
    total -= y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p);
  }
  return total / static_cast<double>(y.size());
}

struct LossWeights {
  double lr = 1.0;
  double hr = 1.0;
};

struct LossValues {
  double L = 0, L_lr = 0, L_hr = 0;
};

template <class T>
struct LossNodes {
  typename nn::Tape<T>::Id L, L_lr, L_hr;

  LossValues values(const nn::Tape<T>& t) const {
    return {static_cast<double>(t.value(L).data[0]), static_cast<double>(t.value(L_lr).data[0]),
            static_cast<double>(t.value(L_hr).data[0])};
  }
};

/// L = w_lr * BCE(LR head) + w_hr * BCE(HR head).
template <class T>
LossNodes<T> compound_loss(nn::Tape<T>& t, const typename BamMrcd<T>::Nodes& out, nn::Tensor<T> y_hr,
                           nn::Tensor<T> y_lr, LossWeights w = {}) {
  const auto l_lr = nn::bce_with_logits(t, out.lr_logits, std::move(y_lr));
  const auto l_hr = nn::bce_with_logits(t, out.hr_logits, std::move(y_hr));
  const auto total = nn::weighted_sum(t, l_lr, static_cast<T>(w.lr), l_hr, static_cast<T>(w.hr));
  return {total, l_lr, l_hr};
}

template <class T>
LossValues compound_loss(const ModelOutputs<T>& out, const nn::Tensor<T>& y_hr, const nn::Tensor<T>& y_lr,
                         LossWeights w = {}) {
  nn::Tape<T> t(false);
  typename BamMrcd<T>::Nodes n{t.constant(out.y_lr_logits), t.constant(out.y_hr_logits), 0};
  return compound_loss(t, n, y_hr, y_lr, w).values(t);
}

}  // namespace bamrcd
