#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "bamrcd/error.hpp"
#include "bamrcd/nn/tape.hpp"
#include "bamrcd/nn/tensor.hpp"

namespace bamrcd::nn {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

template <class T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* cols) {
  const std::size_t P = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * P;
        const T* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* out = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, T{});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            out[ox] = (ix >= 0 && ix < w) ? src[ix] : T{};
          }
        }
      }
}

template <class T>
void col2im(const T* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
  const std::size_t P = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * P;
        T* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* in = row + static_cast<std::size_t>(oy) * wo;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += in[ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution with square kernels. Weight layout [Cout, Cin, k, k]; bias [1, Cout, 1, 1].
template <class T>
typename Tape<T>::Id conv2d(Tape<T>& t, typename Tape<T>::Id x, typename Tape<T>::Id weight,
                            std::optional<typename Tape<T>::Id> bias, int stride, int pad) {
  using Map = Eigen::Map<RowMatrix<T>>;
  using CMap = Eigen::Map<const RowMatrix<T>>;
  const auto& X = t.value(x);
  const auto& W = t.value(weight);
  const int cout = W.n, cin = W.c, k = W.h;
  require(X.c == cin, ErrorKind::invalid_argument,
          "conv2d expects " + std::to_string(cin) + " input channels, got " + std::to_string(X.c));
  const int ho = (X.h + 2 * pad - k) / stride + 1;
  const int wo = (X.w + 2 * pad - k) / stride + 1;
  require(ho > 0 && wo > 0, ErrorKind::invalid_argument, "conv2d output would be empty");
  const int K = cin * k * k;
  const int P = ho * wo;
  const bool direct = k == 1 && stride == 1 && pad == 0;

  Tensor<T> Y(X.n, cout, ho, wo);
  std::vector<T> cols(direct ? 0 : static_cast<std::size_t>(K) * P);
  CMap Wm(W.data.data(), cout, K);
  for (int n = 0; n < X.n; ++n) {
    const T* src = X.sample(n);
    if (!direct) {
      detail::im2col(src, cin, X.h, X.w, k, stride, pad, ho, wo, cols.data());
      src = cols.data();
    }
    Map Ym(Y.sample(n), cout, P);
    Ym.noalias() = Wm * CMap(src, K, P);
    if (bias) {
      const auto& B = t.value(*bias);
      for (int o = 0; o < cout; ++o) Ym.row(o).array() += B.data[o];
    }
  }

  std::vector<typename Tape<T>::Id> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return t.record(std::move(Y), inputs,
                  [=](Tape<T>& tp, typename Tape<T>::Id self) {
                    const auto& Xv = tp.value(x);
                    const auto& Wv = tp.value(weight);
                    const auto& dY = tp.grad(self);
                    CMap Wmat(Wv.data.data(), cout, K);
                    std::vector<T> buf(direct ? 0 : static_cast<std::size_t>(K) * P);
                    std::vector<T> dcols(static_cast<std::size_t>(K) * P);
                    const bool want_x = tp.needs_grad(x), want_w = tp.needs_grad(weight);
                    const bool want_b = bias && tp.needs_grad(*bias);
                    for (int n = 0; n < Xv.n; ++n) {
                      CMap dYm(dY.sample(n), cout, P);
                      if (want_w) {
                        const T* src = Xv.sample(n);
                        if (!direct) {
                          detail::im2col(src, cin, Xv.h, Xv.w, k, stride, pad, ho, wo, buf.data());
                          src = buf.data();
                        }
                        Map dW(tp.grad(weight).data.data(), cout, K);
                        dW.noalias() += dYm * CMap(src, K, P).transpose();
                      }
                      if (want_b) {
                        auto& dB = tp.grad(*bias);
                        for (int o = 0; o < cout; ++o) dB.data[o] += dYm.row(o).sum();
                      }
                      if (want_x) {
                        T* dx = tp.grad(x).sample(n);
                        if (direct) {
                          Map dXm(dx, K, P);
                          dXm.noalias() += Wmat.transpose() * dYm;
                        } else {
                          Map dC(dcols.data(), K, P);
                          dC.noalias() = Wmat.transpose() * dYm;
                          detail::col2im(dcols.data(), cin, Xv.h, Xv.w, k, stride, pad, ho, wo, dx);
                        }
                      }
                    }
                  });
}

/// Per-sample group normalisation with per-channel affine [1, C, 1, 1].
template <class T>
typename Tape<T>::Id group_norm(Tape<T>& t, typename Tape<T>::Id x, typename Tape<T>::Id gamma,
                                typename Tape<T>::Id beta, int groups, double eps = 1e-5) {
  const auto& X = t.value(x);
  const auto& G = t.value(gamma);
  const auto& B = t.value(beta);
  require(groups > 0 && X.c % groups == 0, ErrorKind::invalid_argument,
          "group count must divide the channel count");
  const int cpg = X.c / groups;
  const std::size_t plane = X.plane();
  const std::size_t m = cpg * plane;
  Tensor<T> Y(X.n, X.c, X.h, X.w);
  Tensor<T> xhat(X.n, X.c, X.h, X.w);
  std::vector<T> inv_std(static_cast<std::size_t>(X.n) * groups);
  for (int n = 0; n < X.n; ++n)
    for (int g = 0; g < groups; ++g) {
      const std::size_t off = static_cast<std::size_t>(n) * X.sample_size() + g * m;
      double mean = 0;
      for (std::size_t i = 0; i < m; ++i) mean += X.data[off + i];
      mean /= static_cast<double>(m);
      double var = 0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = X.data[off + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
      inv_std[static_cast<std::size_t>(n) * groups + g] = is;
      for (std::size_t i = 0; i < m; ++i) {
        const int ch = g * cpg + static_cast<int>(i / plane);
        const T xh = (X.data[off + i] - static_cast<T>(mean)) * is;
        xhat.data[off + i] = xh;
        Y.data[off + i] = G.data[ch] * xh + B.data[ch];
      }
    }
  return t.record(std::move(Y), {x, gamma, beta},
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape<T>& tp, typename Tape<T>::Id self) {
                    const auto& dY = tp.grad(self);
                    const auto& Gv = tp.value(gamma);
                    const bool want_x = tp.needs_grad(x);
                    const bool want_g = tp.needs_grad(gamma), want_b = tp.needs_grad(beta);
                    const int n_samples = dY.n, channels = dY.c;
                    const std::size_t sample = dY.sample_size();
                    std::vector<T> dxhat(m);
                    for (int n = 0; n < n_samples; ++n)
                      for (int g = 0; g < groups; ++g) {
                        const std::size_t off = static_cast<std::size_t>(n) * sample + g * m;
                        double mean_d = 0, mean_dx = 0;
                        for (std::size_t i = 0; i < m; ++i) {
                          const int ch = g * cpg + static_cast<int>(i / plane);
                          const T dy = dY.data[off + i];
                          if (want_g) tp.grad(gamma).data[ch] += dy * xhat.data[off + i];
                          if (want_b) tp.grad(beta).data[ch] += dy;
                          dxhat[i] = dy * Gv.data[ch];
                          mean_d += dxhat[i];
                          mean_dx += dxhat[i] * xhat.data[off + i];
                        }
                        if (!want_x) continue;
                        mean_d /= static_cast<double>(m);
                        mean_dx /= static_cast<double>(m);
                        const T is = inv_std[static_cast<std::size_t>(n) * groups + g];
                        auto& dX = tp.grad(x);
                        for (std::size_t i = 0; i < m; ++i)
                          dX.data[off + i] += is * (dxhat[i] - static_cast<T>(mean_d) -
                                                    xhat.data[off + i] * static_cast<T>(mean_dx));
                      }
                    (void)channels;
                  });
}

template <class T>
typename Tape<T>::Id relu(Tape<T>& t, typename Tape<T>::Id x) {
  Tensor<T> Y = t.value(x);
  std::vector<bool> on(Y.size());
  for (std::size_t i = 0; i < Y.size(); ++i) on[i] = t.sign_pattern() ? t.next_pattern_bit() : Y.data[i] > T{};
  if (auto* log = t.sign_log()) log->insert(log->end(), on.begin(), on.end());
  for (std::size_t i = 0; i < Y.size(); ++i)
    if (!on[i] && !std::isnan(Y.data[i])) Y.data[i] = T{};  // NaN passes through
  return t.record(std::move(Y), {x}, [=, on = std::move(on)](Tape<T>& tp, typename Tape<T>::Id self) {
    const auto& dY = tp.grad(self);
    auto& dX = tp.grad(x);
    for (std::size_t i = 0; i < dY.size(); ++i)
      if (on[i]) dX.data[i] += dY.data[i];
  });
}

template <class T>
T logistic(T v) {
  return T{1} / (T{1} + std::exp(-v));
}

template <class T>
typename Tape<T>::Id sigmoid(Tape<T>& t, typename Tape<T>::Id x) {
  Tensor<T> Y = t.value(x);
  for (auto& v : Y.data) v = logistic(v);
  return t.record(std::move(Y), {x}, [=](Tape<T>& tp, typename Tape<T>::Id self) {
    const auto& Yv = tp.value(self);
    const auto& dY = tp.grad(self);
    auto& dX = tp.grad(x);
    for (std::size_t i = 0; i < Yv.size(); ++i)
      dX.data[i] += dY.data[i] * Yv.data[i] * (T{1} - Yv.data[i]);
  });
}

template <class T>
typename Tape<T>::Id add(Tape<T>& t, typename Tape<T>::Id a, typename Tape<T>::Id b) {
  require(t.value(a).same_shape(t.value(b)), ErrorKind::invalid_argument, "add: shape mismatch");
  Tensor<T> Y = t.value(a);
  const auto& B = t.value(b);
  for (std::size_t i = 0; i < Y.size(); ++i) Y.data[i] += B.data[i];
  return t.record(std::move(Y), {a, b}, [=](Tape<T>& tp, typename Tape<T>::Id self) {
    const auto& dY = tp.grad(self);
    for (auto in : {a, b}) {
      if (!tp.needs_grad(in)) continue;
      auto& d = tp.grad(in);
      for (std::size_t i = 0; i < dY.size(); ++i) d.data[i] += dY.data[i];
    }
  });
}

/// Channel concatenation, inputs in order.
template <class T>
typename Tape<T>::Id concat(Tape<T>& t, const std::vector<typename Tape<T>::Id>& xs) {
  require(!xs.empty(), ErrorKind::invalid_argument, "concat of nothing");
  const auto& f = t.value(xs.front());
  int channels = 0;
  for (auto id : xs) {
    const auto& v = t.value(id);
    require(v.n == f.n && v.h == f.h && v.w == f.w, ErrorKind::invalid_argument,
            "concat: spatial or batch mismatch");
    channels += v.c;
  }
  Tensor<T> Y(f.n, channels, f.h, f.w);
  for (int n = 0; n < f.n; ++n) {
    T* dst = Y.sample(n);
    for (auto id : xs) {
      const auto& v = t.value(id);
      std::copy(v.sample(n), v.sample(n) + v.sample_size(), dst);
      dst += v.sample_size();
    }
  }
  return t.record(std::move(Y), xs, [xs](Tape<T>& tp, typename Tape<T>::Id self) {
    const auto& dY = tp.grad(self);
    for (int n = 0; n < dY.n; ++n) {
      const T* src = dY.sample(n);
      for (auto id : xs) {
        const std::size_t len = tp.value(id).sample_size();
        if (tp.needs_grad(id)) {
          T* d = tp.grad(id).sample(n);
          for (std::size_t i = 0; i < len; ++i) d[i] += src[i];
        }
        src += len;
      }
    }
  });
}

template <class T>
typename Tape<T>::Id upsample_nearest(Tape<T>& t, typename Tape<T>::Id x, int factor) {
  const auto& X = t.value(x);
  Tensor<T> Y(X.n, X.c, X.h * factor, X.w * factor);
  for (int n = 0; n < X.n; ++n)
    for (int c = 0; c < X.c; ++c)
      for (int y = 0; y < Y.h; ++y)
        for (int xx = 0; xx < Y.w; ++xx) Y.at(n, c, y, xx) = X.at(n, c, y / factor, xx / factor);
  return t.record(std::move(Y), {x}, [=](Tape<T>& tp, typename Tape<T>::Id self) {
    const auto& dY = tp.grad(self);
    auto& dX = tp.grad(x);
    for (int n = 0; n < dY.n; ++n)
      for (int c = 0; c < dY.c; ++c)
        for (int y = 0; y < dY.h; ++y)
          for (int xx = 0; xx < dY.w; ++xx) dX.at(n, c, y / factor, xx / factor) += dY.at(n, c, y, xx);
  });
}

/// Mean over each channel plane, output [N, C, 1, 1].
template <class T>
typename Tape<T>::Id global_avg_pool(Tape<T>& t, typename Tape<T>::Id x) {
  const auto& X = t.value(x);
  Tensor<T> Y(X.n, X.c, 1, 1);
  const std::size_t plane = X.plane();
  for (int n = 0; n < X.n; ++n)
    for (int c = 0; c < X.c; ++c) {
      const T* p = X.sample(n) + c * plane;
      double s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      Y.at(n, c, 0, 0) = static_cast<T>(s / static_cast<double>(plane));
    }
  return t.record(std::move(Y), {x}, [=](Tape<T>& tp, typename Tape<T>::Id self) {
    const auto& dY = tp.grad(self);
    auto& dX = tp.grad(x);
    const T inv = T{1} / static_cast<T>(plane);
    for (int n = 0; n < dX.n; ++n)
      for (int c = 0; c < dX.c; ++c) {
        T* p = dX.sample(n) + c * plane;
        const T g = dY.at(n, c, 0, 0) * inv;
        for (std::size_t i = 0; i < plane; ++i) p[i] += g;
      }
  });
}

/// out[n, c] = x[n, c] * gate[n, c] with gate shaped [N, C, 1, 1].
template <class T>
typename Tape<T>::Id scale_channels(Tape<T>& t, typename Tape<T>::Id x, typename Tape<T>::Id gate) {
  const auto& X = t.value(x);
  const auto& G = t.value(gate);
  require(G.n == X.n && G.c == X.c && G.h == 1 && G.w == 1, ErrorKind::invalid_argument,
          "scale_channels: gate shape mismatch");
  Tensor<T> Y = X;
  const std::size_t plane = X.plane();
  for (int n = 0; n < X.n; ++n)
    for (int c = 0; c < X.c; ++c) {
      T* p = Y.sample(n) + c * plane;
      const T g = G.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) p[i] *= g;
    }
  return t.record(std::move(Y), {x, gate}, [=](Tape<T>& tp, typename Tape<T>::Id self) {
    const auto& Xv = tp.value(x);
    const auto& Gv = tp.value(gate);
    const auto& dY = tp.grad(self);
    const bool want_x = tp.needs_grad(x), want_g = tp.needs_grad(gate);
    for (int n = 0; n < Xv.n; ++n)
      for (int c = 0; c < Xv.c; ++c) {
        const T* dy = dY.sample(n) + c * plane;
        const T* xv = Xv.sample(n) + c * plane;
        if (want_x) {
          T* dx = tp.grad(x).sample(n) + c * plane;
          const T g = Gv.at(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) dx[i] += dy[i] * g;
        }
        if (want_g) {
          T s{};
          for (std::size_t i = 0; i < plane; ++i) s += dy[i] * xv[i];
          tp.grad(gate).at(n, c, 0, 0) += s;
        }
      }
  });
}

inline constexpr double kProbabilityEps = 1e-7;

/// Mean binary cross-entropy of logistic(logits) against `target`, probabilities clamped to
/// [eps, 1 - eps]. Returns a [1,1,1,1] node.
template <class T>
typename Tape<T>::Id bce_with_logits(Tape<T>& t, typename Tape<T>::Id logits, Tensor<T> target,
                                     double eps = kProbabilityEps) {
  const auto& Z = t.value(logits);
  require(Z.same_shape(target), ErrorKind::invalid_argument, "bce: shape mismatch");
  const std::size_t count = Z.size();
  double total = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double p = std::clamp(1.0 / (1.0 + std::exp(-static_cast<double>(Z.data[i]))), eps, 1 - eps);
    const double y = target.data[i];
    total -= y * std::log(p) + (1 - y) * std::log(1 - p);
  }
  Tensor<T> L(1, 1, 1, 1, static_cast<T>(total / static_cast<double>(count)));
  return t.record(std::move(L), {logits},
                  [=, target = std::move(target)](Tape<T>& tp, typename Tape<T>::Id self) {
                    const auto& Zv = tp.value(logits);
                    const T g = tp.grad(self).data[0] / static_cast<T>(count);
                    auto& dZ = tp.grad(logits);
                    for (std::size_t i = 0; i < count; ++i) {
                      const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(Zv.data[i])));
                      if (p < eps || p > 1 - eps) continue;  // clamped: flat
                      dZ.data[i] += g * static_cast<T>(p - target.data[i]);
                    }
                  });
}

/// wa * a + wb * b for scalar nodes.
template <class T>
typename Tape<T>::Id weighted_sum(Tape<T>& t, typename Tape<T>::Id a, T wa, typename Tape<T>::Id b, T wb) {
  Tensor<T> L(1, 1, 1, 1, wa * t.value(a).data[0] + wb * t.value(b).data[0]);
  return t.record(std::move(L), {a, b}, [=](Tape<T>& tp, typename Tape<T>::Id self) {
    const T g = tp.grad(self).data[0];
    if (tp.needs_grad(a)) tp.grad(a).data[0] += wa * g;
    if (tp.needs_grad(b)) tp.grad(b).data[0] += wb * g;
  });
}

}  // namespace bamrcd::nn
