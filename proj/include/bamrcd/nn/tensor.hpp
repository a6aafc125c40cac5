#pragma once

#include <cstddef>
#include <vector>

#include "bamrcd/error.hpp"
#include "bamrcd/grid.hpp"

namespace bamrcd::nn {

/// NCHW tensor.
template <class T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T{}) : n(n_), c(c_), h(h_), w(w_) {
    data.assign(static_cast<std::size_t>(n) * c * h * w, fill);
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const noexcept { return static_cast<std::size_t>(c) * h * w; }
  T* sample(int i) noexcept { return data.data() + i * sample_size(); }
  const T* sample(int i) const noexcept { return data.data() + i * sample_size(); }

  T& at(int i, int ch, int y, int x) noexcept {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  const T& at(int i, int ch, int y, int x) const noexcept {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }

  bool same_shape(const Tensor& o) const noexcept {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

/// Stacks equally shaped images into an N x C x H x W tensor.
template <class T, class U>
Tensor<T> stack(const std::vector<const Grid<U>*>& images) {
  require(!images.empty(), ErrorKind::invalid_argument, "cannot stack an empty batch");
  const auto& first = *images.front();
  Tensor<T> out(static_cast<int>(images.size()), first.channels(), first.rows(), first.cols());
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(images[i]->same_shape(first), ErrorKind::invalid_argument,
            "batch members have different shapes");
    const auto& d = images[i]->data();
    T* dst = out.sample(static_cast<int>(i));
    for (std::size_t k = 0; k < d.size(); ++k) dst[k] = static_cast<T>(d[k]);
  }
  return out;
}

template <class T, class U>
Tensor<T> to_tensor(const Grid<U>& image) {
  return stack<T, U>({&image});
}

template <class T>
Image sample_to_image(const Tensor<T>& t, int i) {
  Image out(t.c, t.h, t.w);
  const T* src = t.sample(i);
  for (std::size_t k = 0; k < t.sample_size(); ++k) out.data()[k] = static_cast<float>(src[k]);
  return out;
}

}  // namespace bamrcd::nn
