#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bamrcd/error.hpp"

namespace bamrcd {

/// Dense channel-major (C x H x W) array used for rasters, patches and masks.
template <class T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int channels, int rows, int cols, T fill = T{})
      : channels_(channels), rows_(rows), cols_(cols) {
    require(channels >= 0 && rows >= 0 && cols >= 0, ErrorKind::invalid_argument,
            "grid dimensions must be non-negative");
    data_.assign(static_cast<std::size_t>(channels) * rows * cols, fill);
  }

  int channels() const noexcept { return channels_; }
  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(rows_) * cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& at(int c, int r, int x) { return data_[index(c, r, x)]; }
  const T& at(int c, int r, int x) const { return data_[index(c, r, x)]; }
  T& operator()(int r, int x) { return data_[index(0, r, x)]; }
  const T& operator()(int r, int x) const { return data_[index(0, r, x)]; }

  std::span<T> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const T> plane(int c) const {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool same_shape(const Grid& other) const noexcept {
    return channels_ == other.channels_ && rows_ == other.rows_ && cols_ == other.cols_;
  }

  template <class U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return channels_ == other.channels() && rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  std::size_t index(int c, int r, int x) const noexcept {
    return (static_cast<std::size_t>(c) * rows_ + r) * cols_ + x;
  }

  int channels_ = 0;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

using Image = Grid<float>;
using Mask = Grid<std::uint8_t>;

inline std::size_t count_positive(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.data()) n += v != 0;
  return n;
}

/// Copy of the [r0, r0+h) x [c0, c0+w) window of every channel.
template <class T>
Grid<T> crop(const Grid<T>& g, int r0, int c0, int h, int w) {
  require(r0 >= 0 && c0 >= 0 && r0 + h <= g.rows() && c0 + w <= g.cols(),
          ErrorKind::invalid_argument, "crop window outside grid");
  Grid<T> out(g.channels(), h, w);
  for (int c = 0; c < g.channels(); ++c)
    for (int r = 0; r < h; ++r)
      for (int x = 0; x < w; ++x) out.at(c, r, x) = g.at(c, r0 + r, c0 + x);
  return out;
}

template <class T>
Grid<T> flip_horizontal(const Grid<T>& g) {
  Grid<T> out(g.channels(), g.rows(), g.cols());
  for (int c = 0; c < g.channels(); ++c)
    for (int r = 0; r < g.rows(); ++r)
      for (int x = 0; x < g.cols(); ++x) out.at(c, r, x) = g.at(c, r, g.cols() - 1 - x);
  return out;
}

template <class T>
Grid<T> flip_vertical(const Grid<T>& g) {
  Grid<T> out(g.channels(), g.rows(), g.cols());
  for (int c = 0; c < g.channels(); ++c)
    for (int r = 0; r < g.rows(); ++r)
      for (int x = 0; x < g.cols(); ++x) out.at(c, r, x) = g.at(c, g.rows() - 1 - r, x);
  return out;
}

}  // namespace bamrcd
