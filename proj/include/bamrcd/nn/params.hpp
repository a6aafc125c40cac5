#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "bamrcd/error.hpp"

namespace bamrcd::nn {

enum class ParamKind { conv, bias, norm, se, head };

inline const char* to_string(ParamKind k) {
  switch (k) {
    case ParamKind::conv: return "conv";
    case ParamKind::bias: return "bias";
    case ParamKind::norm: return "norm";
    case ParamKind::se: return "se";
    case ParamKind::head: return "head";
  }
  return "conv";
}

template <class T>
struct ParamArray {
  std::string name;          // canonical (first declared) path
  std::array<int, 4> shape;  // NCHW-style; unused trailing dims are 1
  ParamKind kind = ParamKind::conv;
  std::vector<T> value;

  std::size_t size() const noexcept { return value.size(); }
};

/// Named trainable arrays. Several paths may alias one storage slot (tied siamese encoders).
template <class T>
class Parameters {
 public:
  std::size_t add(const std::string& path, std::array<int, 4> shape, ParamKind kind) {
    require(!paths_.count(path), ErrorKind::invalid_argument, "duplicate parameter " + path);
    ParamArray<T> a;
    a.name = path;
    a.shape = shape;
    a.kind = kind;
    a.value.assign(static_cast<std::size_t>(shape[0]) * shape[1] * shape[2] * shape[3], T{});
    storage_.push_back(std::move(a));
    paths_[path] = storage_.size() - 1;
    return storage_.size() - 1;
  }

  void alias(const std::string& path, const std::string& target) {
    require(!paths_.count(path), ErrorKind::invalid_argument, "duplicate parameter " + path);
    paths_[path] = index(target);
  }

  std::size_t index(const std::string& path) const {
    auto it = paths_.find(path);
    require(it != paths_.end(), ErrorKind::invalid_argument, "unknown parameter " + path);
    return it->second;
  }
  bool contains(const std::string& path) const { return paths_.count(path) != 0; }

  ParamArray<T>& operator[](std::size_t i) { return storage_[i]; }
  const ParamArray<T>& operator[](std::size_t i) const { return storage_[i]; }
  ParamArray<T>& at(const std::string& path) { return storage_[index(path)]; }
  const ParamArray<T>& at(const std::string& path) const { return storage_[index(path)]; }

  std::size_t storage_count() const noexcept { return storage_.size(); }
  const std::map<std::string, std::size_t>& paths() const noexcept { return paths_; }
  std::vector<ParamArray<T>>& storage() noexcept { return storage_; }
  const std::vector<ParamArray<T>>& storage() const noexcept { return storage_; }

  /// Distinct trainable scalars; aliased arrays count once.
  std::size_t count_scalars() const {
    std::size_t n = 0;
    for (const auto& a : storage_) n += a.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& a : storage_)
      for (T v : a.value)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class U>
  Parameters<U> cast() const {
    Parameters<U> out;
    for (const auto& a : storage_) {
      auto idx = out.add(a.name, a.shape, a.kind);
      for (std::size_t k = 0; k < a.size(); ++k) out[idx].value[k] = static_cast<U>(a.value[k]);
    }
    for (const auto& [path, idx] : paths_)
      if (path != storage_[idx].name) out.alias(path, storage_[idx].name);
    return out;
  }

 private:
  std::vector<ParamArray<T>> storage_;
  std::map<std::string, std::size_t> paths_;
};

/// Gradient buffers aligned with Parameters storage slots.
template <class T>
struct Gradients {
  std::vector<std::vector<T>> slots;

  Gradients() = default;
  explicit Gradients(const Parameters<T>& p) {
    for (const auto& a : p.storage()) slots.emplace_back(a.size(), T{});
  }
  void zero() {
    for (auto& s : slots) std::fill(s.begin(), s.end(), T{});
  }
};

}  // namespace bamrcd::nn
