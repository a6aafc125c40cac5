#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bamrcd/error.hpp"
#include "bamrcd/nn/params.hpp"
#include "bamrcd/nn/tensor.hpp"

namespace bamrcd::nn {

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order; backward()
/// visits them in reverse and each node pushes its gradient to its inputs.
template <class T>
class Tape {
 public:
  using Id = std::size_t;
  using Backward = std::function<void(Tape&, Id)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const noexcept { return grad_enabled_; }

  // When set, piecewise-linear ops append the activation pattern of their inputs here.
  void set_sign_log(std::vector<bool>* log) noexcept { sign_log_ = log; }
  std::vector<bool>* sign_log() const noexcept { return sign_log_; }

  // When set, rectifiers take their on/off pattern from this sequence (in evaluation order)
  // instead of from the sign of their input.
  void set_sign_pattern(const std::vector<bool>* pattern) noexcept {
    sign_pattern_ = pattern;
    pattern_pos_ = 0;
  }
  const std::vector<bool>* sign_pattern() const noexcept { return sign_pattern_; }
  bool next_pattern_bit() {
    require(pattern_pos_ < sign_pattern_->size(), ErrorKind::invalid_argument, "activation pattern exhausted");
    return (*sign_pattern_)[pattern_pos_++];
  }

  Id constant(Tensor<T> value) { return push(std::move(value), false, {}, kNoParam); }

  Id parameter(Tensor<T> value, std::size_t storage_slot) {
    return push(std::move(value), grad_enabled_, {}, storage_slot);
  }

  /// Appends an op output. `backward` runs only if some input requires a gradient.
  Id record(Tensor<T> value, std::initializer_list<Id> inputs, Backward backward) {
    bool needs = false;
    if (grad_enabled_)
      for (Id i : inputs) needs = needs || nodes_[i].needs_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{}, kNoParam);
  }
  Id record(Tensor<T> value, const std::vector<Id>& inputs, Backward backward) {
    bool needs = false;
    if (grad_enabled_)
      for (Id i : inputs) needs = needs || nodes_[i].needs_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{}, kNoParam);
  }

  const Tensor<T>& value(Id id) const { return nodes_[id].value; }
  bool needs_grad(Id id) const { return nodes_[id].needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, zero-initialised on first access.
  Tensor<T>& grad(Id id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) {
      const auto& v = n.value;
      n.grad = Tensor<T>(v.n, v.c, v.h, v.w, T{});
    }
    return n.grad;
  }
  bool has_grad(Id id) const { return nodes_[id].grad.size() == nodes_[id].value.size(); }

  void backward(Id root) {
    require(grad_enabled_, ErrorKind::invalid_argument, "backward on a no-grad tape");
    require(nodes_[root].value.size() == 1, ErrorKind::invalid_argument,
            "backward root must be a scalar");
    if (!nodes_[root].needs_grad) return;
    grad(root).data[0] = T{1};
    for (Id i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && has_grad(i)) n.backward(*this, i);
    }
  }

  /// Adds parameter-leaf gradients into `g`; aliased leaves sum into the same slot.
  void accumulate(Gradients<T>& g) const {
    for (const auto& n : nodes_) {
      if (n.param == kNoParam || n.grad.size() != n.value.size()) continue;
      auto& slot = g.slots.at(n.param);
      for (std::size_t k = 0; k < slot.size(); ++k) slot[k] += n.grad.data[k];
    }
  }

 private:
  static constexpr std::size_t kNoParam = static_cast<std::size_t>(-1);

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    Backward backward;
    std::size_t param = kNoParam;
  };

  Id push(Tensor<T> value, bool needs, Backward bw, std::size_t param) {
    nodes_.push_back(Node{std::move(value), {}, needs, std::move(bw), param});
    return nodes_.size() - 1;
  }

  bool grad_enabled_;
  std::vector<bool>* sign_log_ = nullptr;
  const std::vector<bool>* sign_pattern_ = nullptr;
  std::size_t pattern_pos_ = 0;
  std::vector<Node> nodes_;
};

/// Binds named parameters onto a tape once per storage slot.
template <class T>
class Binder {
 public:
  Binder(Tape<T>& tape, const Parameters<T>& params) : tape_(tape), params_(params) {}

  typename Tape<T>::Id operator()(const std::string& path) {
    const std::size_t slot = params_.index(path);
    auto it = bound_.find(slot);
    if (it != bound_.end()) return it->second;
    const auto& a = params_[slot];
    Tensor<T> t(a.shape[0], a.shape[1], a.shape[2], a.shape[3]);
    t.data = a.value;
    const auto id = tape_.parameter(std::move(t), slot);
    bound_[slot] = id;
    return id;
  }

  Tape<T>& tape() noexcept { return tape_; }
  const Parameters<T>& params() const noexcept { return params_; }

 private:
  Tape<T>& tape_;
  const Parameters<T>& params_;
  std::map<std::size_t, typename Tape<T>::Id> bound_;
};

}  // namespace bamrcd::nn
