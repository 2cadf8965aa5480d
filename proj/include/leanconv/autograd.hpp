#pragma once

// Reverse-mode plumbing: layers cache what their vector-Jacobian product
// needs on a tape during the forward pass, and the tape replays those
// products in reverse order.

#include <any>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "leanconv/error.hpp"
#include "leanconv/tensor.hpp"

namespace leanconv {

using Tensor = Tensor4<double>;

/// A named trainable array and the buffer its gradient accumulates into.
struct ParamRef {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
};

enum class Mode { train, eval };

class GradTape;

struct Context {
  Mode mode = Mode::eval;
  GradTape* tape = nullptr;

  bool recording() const noexcept { return tape != nullptr; }
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string_view kind() const = 0;
  virtual Tensor forward(const Tensor& x, Context& ctx) = 0;
  /// Returns the input cotangent and accumulates parameter gradients.
  virtual Tensor backward(const std::any& cache, const Tensor& dy) = 0;
  virtual std::vector<ParamRef> params() { return {}; }
  virtual Shape4 output_shape(const Shape4& in) const { return in; }

  const std::string& label() const noexcept { return label_; }
  void set_label(std::string label) { label_ = std::move(label); }

 protected:
  std::string qualified(std::string_view field) const {
    return label_.empty() ? std::string(field) : label_ + "." + std::string(field);
  }

 private:
  std::string label_;
};

class GradTape {
 public:
  void record(Layer& layer, std::any cache) {
    if (replayed_) throw Error("GradTape: cannot record onto a replayed tape");
    entries_.push_back({&layer, std::move(cache)});
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  bool replayed() const noexcept { return replayed_; }

  /// Runs every recorded VJP once, last op first. Returns the cotangent of
  /// the first recorded op's input.
  Tensor backward(const Tensor& dy) {
    if (entries_.empty()) throw Error("GradTape: nothing recorded");
    if (replayed_) throw Error("GradTape: tape already replayed");
    replayed_ = true;
    Tensor g = dy;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      g = it->layer->backward(it->cache, g);
      it->cache.reset();
    }
    return g;
  }

  void clear() {
    entries_.clear();
    replayed_ = false;
  }

 private:
  struct Entry {
    Layer* layer;
    std::any cache;
  };
  std::vector<Entry> entries_;
  bool replayed_ = false;
};

inline void zero_grads(std::span<const ParamRef> params) {
  for (const auto& p : params) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

inline std::size_t total_size(std::span<const ParamRef> params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

}  // namespace leanconv
