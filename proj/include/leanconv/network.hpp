#pragma once

// Network description and builder: opening layer, blocks of steps separated
// by connecting layers, then pooling and a linear softmax classifier.

#include <cstdint>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "leanconv/autograd.hpp"
#include "leanconv/conv_ops.hpp"
#include "leanconv/steps.hpp"

namespace leanconv {

struct NetworkSpec {
  std::vector<std::size_t> channel_plan{32, 64, 128};
  std::size_t steps_per_block = 4;
  StepKind step_kind = StepKind::rd_explicit;
  std::size_t stencil_size = 3;
  std::size_t opening_width = 5;  // stencil size of the opening convolution
  std::size_t input_channels = 3;
  std::size_t num_classes = 10;
  double h = 1.0;
  bool norm_affine = true;

  void validate() const {
    if (channel_plan.empty()) throw Error("NetworkSpec: channel_plan is empty");
    for (std::size_t b = 0; b < channel_plan.size(); ++b) {
      if (channel_plan[b] == 0) throw Error("NetworkSpec: channel widths must be positive");
      if (b > 0 && channel_plan[b] != 2 * channel_plan[b - 1])
        throw Error("NetworkSpec: channel_plan must double at every block (connecting layers "
                    "double the channel count), got " +
                    std::to_string(channel_plan[b - 1]) + " then " +
                    std::to_string(channel_plan[b]));
    }
    if (steps_per_block < 1) throw Error("NetworkSpec: steps_per_block must be at least 1");
    detail::check_odd_stencil("NetworkSpec", stencil_size);
    detail::check_odd_stencil("NetworkSpec opening", opening_width);
    if (input_channels == 0) throw Error("NetworkSpec: input_channels must be positive");
    if (num_classes < 2) throw Error("NetworkSpec: num_classes must be at least 2");
    detail::check_step_size("NetworkSpec", h);
  }

  /// Spatial size divisor imposed by the pooling in the connecting layers.
  std::size_t downsampling() const noexcept { return std::size_t{1} << (channel_plan.size() - 1); }
};

inline nlohmann::json to_json(const NetworkSpec& s) {
  return {{"channel_plan", s.channel_plan},   {"steps_per_block", s.steps_per_block},
          {"step_kind", to_string(s.step_kind)}, {"stencil_size", s.stencil_size},
          {"opening_width", s.opening_width}, {"input_channels", s.input_channels},
          {"num_classes", s.num_classes},     {"h", s.h},
          {"norm_affine", s.norm_affine}};
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.channel_plan = j.at("channel_plan").get<std::vector<std::size_t>>();
  s.steps_per_block = j.at("steps_per_block").get<std::size_t>();
  s.step_kind = parse_step_kind(j.at("step_kind").get<std::string>());
  s.stencil_size = j.at("stencil_size").get<std::size_t>();
  s.opening_width = j.value("opening_width", std::size_t{5});
  s.input_channels = j.value("input_channels", std::size_t{3});
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.h = j.value("h", 1.0);
  s.norm_affine = j.value("norm_affine", true);
  s.validate();
  return s;
}

/// Presets: "A" 32-64-128, "B" 48-96-192, "C" 32-64-128-256 (four steps per
/// block), "mini" 8-16 with two steps per block.
inline NetworkSpec preset_spec(std::string_view name, StepKind kind,
                               std::size_t stencil_size = 3) {
  NetworkSpec s;
  s.step_kind = kind;
  s.stencil_size = stencil_size;
  if (name == "A" || name == "a")
    s.channel_plan = {32, 64, 128};
  else if (name == "B" || name == "b")
    s.channel_plan = {48, 96, 192};
  else if (name == "C" || name == "c")
    s.channel_plan = {32, 64, 128, 256};
  else if (name == "mini") {
    s.channel_plan = {8, 16};
    s.steps_per_block = 2;
  } else
    throw Error("unknown network preset '" + std::string(name) + "' (expected A, B, C or mini)");
  s.validate();
  return s;
}

/// Per-layer parameter accounting: operator weights next to their closed
/// form, plus normalization and classifier parameters.
struct LayerCount {
  std::string label;
  std::string kind;
  std::string formula;
  std::uint64_t formula_weights = 0;
  std::uint64_t operator_weights = 0;
  std::uint64_t norm_weights = 0;
  std::uint64_t total() const noexcept { return operator_weights + norm_weights; }
};

inline std::pair<std::string, std::uint64_t> step_formula(StepKind kind, std::uint64_t m,
                                                          std::uint64_t c) {
  switch (kind) {
    case StepKind::resnet:
      return {"2*m^2*c^2", 2 * param_count(OpKind::fully_coupled, m, c, c)};
    case StepKind::linearmix:
      return {"2*(m^2*c+c^2)", 2 * param_count(OpKind::linear_mix, m, c, c)};
    case StepKind::mobilenet:
      return {"m^2*c+c^2", param_count(OpKind::depthwise, m, c, c) +
                               param_count(OpKind::one_by_one, 1, c, c)};
    case StepKind::rd_explicit: return {"m^2*c+c^2", param_count(OpKind::rd_explicit, m, c, c)};
    case StepKind::rd_implicit: return {"m^2*c+c^2", param_count(OpKind::rd_implicit, m, c, c)};
    case StepKind::rd_circulant:
      return {"m^2*c+c^2", param_count(OpKind::rd_circulant, m, c, c)};
  }
  return {"?", 0};
}

class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(seed);
    const auto& plan = spec_.channel_plan;
    add(std::make_unique<OpeningLayer>(spec_.input_channels, plan[0], spec_.opening_width),
        "opening", plan[0]);
    for (std::size_t b = 0; b < plan.size(); ++b) {
      for (std::size_t j = 0; j < spec_.steps_per_block; ++j)
        add(make_step(spec_.step_kind, plan[b], spec_.stencil_size, spec_.h),
            "block" + std::to_string(b + 1) + ".step" + std::to_string(j + 1), plan[b]);
      if (b + 1 < plan.size())
        add(std::make_unique<ConnectingLayer>(plan[b], spec_.stencil_size),
            "connect" + std::to_string(b + 1), plan[b]);
    }
    add(std::make_unique<ClassifierLayer>(plan.back(), spec_.num_classes), "classifier",
        plan.back());
    for (auto& layer : layers_) {
      layer->initialize(rng);
      for (auto* bn : layer->norms()) bn->set_affine(spec_.norm_affine);
    }
  }

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  InitializableLayer& layer(std::size_t k) { return *layers_.at(k); }

  /// Logits of shape (N, n_c, 1, 1). With a tape attached, every layer
  /// records its backward state.
  Tensor forward(const Tensor& x, Mode mode, GradTape* tape = nullptr) {
    const auto& s = x.shape();
    detail::check_dim("Network", "input channels", spec_.input_channels, s.c);
    const auto ds = spec_.downsampling();
    if (s.h % ds != 0 || s.w % ds != 0)
      throw Error("Network: input height and width must be divisible by " + std::to_string(ds) +
                  ", got " + to_string(s));
    Context ctx{mode, tape};
    Tensor y = x;
    for (auto& layer : layers_) y = layer->forward(y, ctx);
    return y;
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    for (auto& layer : layers_) {
      auto p = layer->params();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  std::vector<BatchNorm*> norms() {
    std::vector<BatchNorm*> out;
    for (auto& layer : layers_) {
      auto n = layer->norms();
      out.insert(out.end(), n.begin(), n.end());
    }
    return out;
  }

  void zero_grad() { zero_grads(params()); }

  std::uint64_t parameter_count() {
    std::uint64_t n = 0;
    for (const auto& p : params()) n += p.value.size();
    return n;
  }

  std::vector<LayerCount> layer_counts() {
    std::vector<LayerCount> rows;
    const auto m = spec_.stencil_size;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      auto& layer = layers_[k];
      LayerCount row;
      row.label = layer->label();
      row.kind = std::string(layer->kind());
      for (const auto& p : layer->params()) {
        const bool norm = p.name.find(".norm") != std::string::npos;
        (norm ? row.norm_weights : row.operator_weights) += p.value.size();
      }
      if (auto* op = dynamic_cast<OpeningLayer*>(layer.get())) {
        const auto& g = op->grid();
        row.formula = "m^2*c_in*c_out";
        row.formula_weights = param_count(OpKind::fully_coupled, g.stencil_size(),
                                          g.in_channels(), g.out_channels());
      } else if (auto* cl = dynamic_cast<ConnectingLayer*>(layer.get())) {
        row.formula = "m^2*c";
        row.formula_weights = param_count(OpKind::depthwise, m, cl->bank().count(), 1);
      } else if (auto* head = dynamic_cast<ClassifierLayer*>(layer.get())) {
        const auto& w = head->weights();
        row.formula = "n_c*c+n_c";
        row.formula_weights = w.rows() * w.cols() + w.rows();
      } else {
        std::tie(row.formula, row.formula_weights) = step_formula(spec_.step_kind, m, widths_[k]);
      }
      rows.push_back(std::move(row));
    }
    return rows;
  }

 private:
  void add(std::unique_ptr<InitializableLayer> layer, std::string label, std::size_t width) {
    layer->set_label(std::move(label));
    layers_.push_back(std::move(layer));
    widths_.push_back(width);
  }

  NetworkSpec spec_;
  std::vector<std::unique_ptr<InitializableLayer>> layers_;
  std::vector<std::size_t> widths_;
};

inline Network build_network(const NetworkSpec& spec, std::uint64_t seed) {
  return Network(spec, seed);
}

}  // namespace leanconv
