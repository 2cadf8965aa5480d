#pragma once

// Self-checks of the library's mathematical invariants, grouped in suites
// and reported as JSON. Each case compares a fast path against an
// independent computation or checks a structural property on random data.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "leanconv/bench.hpp"
#include "leanconv/conv_ops.hpp"
#include "leanconv/gradcheck.hpp"
#include "leanconv/network.hpp"
#include "leanconv/spectral.hpp"
#include "leanconv/steps.hpp"
#include "leanconv/train.hpp"

namespace leanconv {

struct VerifyCase {
  std::string suite;
  std::string invariant;
  std::string detail;
  double error = 0;
  double tolerance = 0;
  bool passed = false;
};

struct VerifyReport {
  std::vector<VerifyCase> cases;
  double seconds = 0;

  bool passed() const {
    return std::ranges::all_of(cases, [](const VerifyCase& c) { return c.passed; });
  }

  std::vector<std::string> failed_suites() const {
    std::vector<std::string> out;
    for (const auto& c : cases)
      if (!c.passed && std::ranges::find(out, c.suite) == out.end()) out.push_back(c.suite);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["passed"] = passed();
    j["seconds"] = seconds;
    j["failed_suites"] = failed_suites();
    nlohmann::json list = nlohmann::json::array();
    nlohmann::json per_suite = nlohmann::json::object();
    for (const auto& c : cases) {
      list.push_back({{"suite", c.suite},
                      {"invariant", c.invariant},
                      {"detail", c.detail},
                      {"error", c.error},
                      {"tolerance", c.tolerance},
                      {"passed", c.passed}});
      auto& s = per_suite[c.suite];
      if (s.is_null()) s = {{"cases", 0}, {"failed", 0}};
      s["cases"] = s["cases"].get<int>() + 1;
      s["failed"] = s["failed"].get<int>() + (c.passed ? 0 : 1);
    }
    j["suites"] = per_suite;
    j["cases"] = list;
    return j;
  }
};

/// Deliberate defects used to confirm that verification catches them.
enum class VerifyFault { none, broken_adjoint };

struct VerifyOptions {
  std::string suite;  // empty runs every suite
  VerifyFault fault = VerifyFault::none;
  std::uint64_t seed = 1;
};

inline const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names{"tensor", "spectral", "conv_ops", "layers",
                                              "autograd", "model",   "cli"};
  return names;
}

namespace detail::verify {

using Rng = std::mt19937_64;

class Recorder {
 public:
  Recorder(std::string suite, VerifyReport& report) : suite_(std::move(suite)), report_(report) {}

  /// Records error <= tolerance.
  void within(const std::string& invariant, const std::string& detail, double error,
              double tolerance) {
    report_.cases.push_back(
        {suite_, invariant, detail, error, tolerance, std::isfinite(error) && error <= tolerance});
  }

  void holds(const std::string& invariant, const std::string& detail, bool ok) {
    report_.cases.push_back({suite_, invariant, detail, ok ? 0.0 : 1.0, 0.0, ok});
  }

  /// Runs body, recording an exception as a failed case.
  void guarded(const std::string& invariant, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      holds(invariant, std::string("threw: ") + e.what(), false);
    }
  }

 private:
  std::string suite_;
  VerifyReport& report_;
};

inline double uniform(Rng& rng, double lo = -1.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Tensor random_tensor(Rng& rng, Shape4 s) {
  Tensor t(s);
  for (auto& v : t.data()) v = uniform(rng);
  return t;
}

inline StencilBank<double> random_bank(Rng& rng, std::size_t m, std::size_t c) {
  StencilBank<double> b(m, c);
  for (auto& v : b.weights()) v = uniform(rng);
  return b;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

/// Dense matrix times one sample of x, as a tensor of shape (1, rows / hw, h, w).
inline Tensor dense_apply(const DenseMatrix<double>& a, const Tensor& x) {
  const auto& s = x.shape();
  const auto y = a.multiply(x.sample(0));
  Tensor out(Shape4{1, a.rows / s.plane(), s.h, s.w});
  std::ranges::copy(y, out.data().begin());
  return out;
}

/// A random operator of the given kind on c channels.
inline ConvOperator<double> random_operator(Rng& rng, OpKind kind, std::size_t m, std::size_t c,
                                            ConvPath path = ConvPath::fft) {
  auto matrix = [&](std::size_t r, std::size_t q) {
    ChannelMatrix<double> mtx(r, q);
    for (auto& v : mtx.weights()) v = uniform(rng);
    return mtx;
  };
  switch (kind) {
    case OpKind::fully_coupled: {
      StencilGrid<double> g(m, c, c);
      for (auto& v : g.weights()) v = uniform(rng);
      return ConvOperator<double>::fully_coupled(std::move(g));
    }
    case OpKind::depthwise: return ConvOperator<double>::depthwise(random_bank(rng, m, c), path);
    case OpKind::one_by_one: return ConvOperator<double>::one_by_one(matrix(c, c));
    case OpKind::linear_mix:
      return ConvOperator<double>::linear_mix(random_bank(rng, m, c), matrix(c, c), path);
    default: return ConvOperator<double>::circulant(random_bank(rng, m, c));
  }
}

inline constexpr OpKind kLinearOps[] = {OpKind::fully_coupled, OpKind::depthwise,
                                        OpKind::one_by_one, OpKind::linear_mix,
                                        OpKind::circulant};

/// Random (c, h, w, m) with c * h * w <= 512 and m <= min(h, w).
inline void small_config(Rng& rng, std::size_t& c, std::size_t& h, std::size_t& w,
                         std::size_t& m) {
  do {
    c = pick(rng, 1, 4);
    h = pick(rng, 3, 12);
    w = pick(rng, 3, 12);
  } while (c * h * w > 512);
  m = std::min<std::size_t>(2 * pick(rng, 0, 2) + 1, std::min(h, w) | 1);
  if (m > std::min(h, w)) m -= 2;
}

// ---------------------------------------------------------------------------

inline void tensor_suite(Recorder& r, Rng& rng) {
  for (int k = 0; k < 5; ++k) {
    const Shape4 s{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 6), pick(rng, 1, 6)};
    const auto x = random_tensor(rng, s);
    const auto flat = x.reshaped(Shape4{1, 1, 1, x.size()});
    r.holds("layout_round_trip", to_string(s), bit_equal(flat.reshaped(s).data(), x.data()));
    const auto same = elementwise_map(x, [](double v) { return v; });
    r.holds("map_identity", to_string(s), bit_equal(same.data(), x.data()));
    const auto z = random_tensor(rng, Shape4{s.n, pick(rng, 1, 3), s.h, s.w});
    const auto cat = concat_channels(x, z);
    r.holds("concat_slice", to_string(s),
            bit_equal(slice_channels(cat, 0, s.c).data(), x.data()) &&
                bit_equal(slice_channels(cat, s.c, z.shape().c).data(), z.data()));
    std::stringstream dump(std::ios::in | std::ios::out | std::ios::binary);
    write_tensor(dump, x);
    const auto back = read_tensor(dump);
    r.holds("binary_dump_round_trip", to_string(s),
            back.shape() == s && bit_equal(back.data(), x.data()) &&
                dump.str().size() == 16 + 8 * x.size());
  }
}

inline void spectral_suite(Recorder& r, Rng& rng) {
  for (int k = 0; k < 6; ++k) {
    std::size_t c, h, w, m;
    small_config(rng, c, h, w, m);
    const std::string cfg = "c=" + std::to_string(c) + " " + std::to_string(h) + "x" +
                            std::to_string(w) + " m=" + std::to_string(m);
    const auto bank = random_bank(rng, m, 1);
    const auto s = bank.stencil(0);
    const auto x = random_tensor(rng, Shape4{2, c, h, w});
    const auto z = random_tensor(rng, x.shape());

    StencilBank<double> repeated(m, c);
    for (std::size_t q = 0; q < c; ++q)
      std::ranges::copy(s.taps, repeated.stencil_taps(q).begin());
    const auto fft_path = circular_conv2(s, x);
    r.within("convolution_theorem_2d", cfg,
             relative_error(fft_path, apply_depthwise(repeated, x, ConvPath::direct)), 1e-10);

    const auto cbank = random_bank(rng, m, c);
    const auto x1 = random_tensor(rng, Shape4{1, c, h, w});
    r.within("convolution_theorem_3d", cfg,
             relative_error(circulant_conv3(cbank, x1),
                            dense_apply(assemble_circulant(cbank, h, w), x1)),
             1e-10);

    const double a = uniform(rng), b = uniform(rng);
    auto combo = x;
    combo *= a;
    combo.axpy(b, z);
    auto expect = circular_conv2(s, x);
    expect *= a;
    expect.axpy(b, circular_conv2(s, z));
    r.within("linearity", cfg, relative_error(circular_conv2(s, combo), expect), 1e-12);

    for (double step : {0.01, 0.1, 1.0, 10.0}) {
      const auto sol = inverse_diffusion_apply(s, step, x);
      auto back = sol;
      back.axpy(step, circular_conv2(s, circular_conv2(s, sol), true));
      r.within("solver_residual", cfg + " h=" + std::to_string(step),
               norm2(back - x) / norm2(x), 1e-10);
      const auto mult = diffusion_inverse_multiplier(stencil_to_symbol2(s, h, w), step);
      const bool in_range =
          std::ranges::all_of(mult, [](double v) { return v > 0.0 && v <= 1.0; });
      r.holds("spectral_bound", cfg + " h=" + std::to_string(step),
              in_range && norm2(sol) <= norm2(x) * (1 + 1e-12));
    }

    const double lhs = dot(circular_conv2(s, x), z);
    const double rhs = dot(x, circular_conv2(s, z, true));
    r.within("adjoint_2d", cfg, std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300), 1e-10);
  }
}

inline void conv_ops_suite(Recorder& r, Rng& rng, VerifyFault fault) {
  for (int trial = 0; trial < 4; ++trial) {
    std::size_t c, h, w, m;
    small_config(rng, c, h, w, m);
    const std::string cfg = "c=" + std::to_string(c) + " " + std::to_string(h) + "x" +
                            std::to_string(w) + " m=" + std::to_string(m);
    for (auto kind : kLinearOps) {
      for (auto path : {ConvPath::fft, ConvPath::direct}) {
        const bool has_path = kind == OpKind::depthwise || kind == OpKind::linear_mix;
        if (path == ConvPath::direct && !has_path) continue;
        const auto op = random_operator(rng, kind, kind == OpKind::one_by_one ? 1 : m, c, path);
        const std::string tag = std::string(to_string(kind)) +
                                (has_path ? (path == ConvPath::fft ? "/fft " : "/direct ") : " ") +
                                cfg;
        const auto x = random_tensor(rng, Shape4{1, c, h, w});
        const auto z = random_tensor(rng, x.shape());
        const auto dense = op.assemble(h, w);
        r.within("dense_oracle", tag, relative_error(op.apply(x), dense_apply(dense, x)), 1e-9);
        r.within("dense_oracle_transpose", tag,
                 relative_error(op.apply_transpose(z), dense_apply(dense.transposed(), z)), 1e-9);

        const double a = uniform(rng), b = uniform(rng);
        auto combo = x;
        combo *= a;
        combo.axpy(b, z);
        auto expect = op.apply(x);
        expect *= a;
        expect.axpy(b, op.apply(z));
        r.within("linearity", tag, relative_error(op.apply(combo), expect), 1e-12);

        const bool broken = fault == VerifyFault::broken_adjoint && kind == OpKind::depthwise;
        const auto back = broken ? op.apply(z) : op.apply_transpose(z);
        const double lhs = dot(op.apply(x), z), rhs = dot(x, back);
        r.within("adjoint", tag, std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300), 1e-10);
      }
    }

    const auto bank = random_bank(rng, m, c);
    const auto x = random_tensor(rng, Shape4{2, c, h, w});
    r.holds("gram_nonnegative", cfg, dot(x, apply_depthwise_gram(bank, x)) >= 0.0);
    const auto k = assemble_depthwise(bank, h, w);
    const auto kt = k.transposed();
    double asym = 0, scale = 0;
    for (std::size_t i = 0; i < k.cols; ++i)
      for (std::size_t j = 0; j < k.cols; ++j) {
        double gij = 0, gji = 0;
        for (std::size_t l = 0; l < k.rows; ++l) {
          gij += kt(i, l) * k(l, j);
          gji += kt(j, l) * k(l, i);
        }
        asym = std::max(asym, std::abs(gij - gji));
        scale = std::max(scale, std::abs(gij));
      }
    r.within("gram_symmetric", cfg, asym / std::max(scale, 1e-300), 1e-10);
  }

  for (std::size_t m : {1u, 3u, 5u})
    for (std::size_t c : {1u, 4u, 16u})
      for (auto kind : kLinearOps) {
        const std::size_t mk = kind == OpKind::one_by_one ? 1 : m;
        const auto op = random_operator(rng, kind, mk, c);
        r.holds("param_count_exact",
                std::string(to_string(kind)) + " m=" + std::to_string(mk) +
                    " c=" + std::to_string(c),
                op.weight_count() == param_count(kind, mk, c, c) &&
                    op.flat_weights().size() == op.weight_count());
      }
}

inline Tensor forward_once(Layer& layer, const Tensor& x, GradTape* tape = nullptr) {
  Context ctx{Mode::train, tape};
  return layer.forward(x, ctx);
}

inline double lambda_max(const StencilBank<double>& b, std::size_t h, std::size_t w) {
  double m = 0;
  for (const auto& p : depthwise_power(b, h, w)) m = std::max(m, *std::ranges::max_element(p));
  return m;
}

inline void layers_suite(Recorder& r, Rng& rng) {
  for (int trial = 0; trial < 20; ++trial) {
    const double h = std::pow(10.0, uniform(rng, -2.0, 2.0));
    const std::size_t c = pick(rng, 1, 4);
    RdImplicitStep step(c, 3, h);
    step.bank() = random_bank(rng, 3, c);
    const auto x = random_tensor(rng, Shape4{2, c, 6, 6});
    r.holds("implicit_nonexpansive", "h=" + std::to_string(h),
            norm2(forward_once(step, x)) <= norm2(x) * (1 + 1e-12));
  }
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t c = pick(rng, 1, 4);
    RdExplicitStep step(c, 3, 1.0);
    step.bank() = random_bank(rng, 3, c);
    const double bound = 2.0 / lambda_max(step.bank(), 6, 6);
    step.set_step_size(uniform(rng, 0.01, 0.99) * bound);
    const auto x = random_tensor(rng, Shape4{2, c, 6, 6});
    r.holds("explicit_dissipative_below_bound", "h/bound<1",
            norm2(forward_once(step, x)) <= norm2(x) * (1 + 1e-12));
  }
  {
    RdExplicitStep step(1, 3, 1.0);
    const std::vector<double> lap{0, 1, 0, 1, -4, 1, 0, 1, 0};
    std::ranges::copy(lap, step.bank().weights().begin());
    const double lmax = lambda_max(step.bank(), 8, 8);
    step.set_step_size(1.5 * 2.0 / lmax);
    Tensor x(Shape4{1, 1, 8, 8});
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) x(0, 0, i, j) = (i + j) % 2 == 0 ? 1.0 : -1.0;
    const double growth = norm2(forward_once(step, x)) / norm2(x);
    r.holds("explicit_grows_above_bound",
            "checkerboard, h = 1.5 * 2/lambda_max, growth " + std::to_string(growth),
            growth > 1.0 + 1e-9);
  }
  const auto x = random_tensor(rng, Shape4{2, 3, 6, 6});
  for (auto kind : kAllStepKinds) {
    auto step = make_step(kind, 3, 3, 0.5);
    const auto y = forward_once(*step, x);
    if (kind == StepKind::mobilenet)
      r.holds("zero_weights", "mobilenet is the zero map",
              std::ranges::all_of(y.data(), [](double v) { return v == 0.0; }));
    else
      r.holds("zero_weights", std::string(to_string(kind)) + " is the identity",
              bit_equal(y.data(), x.data()));
  }
  for (int trial = 0; trial < 3; ++trial) {
    const auto logits = random_tensor(rng, Shape4{4, 5, 1, 1});
    const auto p = softmax(logits);
    double worst = 0;
    bool positive = true;
    for (std::size_t n = 0; n < 4; ++n) {
      double total = 0;
      for (std::size_t k = 0; k < 5; ++k) {
        total += p(n, k, 0, 0);
        positive = positive && p(n, k, 0, 0) > 0;
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
    r.within("softmax_simplex", positive ? "positive" : "non-positive entry",
             positive ? worst : 1.0, 1e-12);
  }
  const Shape4 s{2, 4, 8, 6};
  const auto xs = random_tensor(rng, s);
  for (auto kind : kAllStepKinds) {
    auto step = make_step(kind, 4, 3, 0.5);
    step->initialize(rng);
    r.holds("shape_contract", std::string(to_string(kind)),
            forward_once(*step, xs).shape() == s);
  }
  ConnectingLayer conn(4, 3);
  conn.initialize(rng);
  r.holds("shape_contract", "connecting halves and doubles",
          forward_once(conn, xs).shape() == Shape4{2, 8, 4, 3});
}

/// |<w, J v> - <J^T w, v>| / (|J^T w| |v|), with J v from a fourth-order
/// central difference. Random v and w make the inner product far smaller
/// than its Cauchy-Schwarz bound, so that bound is the scale.
inline double adjoint_gap(Layer& layer, const Tensor& x, Rng& rng, double h = 1e-5) {
  const auto y = forward_once(layer, x);
  const auto v = random_tensor(rng, x.shape());
  const auto w = random_tensor(rng, y.shape());
  auto at = [&](double t) {
    Tensor xt = x;
    xt.axpy(t, v);
    return dot(w, forward_once(layer, xt));
  };
  const double jv = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
  GradTape tape;
  forward_once(layer, x, &tape);
  const auto back = tape.backward(w);
  const double jtw = dot(back, v);
  const double scale = std::max({std::abs(jv), norm2(back) * norm2(v), 1e-300});
  return std::abs(jv - jtw) / scale;
}

inline void autograd_suite(Recorder& r, Rng& rng) {
  for (auto kind : kAllStepKinds) {
    auto step = make_step(kind, 3, 3, 0.4);
    step->initialize(rng);
    for (auto* bn : step->norms()) {
      for (auto& g : bn->gamma()) g = uniform(rng, 0.5, 1.5);
      for (auto& b : bn->beta()) b = uniform(rng, -0.5, 0.5);
    }
    const auto x = random_tensor(rng, Shape4{2, 3, 6, 6});
    r.within("adjoint_consistency", std::string(to_string(kind)), adjoint_gap(*step, x, rng),
             1e-9);
  }
  for (auto kind : kAllStepKinds) {
    const auto report = network_grad_check(kind);
    r.within("network_gradient", std::string(to_string(kind)) + " (2,4,8,8)",
             report.max_rel_error, 1e-5);
  }
  BatchNorm bn(3);
  for (auto& g : bn.gamma()) g = uniform(rng, 0.5, 1.5);
  const auto x = random_tensor(rng, Shape4{4, 3, 5, 5});
  const auto w = random_tensor(rng, x.shape());
  BatchNorm::Cache cache;
  bn.forward(x, Mode::train, &cache);
  const auto dx = bn.backward(cache, w);
  double scale = 0, worst = 0;
  for (double v : dx.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t c = 0; c < 3; ++c) {
    double along = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (double v : dx.plane(n, c)) along += v;
    worst = std::max(worst, std::abs(along) / std::max(scale, 1e-300));
  }
  r.within("invariance_gradient", "batchnorm per-channel shift", worst, 1e-8);
}

inline bool params_bit_equal(Network& a, Network& b) {
  const auto pa = a.params(), pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!bit_equal(pa[i].value, pb[i].value)) return false;
  return true;
}

inline void model_suite(Recorder& r) {
  const std::pair<const char*, std::vector<std::pair<StepKind, double>>> reported[] = {
      {"A",
       {{StepKind::resnet, 1.5e6},
        {StepKind::rd_explicit, 101e3},
        {StepKind::mobilenet, 101e3},
        {StepKind::linearmix, 195e3}}},
      {"B",
       {{StepKind::rd_explicit, 216e3},
        {StepKind::mobilenet, 216e3},
        {StepKind::linearmix, 422e3},
        {StepKind::resnet, 3.5e6}}}};
  for (const auto& [preset, rows] : reported)
    for (const auto& [kind, value] : rows) {
      const auto n = static_cast<double>(Network(preset_spec(preset, kind), 0).parameter_count());
      r.within("count_band", std::string(preset) + " " + std::string(to_string(kind)) + " " +
                                 std::to_string(static_cast<std::uint64_t>(n)),
               std::abs(n - value) / value, 0.10);
    }
  for (const char* preset : {"A", "B", "C"}) {
    auto count = [&](StepKind k) { return Network(preset_spec(preset, k), 0).parameter_count(); };
    const auto resnet = count(StepKind::resnet), linearmix = count(StepKind::linearmix);
    std::vector<std::uint64_t> light;
    for (auto k : {StepKind::mobilenet, StepKind::rd_explicit, StepKind::rd_implicit,
                   StepKind::rd_circulant})
      light.push_back(count(k));
    const auto [lo, hi] = std::ranges::minmax(light);
    r.holds("count_ordering", preset,
            resnet > 5 * linearmix && linearmix > hi &&
                static_cast<double>(hi - lo) <= 0.02 * static_cast<double>(lo));
  }

  const auto data = make_synthetic(2, 24, Shape4{0, 3, 8, 8}, 5);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.seed = 3;
  {
    Network net(preset_spec("mini", StepKind::rd_explicit), 2);
    Network ref(preset_spec("mini", StepKind::rd_explicit), 2);
    auto zero = cfg;
    zero.lr0 = 0.0;
    train(net, data, nullptr, zero);
    r.holds("zero_lr_identity", "mini rd_explicit, 1 epoch", params_bit_equal(net, ref));
  }
  {
    Network a(preset_spec("mini", StepKind::rd_implicit), 4);
    Network b(preset_spec("mini", StepKind::rd_implicit), 4);
    AdamState sa, sb;
    train(a, data, nullptr, cfg, {}, &sa);
    train(b, data, nullptr, cfg, {}, &sb);
    bool same = params_bit_equal(a, b) && sa.m.size() == sb.m.size();
    for (std::size_t i = 0; same && i < sa.m.size(); ++i)
      same = bit_equal(sa.m[i], sb.m[i]) && bit_equal(sa.v[i], sb.v[i]);
    r.holds("bitwise_reproducible", "mini rd_implicit, same seed", same);

    const auto dir = std::filesystem::temp_directory_path() /
                     ("leanconv_verify_" + std::to_string(std::chrono::steady_clock::now()
                                                              .time_since_epoch()
                                                              .count()));
    save_checkpoint(dir, a, &sa, 1);
    auto ck = load_checkpoint(dir);
    std::filesystem::remove_all(dir);
    const auto y0 = a.forward(data.images, Mode::eval), y1 = ck.net.forward(data.images, Mode::eval);
    r.holds("checkpoint_round_trip", "eval forward", bit_equal(y0.data(), y1.data()));
  }
}

inline void cli_suite(Recorder& r, Rng& rng) {
  for (std::size_t m : {1u, 3u, 5u, 7u})
    for (std::size_t c : {2u, 8u, 32u}) {
      for (auto kind : kLinearOps) {
        const std::size_t mk = kind == OpKind::one_by_one ? 1 : m;
        const auto op = random_operator(rng, kind, mk, c);
        r.holds("count_formula_exact",
                std::string(to_string(kind)) + " m=" + std::to_string(mk) +
                    " c=" + std::to_string(c),
                op.flat_weights().size() == param_count(kind, mk, c, c));
      }
      for (auto kind : kAllStepKinds) {
        auto step = make_step(kind, c, m, 1.0);
        std::uint64_t stored = 0;
        for (const auto& p : step->params())
          if (p.name.find("norm") == std::string::npos) stored += p.value.size();
        r.holds("count_formula_exact",
                std::string(to_string(kind)) + " step m=" + std::to_string(m) +
                    " c=" + std::to_string(c),
                stored == step_formula(kind, m, c).second);
      }
    }
  BenchConfig cfg;
  cfg.axis = BenchAxis::channels;
  cfg.grid = {2, 4};
  cfg.batch = 1;
  cfg.image_size = 8;
  cfg.reps = 3;
  cfg.warmup = 0;
  const auto rows = run_bench(cfg);
  std::stringstream ss;
  write_bench_csv(ss, rows);
  const auto back = read_bench_csv(ss);
  bool same = back.size() == rows.size();
  for (std::size_t i = 0; same && i < rows.size(); ++i)
    same = back[i].op == rows[i].op && back[i].c == rows[i].c && back[i].median_s > 0;
  r.holds("bench_csv_schema", "write then parse", same);
}

}  // namespace detail::verify

/// Runs the selected suites. Unknown suite names throw.
inline VerifyReport run_verify(const VerifyOptions& opt = {}) {
  if (!opt.suite.empty() && std::ranges::find(verify_suite_names(), opt.suite) ==
                                verify_suite_names().end())
    throw Error("unknown verify suite '" + opt.suite + "'");
  using namespace detail::verify;
  VerifyReport report;
  const auto start = std::chrono::steady_clock::now();
  auto run = [&](const std::string& name, const std::function<void(Recorder&, Rng&)>& body) {
    if (!opt.suite.empty() && opt.suite != name) return;
    Recorder rec(name, report);
    Rng rng(opt.seed);
    rec.guarded("suite", [&] { body(rec, rng); });
  };
  run("tensor", tensor_suite);
  run("spectral", spectral_suite);
  run("conv_ops", [&](Recorder& r, Rng& g) { conv_ops_suite(r, g, opt.fault); });
  run("layers", layers_suite);
  run("autograd", autograd_suite);
  run("model", [](Recorder& r, Rng&) { model_suite(r); });
  run("cli", cli_suite);
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace leanconv
