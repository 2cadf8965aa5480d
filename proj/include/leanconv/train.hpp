#pragma once

// Minibatch training with Adam, step-decay learning rate and optional
// horizontal flips; CSV logging and checkpoints.
//
// Reductions (batch statistics, gradient sums) always run in a fixed order,
// so a run is bitwise reproducible from its seed whatever LEANCONV_THREADS is.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "leanconv/data.hpp"
#include "leanconv/gradcheck.hpp"
#include "leanconv/layers.hpp"
#include "leanconv/network.hpp"
#include "leanconv/optim.hpp"
#include "leanconv/serialize.hpp"

namespace leanconv {

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 100;
  double lr0 = 0.01;
  double lr_decay = 0.5;
  std::size_t decay_every = 60;
  bool augment = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs == 0) throw Error("TrainConfig: epochs must be positive");
    if (batch_size == 0) throw Error("TrainConfig: batch_size must be positive");
    if (!(lr0 >= 0.0) || !std::isfinite(lr0))
      throw Error("TrainConfig: learning rate must be finite and non-negative");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw Error("TrainConfig: lr_decay must lie in (0, 1]");
    if (decay_every == 0) throw Error("TrainConfig: decay_every must be positive");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_acc = 0;
  double test_acc = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0;
};

/// Copies the given samples into a minibatch, flipping each with
/// probability 1/2 when `flips` is non-empty.
inline Tensor gather_batch(const Dataset& d, std::span<const std::size_t> idx,
                           std::span<const char> flips, std::vector<int>& labels) {
  const auto& s = d.images.shape();
  Tensor out(Shape4{idx.size(), s.c, s.h, s.w});
  labels.resize(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    auto src = d.images.sample(idx[b]);
    std::copy(src.begin(), src.end(), out.sample(b).begin());
    labels[b] = d.labels[idx[b]];
    if (!flips.empty() && flips[b]) flip_horizontal(out, b);
  }
  return out;
}

/// Eval-mode accuracy in batches of `batch_size`.
inline double evaluate_accuracy(Network& net, const Dataset& d, std::size_t batch_size = 200) {
  if (d.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  std::vector<int> labels;
  for (std::size_t first = 0; first < d.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, d.size() - first);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), first);
    const auto x = gather_batch(d, idx, {}, labels);
    const auto pred = argmax_classes(net.forward(x, Mode::eval));
    for (std::size_t b = 0; b < count; ++b) correct += pred[b] == labels[b];
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

class Trainer {
 public:
  Trainer(Network& net, TrainConfig cfg) : net_(net), cfg_(cfg), rng_(cfg.seed) { cfg_.validate(); }

  AdamState& optimizer() noexcept { return adam_; }
  std::size_t epochs_done() const noexcept { return epoch_; }

  /// Runs one epoch over `train` and evaluates on `test` when non-empty.
  EpochLog run_epoch(const Dataset& train, const Dataset* test = nullptr) {
    if (train.empty()) throw Error("train: empty dataset");
    if (cfg_.batch_size > train.size())
      throw Error("train: batch_size " + std::to_string(cfg_.batch_size) +
                  " exceeds dataset size " + std::to_string(train.size()));
    const auto start = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch_ + 1;
    log.lr = step_decay_lr(cfg_.lr0, cfg_.lr_decay, cfg_.decay_every, epoch_);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    std::vector<char> flips(order.size(), 0);
    if (cfg_.augment) {
      std::bernoulli_distribution coin(0.5);
      for (auto& f : flips) f = coin(rng_);
    }

    auto params = net_.params();
    double loss_sum = 0;
    std::size_t correct = 0;
    std::vector<int> labels;
    for (std::size_t first = 0; first < order.size(); first += cfg_.batch_size) {
      const std::size_t count = std::min(cfg_.batch_size, order.size() - first);
      const std::span<const std::size_t> idx(order.data() + first, count);
      const std::span<const char> fl =
          cfg_.augment ? std::span<const char>(flips.data() + first, count) : std::span<const char>{};
      const auto x = gather_batch(train, idx, fl, labels);

      zero_grads(params);
      GradTape tape;
      const auto logits = net_.forward(x, Mode::train, &tape);
      const auto res = softmax_cross_entropy(logits, labels);
      tape.backward(res.dlogits);
      adam_step(params, adam_, log.lr);

      loss_sum += res.loss * static_cast<double>(count);
      const auto pred = argmax_classes(logits);
      for (std::size_t b = 0; b < count; ++b) correct += pred[b] == labels[b];
    }
    log.train_loss = loss_sum / static_cast<double>(train.size());
    log.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
    if (test && !test->empty()) log.test_acc = evaluate_accuracy(net_, *test);
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ++epoch_;
    return log;
  }

 private:
  Network& net_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;
  AdamState adam_;
  std::size_t epoch_ = 0;
};

/// Trains for cfg.epochs, calling `on_epoch` after each epoch.
inline std::vector<EpochLog> train(Network& net, const Dataset& train_set,
                                   const Dataset* test_set, const TrainConfig& cfg,
                                   const std::function<void(const EpochLog&)>& on_epoch = {},
                                   AdamState* final_state = nullptr) {
  Trainer trainer(net, cfg);
  std::vector<EpochLog> log;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    log.push_back(trainer.run_epoch(train_set, test_set));
    if (on_epoch) on_epoch(log.back());
  }
  if (final_state) *final_state = trainer.optimizer();
  return log;
}

// ---------------------------------------------------------------------------
// Log and checkpoint files

inline void write_train_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "epoch,lr,train_loss,train_acc,test_acc,wall_seconds\n";
  os.precision(10);
  for (const auto& e : log) {
    os << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.train_acc << ',';
    if (std::isnan(e.test_acc))
      os << "nan";
    else
      os << e.test_acc;
    os << ',' << e.wall_seconds << '\n';
  }
}

/// Directory layout: weights.bin (every parameter, f64 LE, in parameter
/// order), norm_state.bin (per batchnorm: running mean, running variance,
/// initialized flag), optimizer.bin (Adam first then second moments) and
/// manifest.json describing all three.
inline void save_checkpoint(const std::filesystem::path& dir, Network& net,
                            const AdamState* adam = nullptr, std::size_t epoch = 0) {
  std::filesystem::create_directories(dir);
  const auto params = net.params();
  nlohmann::json manifest;
  manifest["format"] = "leanconv-checkpoint";
  manifest["encoding"] = "f64le";
  manifest["spec"] = to_json(net.spec());
  manifest["epoch"] = epoch;
  manifest["parameter_count"] = net.parameter_count();

  {
    std::ofstream os(dir / "weights.bin", std::ios::binary);
    if (!os) throw Error("cannot write " + (dir / "weights.bin").string());
    nlohmann::json list = nlohmann::json::array();
    for (const auto& p : params) {
      write_f64_stream<double>(os, p.value);
      list.push_back({{"name", p.name}, {"size", p.value.size()}});
    }
    manifest["parameters"] = list;
  }
  {
    std::ofstream os(dir / "norm_state.bin", std::ios::binary);
    if (!os) throw Error("cannot write " + (dir / "norm_state.bin").string());
    nlohmann::json list = nlohmann::json::array();
    for (auto* bn : net.norms()) {
      const auto& st = bn->state();
      write_f64_stream<double>(os, st.running_mean);
      write_f64_stream<double>(os, st.running_var);
      detail::put_f64(os, st.initialized ? 1.0 : 0.0);
      list.push_back({{"channels", bn->channels()}, {"eps", st.eps}});
    }
    manifest["norm_layers"] = list;
  }
  {
    nlohmann::json opt;
    opt["kind"] = "adam";
    opt["t"] = adam ? adam->t : 0;
    nlohmann::json shapes = nlohmann::json::array();
    if (adam && !adam->m.empty()) {
      std::ofstream os(dir / "optimizer.bin", std::ios::binary);
      if (!os) throw Error("cannot write " + (dir / "optimizer.bin").string());
      for (const auto& m : adam->m) {
        write_f64_stream<double>(os, m);
        shapes.push_back(m.size());
      }
      for (const auto& v : adam->v) write_f64_stream<double>(os, v);
    }
    opt["moment_sizes"] = shapes;
    manifest["optimizer"] = opt;
  }
  std::ofstream js(dir / "manifest.json");
  js << manifest.dump(2) << '\n';
}

struct Checkpoint {
  Network net;
  AdamState adam;
  std::size_t epoch = 0;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream js(dir / "manifest.json");
  if (!js) throw Error("no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(js);
  Checkpoint ck{Network(network_spec_from_json(manifest.at("spec")), 0), {}, 0};
  ck.epoch = manifest.value("epoch", std::size_t{0});

  const auto params = ck.net.params();
  const auto& listed = manifest.at("parameters");
  detail::check_dim("load_checkpoint", "parameter tensors", params.size(), listed.size());
  {
    std::ifstream is(dir / "weights.bin", std::ios::binary);
    if (!is) throw Error("cannot open " + (dir / "weights.bin").string());
    for (std::size_t i = 0; i < params.size(); ++i) {
      detail::check_dim("load_checkpoint", "parameter size", params[i].value.size(),
                        listed[i].at("size").get<std::size_t>());
      const auto w = read_f64_stream<double>(is, params[i].value.size());
      std::copy(w.begin(), w.end(), params[i].value.begin());
    }
  }
  {
    std::ifstream is(dir / "norm_state.bin", std::ios::binary);
    if (!is) throw Error("cannot open " + (dir / "norm_state.bin").string());
    for (auto* bn : ck.net.norms()) {
      auto& st = bn->state();
      st.running_mean = read_f64_stream<double>(is, bn->channels());
      st.running_var = read_f64_stream<double>(is, bn->channels());
      st.initialized = detail::get_f64(is) != 0.0;
    }
  }
  const auto& opt = manifest.at("optimizer");
  const auto sizes = opt.at("moment_sizes").get<std::vector<std::size_t>>();
  if (!sizes.empty()) {
    std::ifstream is(dir / "optimizer.bin", std::ios::binary);
    if (!is) throw Error("cannot open " + (dir / "optimizer.bin").string());
    for (auto n : sizes) ck.adam.m.push_back(read_f64_stream<double>(is, n));
    for (auto n : sizes) ck.adam.v.push_back(read_f64_stream<double>(is, n));
    ck.adam.t = opt.at("t").get<std::uint64_t>();
  }
  return ck;
}

}  // namespace leanconv
