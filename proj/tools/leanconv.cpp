// leanconv command-line tool: verify, count, bench and train.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "leanconv/leanconv.hpp"

namespace {

using namespace leanconv;

constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// verify

struct VerifyArgs {
  std::string suite;
  std::string report;
  std::uint64_t seed = 1;
  std::string fault = "none";
};

int cmd_verify(const VerifyArgs& a) {
  VerifyOptions opt;
  opt.suite = a.suite;
  opt.seed = a.seed;
  if (a.fault == "broken-adjoint")
    opt.fault = VerifyFault::broken_adjoint;
  else if (a.fault != "none")
    throw UsageError("unknown fault '" + a.fault + "' (expected none or broken-adjoint)");
  if (!opt.suite.empty() && std::ranges::find(verify_suite_names(), opt.suite) ==
                                verify_suite_names().end())
    throw UsageError("unknown suite '" + opt.suite + "'");

  const auto report = run_verify(opt);
  const auto j = report.to_json();
  for (const auto& [name, s] : j["suites"].items())
    std::cout << std::left << std::setw(10) << name << ' ' << s["cases"] << " cases, "
              << s["failed"] << " failed\n";
  for (const auto& c : report.cases)
    if (!c.passed)
      std::cout << "FAIL " << c.suite << '/' << c.invariant << " [" << c.detail << "] error "
                << c.error << " > " << c.tolerance << '\n';
  if (!a.report.empty()) {
    std::ofstream os(a.report);
    if (!os) throw Error("cannot open " + a.report + " for writing");
    os << j.dump(2) << '\n';
  }
  if (report.passed()) {
    std::cout << "verify: all " << report.cases.size() << " cases passed\n";
    return 0;
  }
  std::cout << "verify: failed suites:";
  for (const auto& s : report.failed_suites()) std::cout << ' ' << s;
  std::cout << '\n';
  return 1;
}

// ---------------------------------------------------------------------------
// count

struct CountArgs {
  std::string network = "A";
  std::string step = "rd_explicit";
  std::string op;
  std::size_t m = 3;
  std::size_t c = 64;
};

int cmd_count(const CountArgs& a) {
  if (!a.op.empty()) {
    const auto kind = parse_op_kind(a.op);
    std::cout << to_string(kind) << " m=" << a.m << " c=" << a.c << ": "
              << param_count(kind, a.m, a.c, a.c) << " operator weights ("
              << param_formula(kind) << ")\n";
    return 0;
  }
  Network net(preset_spec(a.network, parse_step_kind(a.step), a.m), 0);
  const auto rows = net.layer_counts();
  std::cout << std::left << std::setw(16) << "layer" << std::setw(14) << "kind" << std::setw(18)
            << "formula" << std::right << std::setw(12) << "formula" << std::setw(12)
            << "operator" << std::setw(8) << "norm" << std::setw(12) << "total" << '\n';
  bool exact = true;
  std::uint64_t total = 0;
  for (const auto& r : rows) {
    exact = exact && r.formula_weights == r.operator_weights;
    total += r.total();
    std::cout << std::left << std::setw(16) << r.label << std::setw(14) << r.kind << std::setw(18)
              << r.formula << std::right << std::setw(12) << r.formula_weights << std::setw(12)
              << r.operator_weights << std::setw(8) << r.norm_weights << std::setw(12)
              << r.total() << (r.formula_weights == r.operator_weights ? "" : "  MISMATCH")
              << '\n';
  }
  std::cout << "total parameters: " << total << " (network " << a.network << ", " << a.step
            << ", m=" << a.m << ")\n";
  return exact ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string axis = "channels";
  std::vector<std::size_t> grid{64, 128, 256, 512};
  std::vector<std::string> ops;
  BenchConfig cfg;
  std::string out = "bench.csv";
  std::string plot;
};

int cmd_bench(BenchArgs a) {
  a.cfg.axis = parse_bench_axis(a.axis);
  a.cfg.grid = a.grid;
  if (!a.ops.empty()) {
    a.cfg.ops.clear();
    for (const auto& o : a.ops) a.cfg.ops.push_back(parse_bench_op(o));
  }
  try {
    a.cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  std::cout << "threads " << thread_count() << ", batch " << a.cfg.batch << ", reps "
            << a.cfg.reps << " (warmup " << a.cfg.warmup << ")\n";
  const auto rows = run_bench(a.cfg, [](const BenchResult& r) {
    std::cout << std::left << std::setw(12) << to_string(r.axis) << std::right << std::setw(5)
              << r.value << "  " << std::left << std::setw(22) << to_string(r.op) << std::right
              << std::scientific << std::setprecision(3) << r.median_s << " s  ratio "
              << std::fixed << std::setprecision(2) << r.ratio << '\n'
              << std::defaultfloat;
  });
  write_bench_csv(a.out, rows);
  std::cout << "wrote " << a.out << '\n';
  if (!a.plot.empty()) {
    write_bench_svg(a.plot, rows);
    std::cout << "wrote " << a.plot << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string dataset;
  std::string data;
  std::string network = "A";
  std::string step = "rd_explicit";
  std::size_t m = 3;
  std::string out = "ckpt";
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::size_t samples = 200;
  std::size_t classes = 2;
  std::size_t image_size = 8;
  bool no_augment = false;
  TrainConfig cfg;
};

int cmd_train(TrainArgs a) {
  Dataset train_set, test_set;
  if (a.dataset == "cifar10") {
    if (a.data.empty()) throw UsageError("--data PATH is required for --dataset cifar10");
    if (!std::filesystem::exists(a.data))
      throw UsageError("dataset path " + a.data + " does not exist");
    auto split = load_cifar10(a.data, a.train_limit, a.test_limit);
    train_set = std::move(split.train);
    test_set = std::move(split.test);
  } else if (a.dataset == "synthetic") {
    const auto all =
        make_synthetic(a.classes, a.samples, Shape4{0, 3, a.image_size, a.image_size}, a.cfg.seed);
    train_set = all;
  } else {
    throw UsageError("--dataset must be cifar10 or synthetic");
  }
  a.cfg.augment = !a.no_augment;
  try {
    a.cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  auto spec = preset_spec(a.network, parse_step_kind(a.step), a.m);
  spec.num_classes = train_set.num_classes;
  Network net(spec, a.cfg.seed);
  std::cout << "network " << a.network << " " << a.step << ": " << net.parameter_count()
            << " parameters, " << train_set.size() << " training samples, threads "
            << thread_count() << '\n';

  AdamState adam;
  const auto log = train(
      net, train_set, test_set.empty() ? nullptr : &test_set, a.cfg,
      [](const EpochLog& e) {
        std::cout << "epoch " << std::setw(3) << e.epoch << "  lr " << e.lr << "  loss "
                  << std::fixed << std::setprecision(4) << e.train_loss << "  train acc "
                  << e.train_acc;
        if (std::isfinite(e.test_acc)) std::cout << "  test acc " << e.test_acc;
        std::cout << "  " << std::setprecision(1) << e.wall_seconds << " s\n"
                  << std::defaultfloat;
      },
      &adam);
  const std::filesystem::path out(a.out);
  save_checkpoint(out, net, &adam, a.cfg.epochs);
  write_train_log(out / "train_log.csv", log);
  std::cout << "wrote checkpoint and train_log.csv to " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  leanconv::retain_freed_memory();
  CLI::App app{"leanconv: low-cost convolution operators, checks and benchmarks"};
  app.require_subcommand(1);

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Run invariant suites and report JSON");
  verify->add_option("--suite", va.suite, "Run one suite only");
  verify->add_option("--report", va.report, "Write the JSON report to this file");
  verify->add_option("--seed", va.seed, "Random seed")->capture_default_str();
  verify->add_option("--inject-fault", va.fault, "Test fixture: none or broken-adjoint")
      ->capture_default_str();

  CountArgs ca;
  auto* count = app.add_subcommand("count", "Per-layer parameter counts with closed forms");
  count->add_option("--network", ca.network, "A, B, C or mini")->capture_default_str();
  count->add_option("--step", ca.step, "Step kind")->capture_default_str();
  count->add_option("--m", ca.m, "Stencil size")->capture_default_str();
  count->add_option("--op", ca.op, "Count a single operator kind instead of a network");
  count->add_option("--c", ca.c, "Channels for --op")->capture_default_str();

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time direct and FFT operator paths");
  bench->add_option("--axis", ba.axis, "image_size, kernel_size or channels")
      ->capture_default_str();
  bench->add_option("--grid", ba.grid, "Values of the swept axis")->delimiter(',');
  bench->add_option("--ops", ba.ops, "Subset of ops")->delimiter(',');
  bench->add_option("--reps", ba.cfg.reps, "Timed repetitions")->capture_default_str();
  bench->add_option("--warmup", ba.cfg.warmup, "Untimed warmup calls")->capture_default_str();
  bench->add_option("--batch", ba.cfg.batch, "Batch size")->capture_default_str();
  bench->add_option("--image-size", ba.cfg.image_size, "Image side")->capture_default_str();
  bench->add_option("--channels", ba.cfg.channels, "Channels")->capture_default_str();
  bench->add_option("--kernel-size", ba.cfg.kernel_size, "Stencil size")->capture_default_str();
  bench->add_option("--seed", ba.cfg.seed, "Input seed")->capture_default_str();
  bench->add_option("--out", ba.out, "CSV output")->capture_default_str();
  bench->add_option("--plot", ba.plot, "SVG output");

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "Train a network and write a checkpoint");
  trainc->add_option("--dataset", ta.dataset, "cifar10 or synthetic")->required();
  trainc->add_option("--data", ta.data, "CIFAR-10 binary directory");
  trainc->add_option("--network", ta.network, "A, B, C or mini")->capture_default_str();
  trainc->add_option("--step", ta.step, "Step kind")->capture_default_str();
  trainc->add_option("--m", ta.m, "Stencil size")->capture_default_str();
  trainc->add_option("--epochs", ta.cfg.epochs, "Epochs")->capture_default_str();
  trainc->add_option("--batch-size", ta.cfg.batch_size, "Batch size")->capture_default_str();
  trainc->add_option("--lr", ta.cfg.lr0, "Initial learning rate")->capture_default_str();
  trainc->add_option("--seed", ta.cfg.seed, "Seed")->capture_default_str();
  trainc->add_option("--out", ta.out, "Checkpoint directory")->capture_default_str();
  trainc->add_option("--train-limit", ta.train_limit, "Keep the first N training samples");
  trainc->add_option("--test-limit", ta.test_limit, "Keep the first N test samples");
  trainc->add_option("--samples", ta.samples, "Synthetic sample count")->capture_default_str();
  trainc->add_option("--classes", ta.classes, "Synthetic class count")->capture_default_str();
  trainc->add_option("--image-size", ta.image_size, "Synthetic image side")
      ->capture_default_str();
  trainc->add_flag("--no-augment", ta.no_augment, "Disable random horizontal flips");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*verify) return cmd_verify(va);
    if (*count) return cmd_count(ca);
    if (*bench) return cmd_bench(ba);
    if (*trainc) return cmd_train(ta);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\nRun with --help for usage.\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
