#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "leanconv/data.hpp"
#include "leanconv/network.hpp"
#include "leanconv/optim.hpp"
#include "leanconv/train.hpp"
#include "test_support.hpp"

namespace lc = leanconv;
namespace fs = std::filesystem;
using lc::Mode;
using lc::Shape4;
using lc::StepKind;
using lc::Tensor;

namespace {

std::uint64_t count_of(std::string_view preset, StepKind kind) {
  lc::Network net(lc::preset_spec(preset, kind), 0);
  return net.parameter_count();
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("leanconv_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

lc::Dataset small_blobs(std::uint64_t seed = 3) {
  return lc::make_synthetic(2, 40, Shape4{0, 3, 8, 8}, seed);
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameter counts

struct CountCase {
  const char* preset;
  StepKind kind;
  double reported;
};

class ReportedCount : public ::testing::TestWithParam<CountCase> {};

TEST_P(ReportedCount, WithinTenPercent) {
  const auto& c = GetParam();
  const auto n = static_cast<double>(count_of(c.preset, c.kind));
  EXPECT_GE(n, 0.9 * c.reported) << n;
  EXPECT_LE(n, 1.1 * c.reported) << n;
}

INSTANTIATE_TEST_SUITE_P(
    Presets, ReportedCount,
    ::testing::Values(CountCase{"A", StepKind::resnet, 1.5e6},
                      CountCase{"A", StepKind::rd_explicit, 101e3},
                      CountCase{"A", StepKind::rd_implicit, 101e3},
                      CountCase{"A", StepKind::mobilenet, 101e3},
                      CountCase{"B", StepKind::rd_explicit, 216e3},
                      CountCase{"B", StepKind::mobilenet, 216e3},
                      CountCase{"A", StepKind::linearmix, 195e3},
                      CountCase{"B", StepKind::linearmix, 422e3},
                      CountCase{"B", StepKind::resnet, 3.5e6}),
    [](const auto& info) {
      return std::string(info.param.preset) + "_" + std::string(lc::to_string(info.param.kind));
    });

TEST(Counts, OrderingAcrossStepKinds) {
  for (const char* preset : {"A", "B", "C"}) {
    const auto resnet = count_of(preset, StepKind::resnet);
    const auto linearmix = count_of(preset, StepKind::linearmix);
    std::vector<std::uint64_t> light;
    for (auto k : {StepKind::mobilenet, StepKind::rd_explicit, StepKind::rd_implicit,
                   StepKind::rd_circulant})
      light.push_back(count_of(preset, k));
    const auto [lo, hi] = std::ranges::minmax(light);
    EXPECT_GT(resnet, 5 * linearmix) << preset;
    EXPECT_GT(linearmix, hi) << preset;
    EXPECT_LE(static_cast<double>(hi - lo), 0.02 * static_cast<double>(lo)) << preset;
  }
}

TEST(Counts, OperatorWeightsMatchClosedForms) {
  for (auto kind : lc::kAllStepKinds) {
    lc::Network net(lc::preset_spec("A", kind), 1);
    std::uint64_t total = 0;
    for (const auto& row : net.layer_counts()) {
      EXPECT_EQ(row.operator_weights, row.formula_weights) << row.label << " " << row.formula;
      total += row.total();
    }
    EXPECT_EQ(total, net.parameter_count());
  }
}

TEST(Counts, StepFormulasByHand) {
  EXPECT_EQ(lc::step_formula(StepKind::resnet, 3, 32).second, 2u * 9 * 32 * 32);
  EXPECT_EQ(lc::step_formula(StepKind::linearmix, 3, 32).second, 2u * (9 * 32 + 32 * 32));
  for (auto k : {StepKind::mobilenet, StepKind::rd_explicit, StepKind::rd_implicit,
                 StepKind::rd_circulant})
    EXPECT_EQ(lc::step_formula(k, 5, 64).second, 25u * 64 + 64 * 64);
}

// ---------------------------------------------------------------------------
// NetworkSpec

TEST(NetworkSpec, JsonRoundTrip) {
  auto s = lc::preset_spec("C", StepKind::rd_implicit, 5);
  s.h = 0.25;
  s.num_classes = 7;
  s.norm_affine = false;
  const auto back = lc::network_spec_from_json(nlohmann::json::parse(lc::to_json(s).dump()));
  EXPECT_EQ(lc::to_json(back), lc::to_json(s));
}

TEST(NetworkSpec, ValidationErrors) {
  EXPECT_THROW(lc::preset_spec("Z", StepKind::resnet), lc::Error);
  EXPECT_THROW(lc::parse_step_kind("densenet"), lc::Error);
  auto s = lc::preset_spec("A", StepKind::resnet);
  s.channel_plan = {32, 48};
  EXPECT_THROW(s.validate(), lc::Error);
  s = lc::preset_spec("A", StepKind::resnet);
  s.stencil_size = 4;
  EXPECT_THROW(s.validate(), lc::Error);
  s = lc::preset_spec("A", StepKind::resnet);
  s.num_classes = 1;
  EXPECT_THROW(s.validate(), lc::Error);
  s = lc::preset_spec("A", StepKind::rd_explicit);
  s.h = -1;
  EXPECT_THROW(s.validate(), lc::Error);
}

TEST(Network, RejectsIncompatibleInput) {
  lc::Network net(lc::preset_spec("mini", StepKind::rd_explicit), 0);
  EXPECT_THROW(net.forward(Tensor(Shape4{2, 1, 8, 8}), Mode::train), lc::Error);
  EXPECT_THROW(net.forward(Tensor(Shape4{2, 3, 7, 7}), Mode::train), lc::Error);
  EXPECT_NO_THROW(net.forward(Tensor(Shape4{2, 3, 8, 8}), Mode::train));
}

TEST(Network, LogitShapeAndLayout) {
  lc::Network net(lc::preset_spec("A", StepKind::mobilenet), 0);
  // opening, 3 blocks of 4 steps, 2 connecting layers, classifier
  EXPECT_EQ(net.layer_count(), 1u + 12 + 2 + 1);
  lc::testing::Rng rng(1);
  const auto y = net.forward(lc::testing::random_tensor(rng, {2, 3, 16, 16}), Mode::train);
  EXPECT_EQ(y.shape(), (Shape4{2, 10, 1, 1}));
}

TEST(Network, ConstructionIsDeterministicPerSeed) {
  lc::Network a(lc::preset_spec("mini", StepKind::rd_implicit), 9);
  lc::Network b(lc::preset_spec("mini", StepKind::rd_implicit), 9);
  lc::Network c(lc::preset_spec("mini", StepKind::rd_implicit), 10);
  const auto pa = a.params(), pb = b.params(), pc = c.params();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(std::ranges::equal(pa[i].value, pb[i].value)) << pa[i].name;
    differs = differs || !std::ranges::equal(pa[i].value, pc[i].value);
  }
  EXPECT_TRUE(differs);
}

// ---------------------------------------------------------------------------
// Adam

TEST(Adam, ZeroGradientLeavesWeights) {
  std::vector<double> w{1.0, -2.0}, g{0.0, 0.0};
  const lc::ParamRef p{"w", w, g};
  lc::AdamState st;
  for (int k = 0; k < 5; ++k) lc::adam_step(std::span(&p, 1), st, 0.1);
  EXPECT_EQ(w, (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(st.m[0], (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(st.t, 5u);
}

TEST(Adam, ConstantGradientStepTendsToLearningRate) {
  std::vector<double> w{0.0, 0.0}, g{3.0, -0.01};
  const lc::ParamRef p{"w", w, g};
  lc::AdamState st;
  std::vector<double> prev = w;
  for (int k = 0; k < 2000; ++k) {
    prev = w;
    lc::adam_step(std::span(&p, 1), st, 1e-3);
  }
  EXPECT_NEAR(prev[0] - w[0], 1e-3, 1e-9);
  EXPECT_NEAR(w[1] - prev[1], 1e-3, 1e-8);
}

TEST(Adam, TenStepsMatchScalarRecomputation) {
  const double a = 2.5, lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> w{1.7}, g{0.0};
  const lc::ParamRef p{"w", w, g};
  lc::AdamState st;
  double x = 1.7, m = 0, v = 0;
  for (int t = 1; t <= 10; ++t) {
    g[0] = a * w[0];
    lc::adam_step(std::span(&p, 1), st, lr);
    const double gx = a * x;
    m = b1 * m + (1 - b1) * gx;
    v = b2 * v + (1 - b2) * gx * gx;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
    EXPECT_NEAR(w[0], x, 1e-12) << "step " << t;
  }
}

TEST(Adam, StepDecaySchedule) {
  EXPECT_EQ(lc::step_decay_lr(0.01, 0.5, 60, 0), 0.01);
  EXPECT_EQ(lc::step_decay_lr(0.01, 0.5, 60, 59), 0.01);
  EXPECT_EQ(lc::step_decay_lr(0.01, 0.5, 60, 60), 0.005);
  EXPECT_EQ(lc::step_decay_lr(0.01, 0.5, 60, 130), 0.0025);
  EXPECT_THROW(lc::step_decay_lr(0.01, 0.5, 0, 1), lc::Error);
}

// ---------------------------------------------------------------------------
// Training

TEST(Train, ZeroLearningRateKeepsWeights) {
  lc::Network net(lc::preset_spec("mini", StepKind::rd_explicit), 2);
  std::vector<std::vector<double>> before;
  for (const auto& p : net.params()) before.emplace_back(p.value.begin(), p.value.end());
  lc::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  cfg.lr0 = 0.0;
  lc::train(net, small_blobs(), nullptr, cfg);
  const auto after = net.params();
  for (std::size_t i = 0; i < after.size(); ++i)
    EXPECT_TRUE(std::ranges::equal(after[i].value, before[i])) << after[i].name;
}

TEST(Train, InputErrors) {
  lc::Network net(lc::preset_spec("mini", StepKind::rd_explicit), 2);
  lc::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 41;
  EXPECT_THROW(lc::train(net, small_blobs(), nullptr, cfg), lc::Error);
  cfg.batch_size = 10;
  EXPECT_THROW(lc::train(net, lc::Dataset{}, nullptr, cfg), lc::Error);
  cfg.epochs = 0;
  EXPECT_THROW(lc::train(net, small_blobs(), nullptr, cfg), lc::Error);
}

TEST(Train, LossDecreasesOnBlobs) {
  lc::Network net(lc::preset_spec("mini", StepKind::rd_explicit), 4);
  lc::TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 10;
  const auto log = lc::train(net, small_blobs(), nullptr, cfg);
  EXPECT_LT(log.back().train_loss, 0.5 * log.front().train_loss);
}

TEST(Train, SameSeedGivesBitwiseIdenticalCheckpoints) {
  auto run = [](const fs::path& dir) {
    lc::Network net(lc::preset_spec("mini", StepKind::rd_implicit), 11);
    lc::TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 11;
    lc::AdamState st;
    lc::train(net, small_blobs(), nullptr, cfg, {}, &st);
    lc::save_checkpoint(dir, net, &st, cfg.epochs);
  };
  const auto a = scratch_dir("det_a"), b = scratch_dir("det_b");
  run(a);
  run(b);
  for (const char* f : {"weights.bin", "norm_state.bin", "optimizer.bin", "manifest.json"}) {
    const auto x = slurp(a / f), y = slurp(b / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, y) << f;
  }
}

TEST(Checkpoint, RoundTripForwardIsBitwiseEqual) {
  lc::Network net(lc::preset_spec("mini", StepKind::rd_circulant), 5);
  lc::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  lc::AdamState st;
  const auto data = small_blobs();
  lc::train(net, data, nullptr, cfg, {}, &st);
  const auto dir = scratch_dir("ckpt");
  lc::save_checkpoint(dir, net, &st, 1);
  auto ck = lc::load_checkpoint(dir);
  EXPECT_EQ(ck.epoch, 1u);
  EXPECT_EQ(ck.adam.t, st.t);
  EXPECT_EQ(ck.adam.m, st.m);
  EXPECT_EQ(ck.adam.v, st.v);
  const auto x = data.images;
  const auto y0 = net.forward(x, Mode::eval), y1 = ck.net.forward(x, Mode::eval);
  EXPECT_TRUE(std::ranges::equal(y0.data(), y1.data()));
}

TEST(Checkpoint, MissingManifestThrows) {
  EXPECT_THROW(lc::load_checkpoint(scratch_dir("empty")), lc::Error);
}

TEST(TrainLog, CsvColumns) {
  const auto dir = scratch_dir("log");
  lc::EpochLog e;
  e.epoch = 1;
  lc::write_train_log(dir / "log.csv", {e});
  std::ifstream is(dir / "log.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "epoch,lr,train_loss,train_acc,test_acc,wall_seconds");
}

// ---------------------------------------------------------------------------
// Data

TEST(Cifar, FabricatedRecordsRoundTripExactly) {
  const auto dir = scratch_dir("cifar");
  const std::size_t records = 3;
  std::vector<unsigned char> labels{7, 0, 9}, pixels(records * lc::kCifarPixels);
  for (std::size_t k = 0; k < pixels.size(); ++k) pixels[k] = static_cast<unsigned char>(k * 31 % 256);
  lc::write_cifar10_file(dir / "batch.bin", labels, pixels);
  const auto d = lc::read_cifar10_file(dir / "batch.bin", records);
  ASSERT_EQ(d.size(), records);
  EXPECT_EQ(d.images.shape(), (Shape4{3, 3, 32, 32}));
  for (std::size_t r = 0; r < records; ++r) {
    EXPECT_EQ(d.labels[r], labels[r]);
    const auto s = d.images.sample(r);
    for (std::size_t k = 0; k < lc::kCifarPixels; ++k)
      ASSERT_EQ(s[k], pixels[r * lc::kCifarPixels + k] / 255.0);
  }
  // red plane first, row-major: pixel (c=1, i=2, j=5)
  EXPECT_EQ(d.images(1, 1, 2, 5), pixels[lc::kCifarPixels + 1024 + 2 * 32 + 5] / 255.0);
}

TEST(Cifar, TruncatedFileReportsDeficit) {
  const auto dir = scratch_dir("cifar_short");
  std::vector<unsigned char> labels{1, 2}, pixels(2 * lc::kCifarPixels, 0);
  lc::write_cifar10_file(dir / "batch.bin", labels, pixels);
  fs::resize_file(dir / "batch.bin", 2 * lc::kCifarRecord - 100);
  try {
    lc::read_cifar10_file(dir / "batch.bin", 2);
    FAIL() << "expected DatasetFormatError";
  } catch (const lc::DatasetFormatError& e) {
    EXPECT_EQ(e.deficit(), 100);
    EXPECT_EQ(e.expected(), 2 * lc::kCifarRecord);
    EXPECT_NE(std::string(e.what()).find("short by 100"), std::string::npos);
  }
}

TEST(Cifar, MissingDirectoryIsAnError) {
  EXPECT_THROW(lc::load_cifar10(scratch_dir("cifar_none")), lc::Error);
}

TEST(Cifar, StandardizationGivesZeroMeanUnitVariance) {
  lc::testing::Rng rng(6);
  auto x = lc::testing::random_tensor(rng, {5, 3, 4, 4}, 0.0, 1.0);
  const auto st = lc::compute_channel_stats(x);
  lc::standardize(x, st);
  const auto after = lc::compute_channel_stats(x);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(after.mean[c], 0.0, 1e-14);
    EXPECT_NEAR(after.stddev[c], 1.0, 1e-14);
  }
}

TEST(Synthetic, SameSeedSameData) {
  const auto a = lc::make_synthetic(3, 50, Shape4{0, 3, 8, 8}, 5);
  const auto b = lc::make_synthetic(3, 50, Shape4{0, 3, 8, 8}, 5);
  const auto c = lc::make_synthetic(3, 50, Shape4{0, 3, 8, 8}, 6);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_TRUE(std::ranges::equal(a.images.data(), b.images.data()));
  EXPECT_FALSE(std::ranges::equal(a.images.data(), c.images.data()));
  EXPECT_NO_THROW(a.validate());
}

TEST(Synthetic, LabelHistogramIsUniformWithinOne) {
  for (std::size_t classes : {2u, 3u, 7u}) {
    const auto d = lc::make_synthetic(classes, 101, Shape4{0, 3, 4, 4}, 2);
    std::map<int, std::size_t> hist;
    for (int y : d.labels) ++hist[y];
    EXPECT_EQ(hist.size(), classes);
    for (const auto& [label, n] : hist) {
      EXPECT_GE(n, 101 / classes);
      EXPECT_LE(n, 101 / classes + 1);
    }
  }
}

TEST(Synthetic, ClassMeansSeparateAfterPooling) {
  const auto d = lc::make_synthetic(2, 200, Shape4{0, 3, 8, 8}, 1);
  // Pooled per-sample channel means projected on the class-mean difference
  // fall on the right side of the midpoint for nearly every sample.
  std::vector<std::vector<double>> pooled(d.size(), std::vector<double>(3, 0.0));
  std::vector<std::vector<double>> mean(2, std::vector<double>(3, 0.0));
  std::vector<double> count(2, 0.0);
  for (std::size_t n = 0; n < d.size(); ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (double v : d.images.plane(n, c)) pooled[n][c] += v / 64.0;
      mean[d.labels[n]][c] += pooled[n][c];
    }
    count[d.labels[n]] += 1;
  }
  std::vector<double> dir(3), mid(3);
  for (std::size_t c = 0; c < 3; ++c) {
    mean[0][c] /= count[0];
    mean[1][c] /= count[1];
    dir[c] = mean[1][c] - mean[0][c];
    mid[c] = 0.5 * (mean[1][c] + mean[0][c]);
  }
  std::size_t right = 0;
  for (std::size_t n = 0; n < d.size(); ++n) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += (pooled[n][c] - mid[c]) * dir[c];
    right += (s > 0) == (d.labels[n] == 1);
  }
  EXPECT_GE(right, 195u);
}

TEST(Synthetic, RejectsDegenerateRequests) {
  EXPECT_THROW(lc::make_synthetic(1, 10, Shape4{0, 3, 4, 4}, 0), lc::Error);
  EXPECT_THROW(lc::make_synthetic(2, 0, Shape4{0, 3, 4, 4}, 0), lc::Error);
}

TEST(Dataset, SubsetAndValidation) {
  const auto d = small_blobs();
  const auto s = d.subset(5, 10);
  EXPECT_EQ(s.size(), 10u);
  EXPECT_EQ(s.labels.front(), d.labels[5]);
  EXPECT_TRUE(std::ranges::equal(s.images.sample(0), d.images.sample(5)));
  EXPECT_THROW(d.subset(35, 10), lc::Error);
  auto bad = d;
  bad.labels[0] = 2;
  EXPECT_THROW(bad.validate(), lc::Error);
}

TEST(Augment, FlipTwiceIsIdentity) {
  lc::testing::Rng rng(8);
  const auto x = lc::testing::random_tensor(rng, {2, 3, 4, 5});
  auto y = x;
  lc::flip_horizontal(y, 1);
  EXPECT_EQ(y(1, 2, 3, 0), x(1, 2, 3, 4));
  EXPECT_TRUE(std::ranges::equal(y.sample(0), x.sample(0)));
  lc::flip_horizontal(y, 1);
  EXPECT_TRUE(std::ranges::equal(y.data(), x.data()));
}
