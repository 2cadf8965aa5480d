#pragma once

// Datasets: the CIFAR-10 binary format, synthetic Gaussian blobs, per-channel
// standardization and horizontal-flip augmentation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "leanconv/error.hpp"
#include "leanconv/tensor.hpp"

namespace leanconv {

struct Dataset {
  Tensor4<double> images;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string split;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  void validate() const {
    detail::check_dim("Dataset", "image count", labels.size(), images.shape().n);
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
        throw Error("Dataset: label " + std::to_string(y) + " outside [0, " +
                    std::to_string(num_classes) + ")");
  }

  /// Samples [first, first + count) as a new dataset.
  Dataset subset(std::size_t first, std::size_t count) const {
    if (first + count > size()) throw Error("Dataset::subset: range exceeds dataset size");
    const auto& s = images.shape();
    Dataset out;
    out.images = Tensor4<double>(Shape4{count, s.c, s.h, s.w});
    std::copy_n(images.data().begin() + first * s.sample(), count * s.sample(),
                out.images.data().begin());
    out.labels.assign(labels.begin() + first, labels.begin() + first + count);
    out.num_classes = num_classes;
    out.split = split;
    return out;
  }
};

/// A CIFAR-10 file whose size is not a whole number of records.
class DatasetFormatError : public Error {
 public:
  DatasetFormatError(const std::string& path, std::uintmax_t expected, std::uintmax_t actual)
      : Error("CIFAR-10 file " + path + ": expected " + std::to_string(expected) +
              " bytes, found " + std::to_string(actual) + " (" +
              (actual < expected ? "short by " + std::to_string(expected - actual)
                                 : "over by " + std::to_string(actual - expected)) +
              " bytes)"),
        expected_(expected),
        actual_(actual) {}

  std::uintmax_t expected() const noexcept { return expected_; }
  std::uintmax_t actual() const noexcept { return actual_; }
  std::intmax_t deficit() const noexcept {
    return static_cast<std::intmax_t>(expected_) - static_cast<std::intmax_t>(actual_);
  }

 private:
  std::uintmax_t expected_, actual_;
};

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecord = 1 + kCifarPixels;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

struct ChannelStats {
  std::vector<double> mean, stddev;
};

inline ChannelStats compute_channel_stats(const Tensor4<double>& x) {
  const auto& s = x.shape();
  ChannelStats st{std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0)};
  const double count = static_cast<double>(s.n * s.plane());
  for (std::size_t c = 0; c < s.c; ++c) {
    double acc = 0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (double v : x.plane(n, c)) acc += v;
    const double mu = acc / count;
    double sq = 0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (double v : x.plane(n, c)) sq += (v - mu) * (v - mu);
    st.mean[c] = mu;
    st.stddev[c] = std::sqrt(sq / count);
  }
  return st;
}

inline void standardize(Tensor4<double>& x, const ChannelStats& st) {
  const auto& s = x.shape();
  detail::check_dim("standardize", "channels", st.mean.size(), s.c);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double inv = st.stddev[c] > 0 ? 1.0 / st.stddev[c] : 1.0;
      for (auto& v : x.plane(n, c)) v = (v - st.mean[c]) * inv;
    }
}

/// Reads one CIFAR-10 binary batch: records of one label byte followed by
/// 3072 pixel bytes (R, G, B planes, each row-major). Pixels are scaled to
/// [0, 1]; no standardization.
inline Dataset read_cifar10_file(const std::filesystem::path& path,
                                 std::size_t expected_records = kCifarRecordsPerFile) {
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(path, ec);
  if (ec) throw Error("cannot read CIFAR-10 file " + path.string() + ": " + ec.message());
  const std::uintmax_t expected = expected_records * kCifarRecord;
  if (bytes != expected) throw DatasetFormatError(path.string(), expected, bytes);

  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open CIFAR-10 file " + path.string());
  std::vector<unsigned char> raw(bytes);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (!is) throw Error("short read from " + path.string());

  Dataset d;
  d.num_classes = 10;
  d.images = Tensor4<double>(Shape4{expected_records, 3, kCifarSide, kCifarSide});
  d.labels.resize(expected_records);
  for (std::size_t r = 0; r < expected_records; ++r) {
    const unsigned char* rec = raw.data() + r * kCifarRecord;
    if (rec[0] > 9)
      throw Error("CIFAR-10 file " + path.string() + ": record " + std::to_string(r) +
                  " has label " + std::to_string(rec[0]));
    d.labels[r] = rec[0];
    auto dst = d.images.sample(r);
    for (std::size_t k = 0; k < kCifarPixels; ++k) dst[k] = rec[1 + k] / 255.0;
  }
  return d;
}

/// Writes records in the CIFAR-10 binary layout.
inline void write_cifar10_file(const std::filesystem::path& path,
                               std::span<const unsigned char> labels,
                               std::span<const unsigned char> pixels) {
  detail::check_dim("write_cifar10_file", "pixel bytes", labels.size() * kCifarPixels,
                    pixels.size());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  for (std::size_t r = 0; r < labels.size(); ++r) {
    os.put(static_cast<char>(labels[r]));
    os.write(reinterpret_cast<const char*>(pixels.data() + r * kCifarPixels),
             static_cast<std::streamsize>(kCifarPixels));
  }
}

struct Cifar10Split {
  Dataset train, test;
  ChannelStats stats;
};

/// Loads data_batch_1..5.bin and test_batch.bin from a directory (or a
/// "cifar-10-batches-bin" subdirectory), keeps the first train_limit /
/// test_limit samples (0 = all) and standardizes both splits with the
/// training split's per-channel statistics.
inline Cifar10Split load_cifar10(const std::filesystem::path& root, std::size_t train_limit = 0,
                                 std::size_t test_limit = 0) {
  auto dir = root;
  if (!std::filesystem::exists(dir / "data_batch_1.bin") &&
      std::filesystem::exists(dir / "cifar-10-batches-bin" / "data_batch_1.bin"))
    dir = dir / "cifar-10-batches-bin";
  if (!std::filesystem::exists(dir / "data_batch_1.bin"))
    throw Error("no CIFAR-10 binary batches under " + root.string() +
                " (expected data_batch_1.bin ... data_batch_5.bin, test_batch.bin)");

  auto concat = [](std::vector<Dataset>& parts, std::size_t limit, const char* split) {
    std::size_t total = 0;
    for (const auto& p : parts) total += p.size();
    if (limit == 0 || limit > total) limit = total;
    Dataset out;
    out.num_classes = 10;
    out.split = split;
    out.images = Tensor4<double>(Shape4{limit, 3, kCifarSide, kCifarSide});
    std::size_t at = 0;
    for (const auto& p : parts) {
      const std::size_t take = std::min(p.size(), limit - at);
      std::copy_n(p.images.data().begin(), take * kCifarPixels,
                  out.images.data().begin() + at * kCifarPixels);
      out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.begin() + take);
      at += take;
      if (at == limit) break;
    }
    return out;
  };

  std::vector<Dataset> train_parts;
  std::size_t have = 0;
  for (int b = 1; b <= 5; ++b) {
    if (train_limit != 0 && have >= train_limit) break;
    train_parts.push_back(read_cifar10_file(dir / ("data_batch_" + std::to_string(b) + ".bin")));
    have += train_parts.back().size();
  }
  std::vector<Dataset> test_parts;
  if (std::filesystem::exists(dir / "test_batch.bin"))
    test_parts.push_back(read_cifar10_file(dir / "test_batch.bin"));

  Cifar10Split out;
  out.train = concat(train_parts, train_limit, "train");
  out.test = concat(test_parts, test_limit, "test");
  out.stats = compute_channel_stats(out.train.images);
  standardize(out.train.images, out.stats);
  if (!out.test.empty()) standardize(out.test.images, out.stats);
  return out;
}

/// Gaussian blobs: class k has a fixed per-channel mean pattern plus a
/// bright spot at a class-specific position; samples add unit-variance
/// pixel noise. Labels cycle through the classes before shuffling, so every
/// class count is within one of samples / classes.
inline Dataset make_synthetic(std::size_t classes, std::size_t samples, Shape4 shape,
                              std::uint64_t seed, double separation = 3.0) {
  if (classes < 2) throw Error("make_synthetic: need at least 2 classes");
  if (samples == 0) throw Error("make_synthetic: need at least 1 sample");
  const std::size_t c = shape.c, h = shape.h, w = shape.w;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;

  std::vector<std::vector<double>> means(classes, std::vector<double>(c));
  for (auto& m : means) {
    for (auto& v : m) v = normal(rng);
    double norm = 0;
    for (double v : m) norm += v * v;
    norm = std::sqrt(norm);
    for (auto& v : m) v *= separation / std::max(norm, 1e-12);
  }
  std::vector<std::pair<std::size_t, std::size_t>> spots(classes);
  std::uniform_int_distribution<std::size_t> pick_i(0, h - 1), pick_j(0, w - 1);
  for (auto& s : spots) s = {pick_i(rng), pick_j(rng)};

  std::vector<int> labels(samples);
  for (std::size_t i = 0; i < samples; ++i) labels[i] = static_cast<int>(i % classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  Dataset d;
  d.num_classes = classes;
  d.split = "synthetic";
  d.labels = labels;
  d.images = Tensor4<double>(Shape4{samples, c, h, w});
  const double radius2 = std::max(1.0, static_cast<double>(std::min(h, w)) / 4.0);
  for (std::size_t n = 0; n < samples; ++n) {
    const auto k = static_cast<std::size_t>(labels[n]);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double di = static_cast<double>(i) - static_cast<double>(spots[k].first);
          const double dj = static_cast<double>(j) - static_cast<double>(spots[k].second);
          const double bump = std::exp(-(di * di + dj * dj) / (2 * radius2));
          d.images(n, ch, i, j) = means[k][ch] * (1.0 + bump) + normal(rng);
        }
  }
  return d;
}

/// Mirrors one sample left to right, in place.
inline void flip_horizontal(Tensor4<double>& x, std::size_t n) {
  const auto& s = x.shape();
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t i = 0; i < s.h; ++i) {
      auto row = x.plane(n, c).subspan(i * s.w, s.w);
      std::reverse(row.begin(), row.end());
    }
}

}  // namespace leanconv
