#pragma once

// Runtime sweeps of the fully coupled convolution against the depth-wise
// direct, depth-wise FFT and block-circulant FFT paths, with CSV and SVG
// output.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "leanconv/conv_ops.hpp"
#include "leanconv/error.hpp"
#include "leanconv/parallel.hpp"

namespace leanconv {

enum class BenchAxis { image_size, kernel_size, channels };

inline std::string_view to_string(BenchAxis a) {
  switch (a) {
    case BenchAxis::image_size: return "image_size";
    case BenchAxis::kernel_size: return "kernel_size";
    case BenchAxis::channels: return "channels";
  }
  return "?";
}

inline BenchAxis parse_bench_axis(std::string_view s) {
  for (auto a : {BenchAxis::image_size, BenchAxis::kernel_size, BenchAxis::channels})
    if (s == to_string(a)) return a;
  throw Error("unknown bench axis '" + std::string(s) +
              "' (expected image_size, kernel_size or channels)");
}

enum class BenchOp { fully_coupled_direct, depthwise_direct, depthwise_fft, circulant_fft };

inline constexpr BenchOp kAllBenchOps[] = {BenchOp::fully_coupled_direct,
                                           BenchOp::depthwise_direct, BenchOp::depthwise_fft,
                                           BenchOp::circulant_fft};

inline std::string_view to_string(BenchOp op) {
  switch (op) {
    case BenchOp::fully_coupled_direct: return "fully_coupled_direct";
    case BenchOp::depthwise_direct: return "depthwise_direct";
    case BenchOp::depthwise_fft: return "depthwise_fft";
    case BenchOp::circulant_fft: return "circulant_fft";
  }
  return "?";
}

inline BenchOp parse_bench_op(std::string_view s) {
  for (auto op : kAllBenchOps)
    if (s == to_string(op)) return op;
  throw Error("unknown bench op '" + std::string(s) + "'");
}

struct BenchConfig {
  BenchAxis axis = BenchAxis::channels;
  std::vector<std::size_t> grid{64, 128, 256, 512};
  std::size_t reps = 10;
  std::size_t warmup = 3;
  // values held fixed on the axes not being swept
  std::size_t batch = 64;
  std::size_t image_size = 64;
  std::size_t channels = 256;
  std::size_t kernel_size = 3;
  std::uint64_t seed = 0;
  std::vector<BenchOp> ops{std::begin(kAllBenchOps), std::end(kAllBenchOps)};

  void validate() const {
    if (grid.empty()) throw Error("bench: grid is empty");
    for (auto v : grid)
      if (v < 1) throw Error("bench: grid values must be >= 1");
    if (reps < 3) throw Error("bench: reps must be >= 3");
    if (batch < 1 || image_size < 1 || channels < 1 || kernel_size < 1)
      throw Error("bench: batch, image size, channels and kernel size must be >= 1");
    if (axis == BenchAxis::kernel_size)
      for (auto v : grid)
        if (v % 2 == 0) throw Error("bench: kernel sizes must be odd");
    if (kernel_size % 2 == 0) throw Error("bench: kernel size must be odd");
    if (ops.empty()) throw Error("bench: no ops selected");
  }
};

struct BenchResult {
  BenchAxis axis = BenchAxis::channels;
  std::size_t value = 0;
  BenchOp op = BenchOp::fully_coupled_direct;
  std::size_t n = 0;  // image side
  std::size_t c = 0;
  std::size_t m = 0;
  std::size_t batch = 0;
  std::size_t reps = 0;
  std::size_t threads = 0;
  double median_s = 0;
  double min_s = 0;
  // t(fully coupled) / t(op) on medians; NaN when the baseline was not run
  double ratio = std::numeric_limits<double>::quiet_NaN();
};

struct Timing {
  double median_s = 0;
  double min_s = 0;
};

/// Median and minimum wall time of fn over `reps` calls after `warmup`
/// untimed calls.
inline Timing time_calls(const std::function<void()>& fn, std::size_t reps, std::size_t warmup) {
  for (std::size_t k = 0; k < warmup; ++k) fn();
  std::vector<double> t(reps);
  for (auto& v : t) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    v = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  std::ranges::sort(t);
  const std::size_t mid = t.size() / 2;
  const double median = t.size() % 2 ? t[mid] : 0.5 * (t[mid - 1] + t[mid]);
  return {median, t.front()};
}

/// Median and minimum wall time of each fn, timed round-robin: every rep
/// calls each fn once, so slow spells on a shared machine affect all of
/// them alike.
inline std::vector<Timing> time_interleaved(const std::vector<std::function<void()>>& fns,
                                            std::size_t reps, std::size_t warmup) {
  for (std::size_t k = 0; k < warmup; ++k)
    for (const auto& fn : fns) fn();
  std::vector<std::vector<double>> t(fns.size(), std::vector<double>(reps));
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < fns.size(); ++i) {
      const auto start = std::chrono::steady_clock::now();
      fns[i]();
      t[i][r] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  std::vector<Timing> out;
  for (auto& v : t) {
    std::ranges::sort(v);
    const std::size_t mid = v.size() / 2;
    out.push_back({v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]), v.front()});
  }
  return out;
}

/// Sizes of one benchmark cell.
struct BenchCell {
  BenchOp op = BenchOp::depthwise_fft;
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t m = 0;
};

/// A callable that applies the cell's operator to a random batch. The
/// callable owns its input and weights.
inline std::function<void()> make_bench_call(const BenchCell& cell, std::size_t batch,
                                             std::uint64_t seed) {
  struct State {
    Tensor4<double> x;
    StencilGrid<double> grid;
    StencilBank<double> bank;
    volatile double sink = 0;
    void consume(const Tensor4<double>& y) { sink = sink + y.data()[y.size() / 2]; }
  };
  auto st = std::make_shared<State>();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  st->x = Tensor4<double>(Shape4{batch, cell.c, cell.n, cell.n});
  for (auto& v : st->x.data()) v = u(rng);
  switch (cell.op) {
    case BenchOp::fully_coupled_direct:
      st->grid = StencilGrid<double>(cell.m, cell.c, cell.c);
      for (auto& v : st->grid.weights()) v = u(rng);
      return [st] { st->consume(apply_fully_coupled(st->grid, st->x)); };
    default:
      st->bank = StencilBank<double>(cell.m, cell.c);
      for (auto& v : st->bank.weights()) v = u(rng);
  }
  switch (cell.op) {
    case BenchOp::depthwise_direct:
      return [st] { st->consume(apply_depthwise(st->bank, st->x, ConvPath::direct)); };
    case BenchOp::depthwise_fft:
      return [st] { st->consume(apply_depthwise(st->bank, st->x, ConvPath::fft)); };
    default: return [st] { st->consume(apply_circulant(st->bank, st->x)); };
  }
}

/// Times several cells round-robin on batches of the same size.
inline std::vector<BenchResult> bench_cells(const std::vector<BenchCell>& cells, std::size_t batch,
                                            std::size_t reps, std::size_t warmup,
                                            std::uint64_t seed) {
  std::vector<std::function<void()>> fns;
  for (const auto& cell : cells) fns.push_back(make_bench_call(cell, batch, seed));
  const auto times = time_interleaved(fns, reps, warmup);
  std::vector<BenchResult> out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    BenchResult r;
    r.op = cells[i].op;
    r.n = cells[i].n;
    r.c = cells[i].c;
    r.m = cells[i].m;
    r.batch = batch;
    r.reps = reps;
    r.threads = thread_count();
    r.median_s = times[i].median_s;
    r.min_s = times[i].min_s;
    out.push_back(r);
  }
  return out;
}

/// One timed cell of the sweep.
inline BenchResult bench_cell(BenchOp op, std::size_t batch, std::size_t n, std::size_t c,
                              std::size_t m, std::size_t reps, std::size_t warmup,
                              std::uint64_t seed) {
  return bench_cells({{op, n, c, m}}, batch, reps, warmup, seed).front();
}

/// Sweeps cfg.axis over cfg.grid, holding the other sizes fixed, and fills
/// in each op's ratio against the fully coupled time at the same point.
inline std::vector<BenchResult> run_bench(
    const BenchConfig& cfg, const std::function<void(const BenchResult&)>& on_result = {}) {
  cfg.validate();
  std::vector<BenchResult> rows;
  for (const auto value : cfg.grid) {
    std::size_t n = cfg.image_size, c = cfg.channels, m = cfg.kernel_size;
    switch (cfg.axis) {
      case BenchAxis::image_size: n = value; break;
      case BenchAxis::kernel_size: m = value; break;
      case BenchAxis::channels: c = value; break;
    }
    if (m > n) throw Error("bench: kernel size exceeds image size");
    const std::size_t first = rows.size();
    std::vector<BenchCell> cells;
    for (const auto op : cfg.ops) cells.push_back({op, n, c, m});
    for (auto r : bench_cells(cells, cfg.batch, cfg.reps, cfg.warmup, cfg.seed)) {
      r.axis = cfg.axis;
      r.value = value;
      rows.push_back(r);
    }
    double baseline = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = first; k < rows.size(); ++k)
      if (rows[k].op == BenchOp::fully_coupled_direct) baseline = rows[k].median_s;
    for (std::size_t k = first; k < rows.size(); ++k) {
      rows[k].ratio = baseline / rows[k].median_s;
      if (on_result) on_result(rows[k]);
    }
  }
  return rows;
}

inline constexpr const char* kBenchCsvHeader =
    "axis,value,op,image_size,channels,kernel_size,batch,reps,threads,median_s,min_s,ratio";

inline void write_bench_csv(std::ostream& os, const std::vector<BenchResult>& rows) {
  os << kBenchCsvHeader << '\n';
  os.precision(9);
  for (const auto& r : rows)
    os << to_string(r.axis) << ',' << r.value << ',' << to_string(r.op) << ',' << r.n << ','
       << r.c << ',' << r.m << ',' << r.batch << ',' << r.reps << ',' << r.threads << ','
       << r.median_s << ',' << r.min_s << ',' << r.ratio << '\n';
}

inline void write_bench_csv(const std::filesystem::path& path,
                            const std::vector<BenchResult>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_bench_csv(os, rows);
}

inline std::vector<BenchResult> read_bench_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kBenchCsvHeader)
    throw Error("bench CSV: unexpected header '" + line + "'");
  std::vector<BenchResult> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 12) throw Error("bench CSV: expected 12 fields in '" + line + "'");
    BenchResult r;
    r.axis = parse_bench_axis(f[0]);
    r.value = std::stoul(f[1]);
    r.op = parse_bench_op(f[2]);
    r.n = std::stoul(f[3]);
    r.c = std::stoul(f[4]);
    r.m = std::stoul(f[5]);
    r.batch = std::stoul(f[6]);
    r.reps = std::stoul(f[7]);
    r.threads = std::stoul(f[8]);
    r.median_s = std::stod(f[9]);
    r.min_s = std::stod(f[10]);
    r.ratio = f[11] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[11]);
    rows.push_back(r);
  }
  return rows;
}

/// Line plot of ratio against the swept value, one line per op other than
/// the baseline. Log scale on the ratio axis.
inline std::string bench_svg(const std::vector<BenchResult>& rows) {
  constexpr double W = 640, H = 420, L = 70, R = 190, T = 40, B = 60;
  std::map<BenchOp, std::vector<std::pair<double, double>>> lines;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& r : rows) {
    if (r.op == BenchOp::fully_coupled_direct || !(r.ratio > 0)) continue;
    const double y = std::log10(r.ratio);
    lines[r.op].emplace_back(static_cast<double>(r.value), y);
    xmin = std::min(xmin, static_cast<double>(r.value));
    xmax = std::max(xmax, static_cast<double>(r.value));
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (lines.empty()) {
    os << "<text x=\"" << L << "\" y=\"" << T + 20 << "\">no ratios to plot</text>\n</svg>\n";
    return os.str();
  }
  ymin = std::floor(std::min(ymin, 0.0));
  ymax = std::ceil(std::max(ymax, ymin + 1));
  if (xmax == xmin) xmax = xmin + 1;
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return T + (ymax - y) / (ymax - ymin) * ph; };

  os << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph
     << "\" stroke=\"black\"/>\n";
  for (double y = ymin; y <= ymax; y += 1)
    os << "<text x=\"" << L - 8 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">1e"
       << static_cast<int>(y) << "</text>\n"
       << "<line x1=\"" << L << "\" y1=\"" << py(y) << "\" x2=\"" << L + pw << "\" y2=\"" << py(y)
       << "\" stroke=\"#ddd\"/>\n";
  std::vector<double> ticks;
  for (const auto& [op, pts] : lines)
    for (const auto& p : pts) ticks.push_back(p.first);
  std::ranges::sort(ticks);
  ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
  for (double x : ticks)
    os << "<text x=\"" << px(x) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">" << x
       << "</text>\n";
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">"
     << to_string(rows.front().axis) << "</text>\n"
     << "<text x=\"18\" y=\"" << T + ph / 2 << "\" transform=\"rotate(-90 18 " << T + ph / 2
     << ")\" text-anchor=\"middle\">t(fully coupled) / t(op)</text>\n";

  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::size_t k = 0;
  for (auto& [op, pts] : lines) {
    std::ranges::sort(pts);
    const char* color = colors[k % 4];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) os << px(x) << ',' << py(y) << ' ';
    os << "\"/>\n";
    for (const auto& [x, y] : pts)
      os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
    const double ly = T + 10 + 20 * static_cast<double>(k);
    os << "<line x1=\"" << L + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 35
       << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << L + pw + 40 << "\" y=\"" << ly + 4 << "\">" << to_string(op)
       << "</text>\n";
    ++k;
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_bench_svg(const std::filesystem::path& path,
                            const std::vector<BenchResult>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << bench_svg(rows);
}

}  // namespace leanconv
