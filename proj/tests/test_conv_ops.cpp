#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "leanconv/conv_ops.hpp"
#include "leanconv/serialize.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace lc = leanconv;
namespace oracle = leanconv::oracle;
using lc::ConvOperator;
using lc::Shape4;
using lc::Tensor4;
using View = std::optional<lc::StencilView<double>>;

namespace {

Eigen::MatrixXd to_eigen(const lc::DenseMatrix<double>& d) {
  Eigen::MatrixXd a(d.rows, d.cols);
  for (std::size_t i = 0; i < d.rows; ++i)
    for (std::size_t j = 0; j < d.cols; ++j) a(i, j) = d(i, j);
  return a;
}

/// Oracle matrix built from unit-vector correlation, independent of the
/// library's assembly.
Eigen::MatrixXd oracle_dense(const ConvOperator<double>& op, std::size_t h,
                             std::size_t w) {
  const std::size_t ci = op.in_channels(), co = op.out_channels();
  switch (op.kind()) {
    case lc::OpKind::fully_coupled:
      return oracle::dense_from_blocks(co, ci, h, w, [&](auto r, auto q) {
        return View(op.grid().stencil(r, q));
      });
    case lc::OpKind::depthwise:
      return oracle::dense_from_blocks(co, ci, h, w, [&](auto r, auto q) {
        return r == q ? View(op.bank().stencil(r)) : View();
      });
    case lc::OpKind::circulant:
      return oracle::dense_from_blocks(co, ci, h, w, [&](auto r, auto q) {
        return View(op.bank().stencil((q + ci - r) % ci));
      });
    default: {
      const std::size_t hw = h * w;
      Eigen::MatrixXd a = Eigen::MatrixXd::Zero(co * hw, ci * hw);
      for (std::size_t r = 0; r < co; ++r)
        for (std::size_t q = 0; q < ci; ++q)
          for (std::size_t p = 0; p < hw; ++p) a(r * hw + p, q * hw + p) = op.matrix()(r, q);
      if (op.kind() == lc::OpKind::linear_mix)
        a += oracle::dense_from_blocks(co, ci, h, w, [&](auto r, auto q) {
          return r == q ? View(op.bank().stencil(r)) : View();
        });
      return a;
    }
  }
}

ConvOperator<double> random_operator(lc::testing::Rng& rng, lc::OpKind kind,
                                     std::size_t m, std::size_t c_in,
                                     std::size_t c_out,
                                     lc::ConvPath path = lc::ConvPath::fft) {
  using namespace lc::testing;
  switch (kind) {
    case lc::OpKind::fully_coupled:
      return ConvOperator<double>::fully_coupled(random_grid(rng, m, c_out, c_in));
    case lc::OpKind::depthwise:
      return ConvOperator<double>::depthwise(random_bank(rng, m, c_in), path);
    case lc::OpKind::one_by_one:
      return ConvOperator<double>::one_by_one(random_matrix(rng, c_out, c_in));
    case lc::OpKind::linear_mix:
      return ConvOperator<double>::linear_mix(random_bank(rng, m, c_in),
                                              random_matrix(rng, c_in, c_in), path);
    default:
      return ConvOperator<double>::circulant(random_bank(rng, m, c_in));
  }
}

const lc::OpKind kLinearKinds[] = {lc::OpKind::fully_coupled, lc::OpKind::depthwise,
                                   lc::OpKind::one_by_one, lc::OpKind::linear_mix,
                                   lc::OpKind::circulant};

bool is_square_kind(lc::OpKind k) {
  return k != lc::OpKind::fully_coupled && k != lc::OpKind::one_by_one;
}

}  // namespace

TEST(FullyCoupled, IdentityGridAndChannelSum) {
  lc::testing::Rng rng(30);
  auto x = lc::testing::random_tensor(rng, Shape4{2, 3, 5, 4});
  EXPECT_LT(lc::relative_error(
                lc::apply_fully_coupled(lc::StencilGrid<double>::identity(3, 3, 3), x), x),
            1e-15);

  lc::StencilGrid<double> sum(3, 1, 2);
  sum.at(0, 0, 1, 1) = sum.at(0, 1, 1, 1) = 1.0;
  auto x2 = lc::testing::random_tensor(rng, Shape4{1, 2, 4, 4});
  const auto y = lc::apply_fully_coupled(sum, x2);
  ASSERT_EQ(y.channels(), 1u);
  for (std::size_t k = 0; k < 16; ++k)
    EXPECT_NEAR(y[k], x2(0, 0, k / 4, k % 4) + x2(0, 1, k / 4, k % 4), 1e-15);
}

TEST(FullyCoupled, RandomGridMatchesDenseOracle) {
  lc::testing::Rng rng(31);
  auto op = random_operator(rng, lc::OpKind::fully_coupled, 3, 2, 2);
  auto x = lc::testing::random_tensor(rng, Shape4{1, 2, 5, 5});
  const auto a = oracle_dense(op, 5, 5);
  EXPECT_EQ(a.rows(), 50);
  EXPECT_LT(lc::relative_error(op.apply(x), oracle::apply_dense(a, x, 2)), 1e-9);
}

TEST(FullyCoupled, ChannelMismatchThrows) {
  lc::StencilGrid<double> g(3, 2, 3);
  EXPECT_THROW(lc::apply_fully_coupled(g, Tensor4<double>(Shape4{1, 2, 4, 4})),
               lc::ShapeError);
}

TEST(Depthwise, DeltasAndPerChannelScaling) {
  lc::testing::Rng rng(32);
  auto x = lc::testing::random_tensor(rng, Shape4{2, 2, 4, 6});
  for (auto path : {lc::ConvPath::fft, lc::ConvPath::direct}) {
    EXPECT_LT(lc::relative_error(
                  lc::apply_depthwise(lc::StencilBank<double>::deltas(3, 2), x, path), x),
              1e-14);
    auto b = lc::StencilBank<double>::deltas(3, 2);
    b.at(0, 1, 1) = 2.0;
    const auto y = lc::apply_depthwise(b, x, path);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t k = 0; k < 24; ++k) {
        EXPECT_NEAR(y.plane(n, 0)[k], 2 * x.plane(n, 0)[k], 1e-14);
        EXPECT_NEAR(y.plane(n, 1)[k], x.plane(n, 1)[k], 1e-14);
      }
  }
}

TEST(Depthwise, DirectAndFftPathsAgreeWithOracle) {
  lc::testing::Rng rng(33);
  auto bank = lc::testing::random_bank(rng, 3, 3);
  auto x = lc::testing::random_tensor(rng, Shape4{2, 3, 5, 6});
  const auto a = oracle_dense(ConvOperator<double>::depthwise(bank), 5, 6);
  const auto ref = oracle::apply_dense(a, x, 3);
  EXPECT_LT(lc::relative_error(lc::apply_depthwise(bank, x, lc::ConvPath::fft), ref), 1e-9);
  EXPECT_LT(lc::relative_error(lc::apply_depthwise(bank, x, lc::ConvPath::direct), ref), 1e-12);
  EXPECT_LT(lc::relative_error(lc::apply_depthwise_gram(bank, x),
                               oracle::apply_dense(a.transpose() * a, x, 3)),
            1e-9);
}

TEST(OneByOne, IdentitySumAndPixelLoop) {
  lc::testing::Rng rng(34);
  auto x = lc::testing::random_tensor(rng, Shape4{2, 3, 4, 4});
  EXPECT_EQ(lc::apply_one_by_one(lc::ChannelMatrix<double>::identity(3), x), x);

  lc::ChannelMatrix<double> ones(1, 2, {1.0, 1.0});
  auto x2 = lc::testing::random_tensor(rng, Shape4{1, 2, 3, 3});
  const auto s = lc::apply_one_by_one(ones, x2);
  for (std::size_t k = 0; k < 9; ++k)
    EXPECT_DOUBLE_EQ(s[k], x2.plane(0, 0)[k] + x2.plane(0, 1)[k]);

  const auto mtx = lc::testing::random_matrix(rng, 3, 3);
  const auto y = lc::apply_one_by_one(mtx, x);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t r = 0; r < 3; ++r) {
          double acc = 0;
          for (std::size_t q = 0; q < 3; ++q) acc += mtx(r, q) * x(n, q, i, j);
          EXPECT_NEAR(y(n, r, i, j), acc, 1e-12);
        }
}

TEST(OneByOne, TransposeUsesTransposedMatrix) {
  lc::testing::Rng rng(35);
  const auto mtx = lc::testing::random_matrix(rng, 2, 3);
  auto y = lc::testing::random_tensor(rng, Shape4{1, 2, 3, 3});
  EXPECT_EQ(lc::apply_one_by_one_transpose(mtx, y),
            lc::apply_one_by_one(mtx.transposed(), y));
}

TEST(LinearMix, IdentityConfigurations) {
  lc::testing::Rng rng(36);
  auto x = lc::testing::random_tensor(rng, Shape4{1, 3, 4, 4});
  EXPECT_LT(lc::relative_error(lc::apply_linear_mix(lc::StencilBank<double>::deltas(3, 3),
                                                    lc::ChannelMatrix<double>(3, 3), x),
                               x),
            1e-14);
  EXPECT_LT(lc::relative_error(lc::apply_linear_mix(lc::StencilBank<double>(3, 3),
                                                    lc::ChannelMatrix<double>::identity(3), x),
                               x),
            1e-14);
  EXPECT_THROW(lc::apply_linear_mix(lc::StencilBank<double>(3, 3),
                                    lc::ChannelMatrix<double>(3, 2), x),
               lc::ShapeError);
}

TEST(Transpose, SymmetricStencilIsSelfAdjoint) {
  lc::StencilBank<double> lap(3, 2);
  for (std::size_t c = 0; c < 2; ++c) {
    lap.at(c, 0, 1) = lap.at(c, 1, 0) = lap.at(c, 1, 2) = lap.at(c, 2, 1) = 1.0;
    lap.at(c, 1, 1) = -4.0;
  }
  lc::testing::Rng rng(37);
  auto x = lc::testing::random_tensor(rng, Shape4{1, 2, 5, 5});
  EXPECT_LT(lc::relative_error(lc::apply_depthwise_transpose(lap, x),
                               lc::apply_depthwise(lap, x)),
            1e-13);
}

TEST(Operators, FastPathsMatchDenseOracleAndAssembly) {
  lc::testing::Rng rng(38);
  for (auto kind : kLinearKinds) {
    for (int trial = 0; trial < 6; ++trial) {
      const std::size_t m = trial % 2 ? 3 : 1 + 2 * (rng() % 2);
      const std::size_t h = 3 + rng() % 4, w = 3 + rng() % 4;
      const std::size_t ci = 1 + rng() % 4;
      const std::size_t co = is_square_kind(kind) ? ci : 1 + rng() % 4;
      auto op = random_operator(rng, kind, m, ci, co,
                                trial % 2 ? lc::ConvPath::direct : lc::ConvPath::fft);
      const auto a = oracle_dense(op, h, w);
      const auto lib = to_eigen(op.assemble(h, w));
      EXPECT_LT((lib - a).norm(), 1e-14 * std::max(1.0, a.norm())) << lc::to_string(kind);
      auto x = lc::testing::random_tensor(rng, Shape4{2, ci, h, w});
      auto y = lc::testing::random_tensor(rng, Shape4{2, co, h, w});
      EXPECT_LT(lc::relative_error(op.apply(x), oracle::apply_dense(a, x, co)), 1e-9)
          << lc::to_string(kind);
      EXPECT_LT(lc::relative_error(op.apply_transpose(y), oracle::apply_dense(a.transpose(), y, ci)),
                1e-9)
          << lc::to_string(kind);
    }
  }
}

TEST(Operators, LinearityAndAdjointIdentity) {
  lc::testing::Rng rng(39);
  for (auto kind : kLinearKinds) {
    for (int trial = 0; trial < 5; ++trial) {
      const std::size_t ci = 1 + rng() % 4;
      const std::size_t co = is_square_kind(kind) ? ci : 1 + rng() % 4;
      auto op = random_operator(rng, kind, 3, ci, co);
      const Shape4 sx{2, ci, 6, 5}, sy{2, co, 6, 5};
      auto x = lc::testing::random_tensor(rng, sx);
      auto x2 = lc::testing::random_tensor(rng, sx);
      auto z = lc::testing::random_tensor(rng, sy);
      const double alpha = lc::testing::uniform(rng), beta = lc::testing::uniform(rng);
      auto combo = alpha * x + beta * x2;
      EXPECT_LT(lc::relative_error(op.apply(combo),
                                   alpha * op.apply(x) + beta * op.apply(x2)),
                1e-12);
      const double lhs = lc::dot(op.apply(x), z);
      const double rhs = lc::dot(x, op.apply_transpose(z));
      EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs))) << lc::to_string(kind);
    }
  }
}

TEST(Operators, DepthwiseGramIsSymmetricPsd) {
  lc::testing::Rng rng(40);
  for (int trial = 0; trial < 5; ++trial) {
    auto bank = lc::testing::random_bank(rng, 3, 2);
    const auto k = to_eigen(lc::assemble_depthwise(bank, 4, 5));
    const Eigen::MatrixXd ktk = k.transpose() * k;
    EXPECT_LT((ktk - ktk.transpose()).norm(), 1e-10);
    auto x = lc::testing::random_tensor(rng, Shape4{1, 2, 4, 5});
    EXPECT_GE(lc::dot(x, lc::apply_depthwise_gram(bank, x)), 0.0);
  }
}

TEST(Assembly, StructuralPatterns) {
  lc::testing::Rng rng(41);
  const std::size_t h = 3, w = 4, hw = h * w;
  const auto id = to_eigen(lc::assemble_depthwise(lc::StencilBank<double>::deltas(3, 2), h, w));
  EXPECT_TRUE(id.isIdentity(0.0));
  EXPECT_TRUE(to_eigen(lc::assemble_fully_coupled(lc::StencilGrid<double>::identity(3, 2, 2), h, w))
                  .isIdentity(0.0));

  const auto dw = to_eigen(lc::assemble_depthwise(lc::testing::random_bank(rng, 3, 3), h, w));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t q = 0; q < 3; ++q)
      if (r != q) EXPECT_EQ(dw.block(r * hw, q * hw, hw, hw).norm(), 0.0);

  const std::size_t c = 4;
  const auto circ = to_eigen(lc::assemble_circulant(lc::testing::random_bank(rng, 3, c), h, w));
  for (std::size_t r = 0; r < c; ++r)
    for (std::size_t q = 0; q < c; ++q)
      EXPECT_EQ(circ.block(r * hw, q * hw, hw, hw),
                circ.block(0, ((q + c - r) % c) * hw, hw, hw));
}

TEST(Assembly, SizeGuard) {
  lc::StencilBank<double> big(3, 64);
  EXPECT_THROW(lc::assemble_depthwise(big, 10, 10), lc::Error);
}

TEST(ParamCount, FormulaValues) {
  EXPECT_EQ(lc::param_count(lc::OpKind::fully_coupled, 3, 4, 4), 144u);
  EXPECT_EQ(lc::param_count(lc::OpKind::rd_explicit, 3, 4, 4), 52u);
  EXPECT_EQ(lc::param_count(lc::OpKind::one_by_one, 1, 1, 1), 1u);
  EXPECT_EQ(lc::param_count(lc::OpKind::fully_coupled, 3, 64, 64), 36864u);
  EXPECT_EQ(lc::param_count(lc::OpKind::rd_implicit, 3, 64, 64), 4672u);
}

TEST(ParamCount, MatchesStoredWeights) {
  lc::testing::Rng rng(42);
  for (std::size_t m : {1u, 3u, 5u})
    for (std::size_t c : {1u, 2u, 7u})
      for (auto kind : kLinearKinds) {
        const std::size_t co = is_square_kind(kind) ? c : c + 1;
        auto op = random_operator(rng, kind, m, c, co);
        EXPECT_EQ(op.weight_count(), lc::param_count(kind, m, c, co));
        EXPECT_EQ(op.flat_weights().size(), op.weight_count());
      }
}

TEST(ParameterGradients, BilinearFormDerivativesAreExact) {
  // <dy, K(w) x> is linear in w, so its gradient entry k equals the form
  // evaluated at the k-th unit weight vector.
  lc::testing::Rng rng(43);
  const std::size_t c = 3, h = 4, w = 5;
  auto x = lc::testing::random_tensor(rng, Shape4{2, c, h, w});
  auto dy = lc::testing::random_tensor(rng, Shape4{2, c, h, w});

  auto check = [&](auto make_op, auto accumulate, std::size_t count) {
    auto grad = accumulate();
    for (std::size_t k = 0; k < count; ++k) {
      std::vector<double> unit(count, 0.0);
      unit[k] = 1.0;
      const double expected = lc::dot(dy, make_op(unit).apply(x));
      EXPECT_NEAR(grad[k], expected, 1e-10 * std::max(1.0, std::abs(expected)));
    }
  };

  check([&](const std::vector<double>& u) {
          return ConvOperator<double>::depthwise(lc::StencilBank<double>(3, c, u));
        },
        [&] {
          lc::StencilBank<double> g(3, c);
          lc::depthwise_grad_accumulate(dy, x, g);
          return std::vector<double>(g.weights().begin(), g.weights().end());
        },
        9 * c);
  check([&](const std::vector<double>& u) {
          return ConvOperator<double>::circulant(lc::StencilBank<double>(3, c, u));
        },
        [&] {
          lc::StencilBank<double> g(3, c);
          lc::circulant_bank_grad_accumulate(dy, x, g);
          return std::vector<double>(g.weights().begin(), g.weights().end());
        },
        9 * c);
  check([&](const std::vector<double>& u) {
          lc::StencilGrid<double> g(3, c, c);
          std::copy(u.begin(), u.end(), g.weights().begin());
          return ConvOperator<double>::fully_coupled(g);
        },
        [&] {
          lc::StencilGrid<double> g(3, c, c);
          lc::fully_coupled_grad_accumulate(dy, x, g);
          return std::vector<double>(g.weights().begin(), g.weights().end());
        },
        9 * c * c);
  check([&](const std::vector<double>& u) {
          return ConvOperator<double>::one_by_one(lc::ChannelMatrix<double>(c, c, u));
        },
        [&] {
          lc::ChannelMatrix<double> g(c, c);
          lc::one_by_one_grad_accumulate(dy, x, g);
          return std::vector<double>(g.weights().begin(), g.weights().end());
        },
        c * c);
}

TEST(Serialization, OperatorRoundTripAndLayout) {
  lc::testing::Rng rng(44);
  const auto dir = std::filesystem::temp_directory_path() / "leanconv_ops_test";
  std::filesystem::create_directories(dir);
  lc::ChannelMatrix<double> mtx(2, 2);
  mtx(0, 0) = 1;
  mtx(1, 0) = 2;
  mtx(0, 1) = 3;
  mtx(1, 1) = 4;
  auto op = ConvOperator<double>::linear_mix(lc::testing::random_bank(rng, 3, 2), mtx);
  const auto stem = (dir / "lm").string();
  lc::save_operator(stem, op);
  EXPECT_EQ(std::filesystem::file_size(stem + ".bin"), 8u * (18 + 4));

  std::ifstream is(stem + ".bin", std::ios::binary);
  is.seekg(8 * 18);
  const auto tail = lc::read_f64_stream<double>(is, 4);
  EXPECT_EQ(tail, (std::vector<double>{1, 2, 3, 4}));  // column-major

  const auto back = lc::load_operator(stem);
  EXPECT_EQ(back.kind(), lc::OpKind::linear_mix);
  EXPECT_EQ(back.flat_weights(), op.flat_weights());
  std::filesystem::remove_all(dir);
}
