#include <gtest/gtest.h>

#include "test_util.hpp"

namespace vspcn {
namespace {

TEST(RelativeError, UsesLargerMagnitudeAndFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-10), 1e-10 / 1e-8);
}

TEST(FdGradient, QuadraticMatchesAnalytic) {
  auto x = Tensor<double>::row({0.3, -1.2, 2.0});
  const auto g = fd_gradient<double>(
      [&] {
        double s = 0;
        for (double v : x.values()) s += v * v * v;
        return Tensor<double>::scalar(s);
      },
      {&x}, 1e-5);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[0][i], 3 * x[i] * x[i], 1e-8);
}

TEST(FdGradient, RestoresLeaves) {
  auto x = Tensor<double>::row({0.1, 0.2});
  const auto before = x;
  fd_gradient<double>([&] { return Tensor<double>::scalar(x[0] * x[1]); }, {&x}, 1e-3);
  EXPECT_EQ(x, before);
}

TEST(FdGradient, SeveralLeaves) {
  auto a = Tensor<double>::row({1.5});
  auto b = Tensor<double>::row({-0.5, 4.0});
  const auto g = fd_gradient<double>([&] { return Tensor<double>::scalar(a[0] * (b[0] + 2 * b[1])); }, {&a, &b}, 1e-5);
  EXPECT_NEAR(g[0][0], b[0] + 2 * b[1], 1e-9);
  EXPECT_NEAR(g[1][0], a[0], 1e-9);
  EXPECT_NEAR(g[1][1], 2 * a[0], 1e-9);
}

TEST(FdGradient, RejectsBadArguments) {
  auto x = Tensor<double>::row({1.0});
  EXPECT_THROW(fd_gradient<double>([&] { return x; }, {&x}, 0.0), ContractError);
  EXPECT_THROW(fd_gradient<double>([&] { return Tensor<double>::row({1.0, 2.0}); }, {&x}, 1e-5), ContractError);
}

TEST(FdGradient, AgreesWithTapeOnComposite) {
  std::mt19937_64 rng(1);
  auto w = testing::random_tensor({4, 3}, rng);
  auto x = testing::random_tensor({2, 4}, rng);
  auto loss = [&](Tape<double>& t, bool grad) {
    auto vw = t.param(w, grad);
    auto vx = t.param(x, grad);
    return ad::sum(ad::log_softmax_rows(ad::gelu(ad::matmul(vx, vw))));
  };
  Tape<double> tape;
  auto l = loss(tape, true);
  tape.backward(l);
  const Var<double> vw(&tape, 0);
  const auto fd = fd_gradient<double>(
      [&] {
        Tape<double> t;
        return loss(t, false).value();
      },
      {&w}, 1e-5);
  EXPECT_LT(max_relative_error(tape.grad(vw), fd[0]), 1e-6);
}

}  // namespace
}  // namespace vspcn
