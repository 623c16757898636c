#include <gtest/gtest.h>

#include <functional>

#include "test_util.hpp"

namespace vspcn {
namespace {

using testing::random_tensor;
using Fn = std::function<Var<double>(const std::vector<Var<double>>&)>;

// Reverse-mode vs. central differences for one primitive. The primitive's
// output is contracted with a fixed random weight so every output entry
// contributes to the scalar.
void expect_matches_fd(const Fn& op, std::vector<Tensor<double>> inputs, double tol = 1e-7) {
  std::mt19937_64 rng(99);
  Tensor<double> weight;
  auto build = [&](Tape<double>& tape, bool grad) {
    std::vector<Var<double>> vars;
    for (auto& t : inputs) vars.push_back(tape.param(t, grad));
    Var<double> out = op(vars);
    if (weight.empty()) weight = random_tensor(out.shape(), rng);
    return std::pair{vars, ad::sum(ad::mul(out, tape.constant(weight)))};
  };
  Tape<double> tape;
  auto [vars, loss] = build(tape, true);
  tape.backward(loss);

  std::vector<Tensor<double>*> leaves;
  for (auto& t : inputs) leaves.push_back(&t);
  const auto fd = fd_gradient<double>(
      [&] {
        Tape<double> t;
        return build(t, false).second.value();
      },
      leaves, 1e-6);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& g = tape.grad(vars[i]);
    ASSERT_FALSE(g.empty()) << "input " << i << " received no gradient";
    for (std::size_t k = 0; k < g.size(); ++k) {
      EXPECT_NEAR(g[k], fd[i][k], tol * std::max(1.0, std::abs(fd[i][k]))) << "input " << i << " entry " << k;
    }
  }
}

class TapeOps : public ::testing::Test {
 protected:
  std::mt19937_64 rng{17};
  Tensor<double> r(Shape s, double scale = 1.0) { return random_tensor(std::move(s), rng, scale); }
};

TEST_F(TapeOps, Matmul) {
  expect_matches_fd([](auto& v) { return ad::matmul(v[0], v[1]); }, {r({3, 4}), r({4, 2})});
  expect_matches_fd([](auto& v) { return ad::matmul_nt(v[0], v[1]); }, {r({3, 4}), r({5, 4})});
}

TEST_F(TapeOps, Elementwise) {
  expect_matches_fd([](auto& v) { return ad::add(v[0], v[1]); }, {r({2, 3}), r({2, 3})});
  expect_matches_fd([](auto& v) { return ad::sub(v[0], v[1]); }, {r({2, 3}), r({2, 3})});
  expect_matches_fd([](auto& v) { return ad::mul(v[0], v[1]); }, {r({2, 3}), r({2, 3})});
  auto denom = r({2, 3});
  for (auto& x : denom.values()) x = 1.5 + std::abs(x);
  expect_matches_fd([](auto& v) { return ad::div(v[0], v[1]); }, {r({2, 3}), denom});
  expect_matches_fd([](auto& v) { return ad::add_row(v[0], v[1]); }, {r({4, 3}), r({1, 3})});
  expect_matches_fd([](auto& v) { return ad::scale(v[0], -2.5); }, {r({2, 2})});
  expect_matches_fd([](auto& v) { return ad::add_scalar(v[0], 3.0); }, {r({2, 2})});
  expect_matches_fd([](auto& v) { return ad::transpose(v[0]); }, {r({2, 5})});
}

TEST_F(TapeOps, Unary) {
  expect_matches_fd([](auto& v) { return ad::exp(v[0]); }, {r({2, 3})});
  auto pos = r({2, 3});
  for (auto& x : pos.values()) x = 0.5 + std::abs(x);
  expect_matches_fd([](auto& v) { return ad::log(v[0]); }, {pos});
  expect_matches_fd([](auto& v) { return ad::square(v[0]); }, {r({2, 3})});
  expect_matches_fd([](auto& v) { return ad::gelu(v[0]); }, {r({3, 4}, 2.0)});
  auto away = Tensor<double>::row({-2.0, -0.5, 0.7, 3.0});
  expect_matches_fd([](auto& v) { return ad::clamp_min(v[0], 0.1); }, {away});
}

TEST_F(TapeOps, Reductions) {
  expect_matches_fd([](auto& v) { return ad::sum(v[0]); }, {r({3, 3})});
  expect_matches_fd([](auto& v) { return ad::pick(v[0], 1, 2); }, {r({3, 3})});
}

TEST_F(TapeOps, SoftmaxFamily) {
  expect_matches_fd([](auto& v) { return ad::softmax_rows(v[0]); }, {r({3, 5}, 2.0)});
  expect_matches_fd([](auto& v) { return ad::log_softmax_rows(v[0]); }, {r({3, 5}, 2.0)});
}

TEST_F(TapeOps, LayerNorm) {
  auto gamma = r({1, 6});
  expect_matches_fd([](auto& v) { return ad::layer_norm(v[0], v[1], v[2], 1e-9); }, {r({4, 6}, 2.0), gamma, r({1, 6})},
                    1e-6);
}

TEST_F(TapeOps, Structural) {
  expect_matches_fd([](auto& v) { return ad::gather_rows(v[0], {4, 0, 0, 2}); }, {r({5, 3})});
  expect_matches_fd([](auto& v) { return ad::slice_rows(v[0], 1, 2); }, {r({4, 3})});
  expect_matches_fd([](auto& v) { return ad::slice_cols(v[0], 1, 3); }, {r({2, 5})});
  expect_matches_fd([](auto& v) { return ad::concat_rows<double>({v[0], v[1], v[0]}); }, {r({1, 3}), r({2, 3})});
  expect_matches_fd([](auto& v) { return ad::concat_cols<double>({v[0], v[1]}); }, {r({2, 1}), r({2, 3})});
}

TEST(Tape, ReusedInputAccumulates) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::row({3.0}), true);
  auto y = ad::mul(x, x);  // d/dx x^2 = 2x
  tape.backward(ad::sum(y));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 6.0);
}

TEST(Tape, UnreachedLeafHasNoGradient) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::row({1.0, 2.0}), true);
  auto unused = tape.leaf(Tensor<double>::row({5.0}), true);
  tape.backward(ad::sum(x));
  EXPECT_TRUE(tape.grad(unused).empty());
  EXPECT_FALSE(tape.grad(x).empty());
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape<double> tape;
  auto c = tape.constant(Tensor<double>::row({2.0}));
  auto x = tape.leaf(Tensor<double>::row({3.0}), true);
  tape.backward(ad::sum(ad::mul(c, x)));
  EXPECT_TRUE(tape.grad(c).empty());
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 2.0);
}

TEST(Tape, ParamReadsExternalStorage) {
  Tensor<double> w = Tensor<double>::row({1.0, 2.0});
  Tape<double> tape;
  auto v = tape.param(w);
  EXPECT_EQ(&v.value(), &w);
}

TEST(Tape, BackwardRequiresScalar) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::row({1.0, 2.0}), true);
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Tape, MixingTapesIsRejected) {
  Tape<double> a, b;
  auto x = a.leaf(Tensor<double>::row({1.0}), true);
  auto y = b.leaf(Tensor<double>::row({1.0}), true);
  EXPECT_THROW(ad::add(x, y), ContractError);
}

TEST(Tape, LogOfNonPositiveIsNumericError) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::row({1.0, 0.0}), true);
  EXPECT_THROW(ad::log(x), NumericError);
}

TEST(Tape, ShapeMismatchIsDimensionError) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2, 3}), true);
  auto y = tape.leaf(Tensor<double>({3, 2}), true);
  EXPECT_THROW(ad::add(x, y), DimensionError);
  EXPECT_THROW(ad::matmul(x, x), DimensionError);
}

TEST(Tape, FloatTapeComputesSameGradientShape) {
  Tape<float> tape;
  auto x = tape.leaf(Tensor<float>::row({1.f, 2.f, 3.f}), true);
  tape.backward(ad::sum(ad::softmax_rows(x)));
  ASSERT_EQ(tape.grad(x).size(), 3u);
  for (float g : tape.grad(x).values()) EXPECT_NEAR(g, 0.f, 1e-6f);  // softmax sums to 1 regardless of x
}

}  // namespace
}  // namespace vspcn
