#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "tslider/errors.hpp"
#include "tslider/tensor.hpp"

namespace tslider {
namespace {

using testing::random_tensor;

// Straight triple loop in double.
std::vector<double> reference_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += double(a.data()[i * k + p]) * double(b.data()[p * n + j]);
      out[i * n + j] = s;
    }
  }
  return out;
}

TEST(Tensor, ConstructionValidatesShape) {
  EXPECT_THROW(Tensor({2, 0}, {}), DimensionError);
  EXPECT_THROW(Tensor(Shape{}, {}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dims(), 2u);
  EXPECT_EQ(t.at(4), 5.0f);
  EXPECT_THROW(t.dim(2), DimensionError);
  EXPECT_THROW((void)t.item(), ContractError);
}

TEST(Tensor, UndefinedTensorIsAContractError) {
  Tensor t;
  EXPECT_FALSE(t.defined());
  EXPECT_THROW((void)t.shape(), ContractError);
}

TEST(Tensor, CopiesShareStorageDetachDoesNot) {
  Tensor a({2}, {1, 2});
  Tensor b = a;
  EXPECT_TRUE(a.shares_storage_with(b));
  auto c = a.detach();
  EXPECT_FALSE(a.shares_storage_with(c));
  c.mutable_data()[0] = 9;
  EXPECT_EQ(a.at(0), 1.0f);
}

TEST(Tensor, GradBufferIsLazy) {
  Tensor a({3}, {1, 2, 3}, true);
  EXPECT_FALSE(a.has_grad());
  a.mutable_grad()[1] = 2.0f;
  EXPECT_TRUE(a.has_grad());
  EXPECT_EQ(a.grad()[1], 2.0f);
  a.zero_grad();
  EXPECT_FALSE(a.has_grad());
}

TEST(Tensor, BitEqual) {
  const Tensor a({2}, {0.0f, 1.0f});
  EXPECT_TRUE(bit_equal(a, a.detach()));
  EXPECT_FALSE(bit_equal(a, Tensor({2}, {-0.0f, 1.0f})));
  EXPECT_FALSE(bit_equal(a, Tensor({1, 2}, {0.0f, 1.0f})));
}

TEST(Ops, MatmulMatchesTripleLoop) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = random_tensor({7, 13}, seed);
    const auto b = random_tensor({13, 5}, seed + 100);
    const auto c = matmul(a, b);
    const auto ref = reference_matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{7, 5}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c.data()[i], ref[i], 1e-5);
  }
}

TEST(Ops, MatmulShapeMismatch) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(matmul(Tensor::zeros({6}), Tensor::zeros({6, 1})), DimensionError);
}

TEST(Ops, ElementwiseShapeMismatch) {
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  EXPECT_THROW(sub(Tensor::zeros({2, 1}), Tensor::zeros({1, 2})), DimensionError);
  EXPECT_THROW(mse(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST(Ops, TransposeAndReshape) {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto t = transpose(a);
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(std::vector<float>(t.data().begin(), t.data().end()), (std::vector<float>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(reshape(a, {6}).shape(), Shape{6});
  EXPECT_THROW(reshape(a, {4}), DimensionError);
}

TEST(Ops, GeluMatchesClosedForm) {
  const Tensor x({3}, {-1.0f, 0.0f, 1.0f});
  const auto y = gelu(x);
  EXPECT_NEAR(y.at(0), -0.15865525393145707, 1e-6);
  EXPECT_EQ(y.at(1), 0.0f);
  EXPECT_NEAR(y.at(2), 0.8413447460685429, 1e-6);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  const auto x = random_tensor({4, 9}, 3, 5.0);
  const auto y = softmax_lastdim(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 9; ++c) s += y.data()[r * 9 + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Ops, LayerNormNormalizesRows) {
  const auto x = random_tensor({3, 16}, 4, 3.0);
  const auto y = layernorm(x, Tensor::filled({16}, 1.0f), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0, sq = 0;
    for (std::size_t c = 0; c < 16; ++c) mean += y.data()[r * 16 + c];
    mean /= 16;
    for (std::size_t c = 0; c < 16; ++c) sq += std::pow(y.data()[r * 16 + c] - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(sq / 16, 1.0, 1e-3);
  }
}

TEST(Ops, SliceConcatGather) {
  const Tensor a({3, 2}, {1, 2, 3, 4, 5, 6});
  const auto s = slice_rows(a, 1, 3);
  EXPECT_EQ(std::vector<float>(s.data().begin(), s.data().end()), (std::vector<float>{3, 4, 5, 6}));
  EXPECT_THROW(slice_rows(a, 2, 4), DimensionError);
  const auto c = concat_lastdim(a, Tensor({3, 1}, {7, 8, 9}));
  EXPECT_EQ(std::vector<float>(c.data().begin(), c.data().end()), (std::vector<float>{1, 2, 7, 3, 4, 8, 5, 6, 9}));
  const std::int32_t ids[] = {2, 0, 2};
  const auto g = gather_rows(a, ids);
  EXPECT_EQ(std::vector<float>(g.data().begin(), g.data().end()), (std::vector<float>{5, 6, 1, 2, 5, 6}));
  const std::int32_t bad[] = {3};
  EXPECT_THROW(gather_rows(a, bad), DimensionError);
}

TEST(Ops, MseClosedForm) {
  const auto a = random_tensor({5, 4}, 7);
  auto b = a.detach();
  for (auto& v : b.mutable_data()) v += 0.5f;
  EXPECT_NEAR(mse(a, b).item(), 0.25, 1e-6);
  EXPECT_EQ(mse(a, a).item(), 0.0f);
  EXPECT_EQ(mse(a, b).shape(), Shape{1});
}

TEST(Ops, AttentionCausalMaskHidesFuture) {
  const auto q = random_tensor({5, 8}, 1);
  const auto k = random_tensor({5, 8}, 2);
  const auto v = random_tensor({5, 8}, 3);
  const auto base = attention(q, k, v, 2, true);
  auto v2 = v.detach();
  for (std::size_t c = 0; c < 8; ++c) v2.mutable_data()[4 * 8 + c] += 1.0f;
  const auto moved = attention(q, k, v2, 2, true);
  for (std::size_t i = 0; i < 4 * 8; ++i) EXPECT_EQ(base.data()[i], moved.data()[i]);
  EXPECT_THROW(attention(q, k, v, 3, true), DimensionError);
}

TEST(Ops, OpNamesRoundTrip) {
  for (int i = 0; i <= static_cast<int>(OpKind::kAttention); ++i) {
    const auto kind = static_cast<OpKind>(i);
    EXPECT_EQ(op_from_name(op_name(kind)), kind);
  }
  EXPECT_FALSE(op_from_name("nope").has_value());
}

}  // namespace
}  // namespace tslider
