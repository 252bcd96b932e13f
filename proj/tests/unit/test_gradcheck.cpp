#include <gtest/gtest.h>

#include <memory>

#include "fixtures.hpp"
#include "tslider/gradcheck.hpp"

namespace tslider {
namespace {

GradcheckOptions options(std::uint64_t seed) {
  GradcheckOptions o;
  o.config = testing::toy_config();
  o.vocab = std::make_shared<const Vocab>(testing::test_vocab());
  o.seed = seed;
  return o;
}

class GradcheckSeeds : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradcheckSeeds, AnalyticMatchesFiniteDifference) {
  const auto report = run_gradcheck(options(GetParam()));
  EXPECT_TRUE(report.passed) << report.worst_parameter << " " << report.max_rel_error;
  EXPECT_LT(report.max_rel_error, 1e-3);
  EXPECT_EQ(report.checked, 16u * 8u);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradcheckSeeds, ::testing::Range<std::uint64_t>(0, 10));

TEST(Gradcheck, CorruptedBackwardFails) {
  debug::set_backward_fault(OpKind::kMatmul);
  const auto report = run_gradcheck(options(0));
  debug::set_backward_fault(std::nullopt);
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.max_rel_error, 1e-2);
  EXPECT_FALSE(report.worst_parameter.empty());
}

TEST(Gradcheck, ZeroInitializedB) {
  auto o = options(3);
  o.b_init_std = 0.0;
  EXPECT_TRUE(run_gradcheck(o).passed);
}

TEST(Gradcheck, MeanModeAndWideRank) {
  auto o = options(4);
  o.q_mode = QMode::kMean;
  o.rank = 8;
  o.spec = testing::five_q_spec();
  EXPECT_TRUE(run_gradcheck(o).passed);
}

}  // namespace
}  // namespace tslider
