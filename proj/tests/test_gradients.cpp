#include <gtest/gtest.h>

#include <cctype>

#include "gradient_suite.hpp"

using namespace sdmg;
using namespace sdmg::testing;

namespace {

const std::vector<GradCase>& all_cases() {
  static const auto cases = gradient_cases();
  return cases;
}

std::string case_label(const ::testing::TestParamInfo<std::size_t>& info) {
  std::string s;
  for (char c : all_cases()[info.param].name) s += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return s;
}

class FiniteDifference : public ::testing::TestWithParam<std::size_t> {};

}  // namespace

TEST_P(FiniteDifference, MatchesBackward) {
  const auto& c = all_cases()[GetParam()];
  const auto r = c.run();
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel, c.tol) << c.name << " worst at " << r.worst;
}

INSTANTIATE_TEST_SUITE_P(AllOps, FiniteDifference, ::testing::Range<std::size_t>(0, all_cases().size()), case_label);

TEST(FullModel, EveryParameterReceivesGradient) {
  Model<double> m(ModelConfig::toy(), 5);
  const auto doc = toy_document(6, 6, 8);
  m.params().zero_grad();
  backward(m.loss(m.forward(doc).logits, doc));
  for (const auto& e : m.params().entries()) {
    double mag = 0;
    for (double g : e.tensor.grad()) mag += std::abs(g);
    EXPECT_GT(mag, 0.0) << e.name;
  }
}

TEST(FullModel, GradientOfAblatedVariants) {
  for (const char* ablation : {"no-spatial", "no-graph", "no-text", "no-visual"}) {
    auto cfg = ModelConfig::toy();
    apply_ablation(cfg, ablation);
    Model<double> m(cfg, kSmoothModelSeed);
    const auto doc = toy_document(kSmoothDocSeed, 5, 8);
    auto r = gradcheck([&] { return m.loss(m.forward(doc).logits, doc); }, store_tensors(m.params()));
    EXPECT_LT(r.max_rel, kNonlinearTol) << ablation << ": " << r.worst;
  }
}

TEST(FullModel, AlternativeFusionsAndMeanReduce) {
  for (auto kind : {FusionKind::kLinearSum, FusionKind::kConcatMlp}) {
    auto cfg = ModelConfig::toy();
    cfg.fusion = kind;
    cfg.text_reduce = TextReduce::kMean;
    cfg.roi_mode = RoiMode::kAverage;
    Model<double> m(cfg, kSmoothModelSeed);
    const auto doc = toy_document(kSmoothDocSeed, 5, 8);
    auto r = gradcheck([&] { return m.loss(m.forward(doc).logits, doc); }, store_tensors(m.params()));
    EXPECT_LT(r.max_rel, kNonlinearTol) << fusion_name(kind) << ": " << r.worst;
  }
}
