#include <gtest/gtest.h>

#include <algorithm>

#include "sdmg/text_encoder.hpp"
#include "test_support.hpp"

using namespace sdmg;
using sdmg::testing::gradcheck;
using sdmg::testing::probe;

namespace {

struct Encoder {
  ParamStore<double> store;
  TextEncoderParams<double> p;
  Encoder(std::size_t ds, std::size_t dt, std::uint64_t seed, TextReduce reduce = TextReduce::kFinalState) {
    p = make_text_encoder(store, "text", ds, dt, true, reduce);
    store.init_uniform(seed);
  }
};

std::vector<double> half(const Tensor<double>& t, bool second) {
  const auto n = t.numel() / 2;
  auto d = t.to_vector();
  return second ? std::vector<double>(d.begin() + n, d.end()) : std::vector<double>(d.begin(), d.begin() + n);
}

}  // namespace

TEST(TextEncoder, ZeroRecurrentWeightsGiveZero) {
  Encoder e(4, 8, 1);
  for (auto* lp : {&e.p.fwd, &e.p.bwd})
    for (auto t : {lp->w_ih, lp->w_hh, lp->bias})
      for (auto& x : t.mutable_data()) x = 0;
  for (const char* s : {"a", "TOTAL 12.00", "ö", ""}) {
    auto t = encode_text(s, e.p);
    for (double v : t.data()) EXPECT_EQ(v, 0.0) << s;
  }
}

TEST(TextEncoder, SingleCharDirectionsAgreeWhenTied) {
  Encoder e(4, 8, 2);
  e.p.bwd = e.p.fwd;
  auto t = encode_text("Q", e.p);
  EXPECT_EQ(half(t, false), half(t, true));
}

TEST(TextEncoder, ReversalSwapsHalvesWhenTied) {
  Encoder e(5, 10, 3);
  e.p.bwd = e.p.fwd;
  for (std::string s : {"ab", "Total: $4.50", "12/03/2021", "x y z"}) {
    std::string r(s.rbegin(), s.rend());
    auto a = encode_text(s, e.p), b = encode_text(r, e.p);
    EXPECT_EQ(half(a, false), half(b, true)) << s;
    EXPECT_EQ(half(a, true), half(b, false)) << s;
  }
}

TEST(TextEncoder, ShapeAndBoundForAnyLength) {
  Encoder e(4, 8, 4);
  std::string s;
  for (int len = 0; len < 40; ++len) {
    auto t = encode_text(s, e.p);
    EXPECT_EQ(t.shape(), (Shape{8}));
    for (double v : t.data()) EXPECT_LE(std::abs(v), 1.0);
    s += static_cast<char>('a' + len % 26);
  }
}

TEST(TextEncoder, EmptyTextEncodesAsUnknownToken) {
  Encoder e(4, 8, 5);
  EXPECT_EQ(encode_text("", e.p).to_vector(), encode_text("ö", e.p).to_vector());
}

TEST(TextEncoder, BatchMatchesOneByOne) {
  for (auto reduce : {TextReduce::kFinalState, TextReduce::kMean}) {
    Encoder e(4, 6, 6, reduce);
    const std::vector<std::string> texts{"a", "longer text 123", "", "mid-size", "ZZ"};
    auto batch = encode_texts(texts, e.p);
    ASSERT_EQ(batch.shape(), (Shape{texts.size(), 6}));
    for (std::size_t i = 0; i < texts.size(); ++i) {
      auto one = encode_text(texts[i], e.p);
      for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(batch.at(i, k), one[k], 1e-14) << texts[i];
    }
  }
}

TEST(TextEncoder, Deterministic) {
  Encoder a(4, 8, 7), b(4, 8, 7);
  EXPECT_EQ(encode_text("SUBTOTAL", a.p).to_vector(), encode_text("SUBTOTAL", b.p).to_vector());
}

TEST(TextEncoder, OrderMatters) {
  Encoder e(4, 8, 8);
  EXPECT_NE(encode_text("12", e.p).to_vector(), encode_text("21", e.p).to_vector());
}

TEST(TextEncoder, OddOutputSizeRejected) {
  ParamStore<double> s;
  EXPECT_THROW(make_text_encoder(s, "t", 4, 7), ValidationError);
}

TEST(TextEncoder, ProjectionGradientMatchesDifferences) {
  Encoder e(4, 8, 9);
  auto r = gradcheck([&] { return probe(encode_text("a1$", e.p)); }, {e.p.w_s});
  EXPECT_LT(r.max_rel, 1e-3) << r.worst;
  // only the three used columns of W_s carry gradient
  std::size_t nonzero_cols = 0;
  for (std::size_t c = 0; c < CharDictionary::kSize; ++c) {
    double mag = 0;
    for (std::size_t k = 0; k < 4; ++k) mag += std::abs(e.p.w_s.grad()[k * CharDictionary::kSize + c]);
    nonzero_cols += mag > 0;
  }
  EXPECT_EQ(nonzero_cols, 3u);
}

TEST(TextEncoder, FullScaleShapes) {
  ParamStore<float> s;
  auto p = make_text_encoder(s, "text", 32, 256);
  EXPECT_EQ(p.w_s.shape(), (Shape{32, 91}));
  EXPECT_EQ(p.fwd.w_ih.shape(), (Shape{512, 32}));
  EXPECT_EQ(p.fwd.w_hh.shape(), (Shape{512, 128}));
  s.init_uniform(1);
  EXPECT_EQ(encode_text("hello", p).shape(), (Shape{256}));
}
