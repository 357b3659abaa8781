#include <gtest/gtest.h>

#include "sdmg/fusion.hpp"
#include "test_support.hpp"

using namespace sdmg;
using sdmg::testing::gradcheck;
using sdmg::testing::probe;
using sdmg::testing::random_tensor;
using sdmg::testing::Rng;
using Td = Tensor<double>;

namespace {

void fill(Td t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

void expect_near(const Td& a, const Td& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], tol) << i;
}

}  // namespace

TEST(BlockTerm, ZeroTextGivesZero) {
  ParamStore<double> s;
  auto p = make_block_term(s, "f", 6, 5, 4, 2, 2, 3, 2);
  s.init_uniform(1);
  Rng rng(2);
  auto n = fuse_block_term(Td({3, 6}), random_tensor(rng, {3, 5}), p);
  for (double x : n.data()) EXPECT_EQ(x, 0.0);
}

TEST(BlockTerm, DiagonalCoreGivesElementwiseProduct) {
  ParamStore<double> s;
  auto p = make_block_term(s, "f", 3, 3, 3, 3, 3, 3, 1);
  for (auto t : {p.p_t, p.p_v, p.p_n}) {
    fill(t, 0);
    for (std::size_t i = 0; i < 3; ++i) t.mutable_data()[i * 3 + i] = 1;
  }
  fill(p.core, 0);
  for (std::size_t i = 0; i < 3; ++i) p.core.mutable_data()[(i * 3 + i) * 3 + i] = 1;
  auto t = Td::mat(1, 3, {1, -2, 3});
  auto v = Td::mat(1, 3, {4, 5, -0.5});
  EXPECT_EQ(fuse_block_term(t, v, p).to_vector(), (std::vector<double>{4, -10, -1.5}));
}

TEST(BlockTerm, MatchesExplicitKroneckerMap) {
  ParamStore<double> s;
  auto p = make_block_term(s, "f", 6, 6, 4, 2, 2, 2, 2);
  s.init_uniform(3);
  Rng rng(4);
  auto t = random_tensor(rng, {5, 6}), v = random_tensor(rng, {5, 6});
  expect_near(fuse_block_term(t, v, p), fuse_kronecker_explicit(t, v, assemble_kronecker_map(p)), 1e-10);
}

TEST(BlockTerm, MatchesExplicitMapOnRandomConfigurations) {
  Rng rng(5);
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t dt = dim(rng), dv = dim(rng), dn = dim(rng), a = dim(rng), b = dim(rng), c = dim(rng), R = dim(rng);
    ParamStore<double> s;
    auto p = make_block_term(s, "f", dt, dv, dn, a, b, c, R);
    s.init_uniform(trial);
    auto t = random_tensor(rng, {3, dt}), v = random_tensor(rng, {3, dv});
    expect_near(fuse_block_term(t, v, p), fuse_kronecker_explicit(t, v, assemble_kronecker_map(p)), 1e-10);
  }
}

TEST(BlockTerm, Bilinear) {
  ParamStore<double> s;
  auto p = make_block_term(s, "f", 5, 4, 3, 2, 3, 2, 3);
  s.init_uniform(6);
  Rng rng(7);
  std::uniform_real_distribution<double> coef(-3, 3);
  for (int trial = 0; trial < 20; ++trial) {
    auto t1 = random_tensor(rng, {2, 5}, false), t2 = random_tensor(rng, {2, 5}, false);
    auto v1 = random_tensor(rng, {2, 4}, false), v2 = random_tensor(rng, {2, 4}, false);
    const double alpha = coef(rng);
    expect_near(fuse_block_term(scale(t1, alpha), v1, p), scale(fuse_block_term(t1, v1, p), alpha), 1e-9);
    expect_near(fuse_block_term(t1, scale(v1, alpha), p), scale(fuse_block_term(t1, v1, p), alpha), 1e-9);
    expect_near(fuse_block_term(add(t1, t2), v1, p), add(fuse_block_term(t1, v1, p), fuse_block_term(t2, v1, p)), 1e-9);
    expect_near(fuse_block_term(t1, add(v1, v2), p), add(fuse_block_term(t1, v1, p), fuse_block_term(t1, v2, p)), 1e-9);
  }
}

TEST(BlockTerm, ShapeMismatchRejected) {
  ParamStore<double> s;
  auto p = make_block_term(s, "f", 6, 5, 4, 2, 2, 3, 2);
  s.init_uniform(8);
  EXPECT_THROW(fuse_block_term(Td({2, 5}), Td({2, 5}), p), DimensionError);
  EXPECT_THROW(fuse_block_term(Td({2, 6}), Td({2, 6}), p), DimensionError);
}

TEST(BlockTerm, ParameterCountAtFullScale) {
  EXPECT_EQ(block_term_param_count(256, 256, 256, 52, 52, 52, 20), 3610880u);
  EXPECT_EQ(full_tensor_param_count(256, 256, 256), 16777216u);
  ParamStore<float> s;
  make_block_term(s, "f", 256, 256, 256, 52, 52, 52, 20);
  EXPECT_EQ(s.count(), 3610880u);
}

TEST(BlockTerm, Gradient) {
  ParamStore<double> s;
  auto p = make_block_term(s, "f", 4, 3, 5, 2, 2, 2, 2, true);
  s.init_uniform(9);
  Rng rng(10);
  auto t = random_tensor(rng, {3, 4}), v = random_tensor(rng, {3, 3});
  std::vector<Td> inputs{t, v};
  for (const auto& e : s.entries()) inputs.push_back(e.tensor);
  auto r = gradcheck([&] { return probe(fuse_block_term(t, v, p)); }, inputs);
  EXPECT_LT(r.max_rel, 1e-5) << r.worst;
}

TEST(Kronecker, BasisPicksColumn) {
  Rng rng(11);
  auto P = random_tensor(rng, {4, 6}, false);
  auto n = fuse_kronecker_explicit(Td::mat(1, 2, {1, 0}), Td::mat(1, 3, {1, 0, 0}), P);
  for (std::size_t z = 0; z < 4; ++z) EXPECT_EQ(n[z], P.at(z, 0));
  auto m = fuse_kronecker_explicit(Td::mat(1, 2, {0, 1}), Td::mat(1, 3, {0, 0, 1}), P);
  for (std::size_t z = 0; z < 4; ++z) EXPECT_EQ(m[z], P.at(z, 5));
}

TEST(Kronecker, IdentityGivesOuterProduct) {
  std::vector<double> eye(36, 0);
  for (std::size_t i = 0; i < 6; ++i) eye[i * 6 + i] = 1;
  auto n = fuse_kronecker_explicit(Td::mat(1, 2, {2, 3}), Td::mat(1, 3, {1, -1, 5}), Td({6, 6}, eye));
  EXPECT_EQ(n.to_vector(), (std::vector<double>{2, -2, 10, 3, -3, 15}));
}

TEST(Kronecker, AgreesWithModeProducts) {
  Rng rng(12);
  const std::size_t dt = 3, dv = 4, dn = 2;
  auto T3 = random_tensor(rng, {dt, dv, dn}, false);
  auto t = random_tensor(rng, {1, dt}, false), v = random_tensor(rng, {1, dv}, false);
  std::vector<double> P(dn * dt * dv);
  for (std::size_t j = 0; j < dt; ++j)
    for (std::size_t k = 0; k < dv; ++k)
      for (std::size_t z = 0; z < dn; ++z) P[z * dt * dv + j * dv + k] = T3[(j * dv + k) * dn + z];
  auto n = fuse_kronecker_explicit(t, v, Td({dn, dt * dv}, P));
  for (std::size_t z = 0; z < dn; ++z) {
    double s = 0;
    for (std::size_t j = 0; j < dt; ++j)
      for (std::size_t k = 0; k < dv; ++k) s += T3[(j * dv + k) * dn + z] * t[j] * v[k];
    EXPECT_NEAR(n[z], s, 1e-10);
  }
  EXPECT_THROW(fuse_kronecker_explicit(t, v, Td({dn, 11})), DimensionError);
}

TEST(LinearSum, ZeroInputsAndBiasesGiveZero) {
  ParamStore<double> s;
  auto p = make_linear_sum(s, "f", 4, 3, 8, 5);
  s.init_uniform(13);
  for (const auto& e : s.entries())
    if (e.name.back() == 'b') fill(e.tensor, 0);
  for (double x : fuse_linear_sum(Td({2, 4}), Td({2, 3}), p).to_vector()) EXPECT_EQ(x, 0.0);
}

TEST(LinearSum, TiedPathsDoubleTheOutput) {
  ParamStore<double> s;
  auto p = make_linear_sum(s, "f", 4, 4, 8, 5, false);
  s.init_uniform(14);
  p.visual = p.text;
  Rng rng(15);
  auto t = random_tensor(rng, {3, 4}, false);
  expect_near(fuse_linear_sum(t, t, p), scale(mlp_forward(t, p.text), 2.0), 1e-14);
}

TEST(LinearSum, GradientAndShapes) {
  ParamStore<double> s;
  auto p = make_linear_sum(s, "f", 4, 3, 8, 5);
  s.init_uniform(16);
  Rng rng(17);
  auto t = random_tensor(rng, {2, 4}), v = random_tensor(rng, {2, 3});
  std::vector<Td> inputs{t, v};
  for (const auto& e : s.entries()) inputs.push_back(e.tensor);
  auto r = gradcheck([&] { return probe(fuse_linear_sum(t, v, p)); }, inputs);
  EXPECT_LT(r.max_rel, 1e-3) << r.worst;
  EXPECT_THROW(fuse_linear_sum(Td({2, 3}), v, p), DimensionError);
}

TEST(ConcatMlp, ZeroInputAndBiasesGiveZero) {
  ParamStore<double> s;
  auto p = make_concat_mlp(s, "f", 4, 3, 8, 5);
  s.init_uniform(18);
  for (const auto& b : p.b) fill(b, 0);
  for (double x : fuse_concat_mlp(Td({2, 4}), Td({2, 3}), p).to_vector()) EXPECT_EQ(x, 0.0);
}

TEST(ConcatMlp, GradientAndShapes) {
  ParamStore<double> s;
  auto p = make_concat_mlp(s, "f", 4, 3, 8, 5);
  s.init_uniform(19);
  Rng rng(20);
  auto t = random_tensor(rng, {2, 4}), v = random_tensor(rng, {2, 3});
  std::vector<Td> inputs{t, v};
  for (const auto& e : s.entries()) inputs.push_back(e.tensor);
  auto r = gradcheck([&] { return probe(fuse_concat_mlp(t, v, p)); }, inputs);
  EXPECT_LT(r.max_rel, 1e-3) << r.worst;
  EXPECT_THROW(fuse_concat_mlp(t, Td({2, 4}), p), DimensionError);
  ParamStore<float> wide;
  auto q = make_concat_mlp(wide, "f", 256, 256, 512, 256);
  EXPECT_EQ(q.w[1].shape(), (Shape{512, 512}));
}
