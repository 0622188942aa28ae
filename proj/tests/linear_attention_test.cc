// Copyright 2026 The ICL Subspace Lab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "icl/linear_attention.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "icl/errors.h"
#include "icl/monte_carlo.h"
#include "icl/random.h"

namespace icl {
namespace {

std::vector<double> SortedEigenvalues(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  std::vector<double> v(eig.eigenvalues().data(),
                        eig.eigenvalues().data() + eig.eigenvalues().size());
  std::sort(v.begin(), v.end());
  return v;
}

PromptBatch RandomBatch(int d, int m, uint64_t seed) {
  Engine engine = MakeEngine(seed);
  NormalSource normal(engine);
  PromptBatch b;
  b.x = normal.Matrix(m, d);
  b.y = normal.Vector(m);
  b.x_query = normal.Vector(d);
  b.y_query = normal();
  b.norm_len = m;
  return b;
}

AttentionWeights RandomWeights(int d, uint64_t seed) {
  Engine engine = MakeEngine(seed);
  NormalSource normal(engine);
  return {normal.Matrix(d + 1, d + 1), normal.Matrix(d + 1, d + 1),
          normal.Matrix(d + 1, d + 1), normal.Vector(d + 1)};
}

Matrix RandomSpd(int d, uint64_t seed) {
  Engine engine = MakeEngine(seed);
  NormalSource normal(engine);
  const Matrix g = normal.Matrix(d, d);
  Matrix s = g * g.transpose() / d;
  s.diagonal().array() += 0.1;
  return s;
}

TEST(EncodeMaskedPromptTest, SingleExample) {
  PromptBatch b;
  b.x = Matrix{{1.0, 0.0}};
  b.y = Vector::Constant(1, 3.0);
  b.x_query = Vector{{0.5, -2.0}};
  b.norm_len = 1;
  const MaskedPrompt p = EncodeMaskedPrompt(b);
  EXPECT_EQ(p.z, (Matrix{{1.0, 0.0, 3.0}, {0.0, 0.0, 0.0}}));
  EXPECT_EQ(p.z_query, (Vector{{0.5, -2.0, 0.0}}));
}

TEST(EncodeMaskedPromptTest, EmptyPromptAndShape) {
  PromptBatch empty;
  empty.x = Matrix(0, 3);
  empty.y = Vector(0);
  empty.x_query = Vector::Ones(3);
  empty.norm_len = 0;
  const MaskedPrompt p = EncodeMaskedPrompt(empty);
  EXPECT_EQ(p.z, Matrix::Zero(1, 4));

  const MaskedPrompt big = EncodeMaskedPrompt(RandomBatch(20, 120, 1));
  EXPECT_EQ(big.z.rows(), 121);
  EXPECT_EQ(big.z.cols(), 21);
  EXPECT_EQ(big.z.row(120), Matrix::Zero(1, 21));
}

TEST(PredictFullTest, ZeroQueryWeightsGiveZero) {
  AttentionWeights w = RandomWeights(4, 3);
  w.wq.setZero();
  EXPECT_EQ(PredictFull(w, RandomBatch(4, 7, 2)), 0.0);
}

TEST(PredictFullTest, HandWorkedExample) {
  // Z_M e₃ = (3, −1, 0); Z_Mᵀ(3, −1, 0) = (3, 5, 10); z_q·(3, 5, 10) = 11; / m.
  PromptBatch b;
  b.x = Matrix{{1.0, 2.0}, {0.0, 1.0}};
  b.y = Vector{{3.0, -1.0}};
  b.x_query = Vector{{2.0, 1.0}};
  b.norm_len = 2;
  AttentionWeights w{Matrix::Identity(3, 3), Matrix::Identity(3, 3), Matrix::Identity(3, 3),
                     Vector::Unit(3, 2)};
  EXPECT_DOUBLE_EQ(PredictFull(w, b), 5.5);
}

TEST(PredictFullTest, MatchesLiteralMatrixProduct) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const AttentionWeights w = RandomWeights(5, seed);
    const PromptBatch b = RandomBatch(5, 9, seed + 50);
    const MaskedPrompt p = EncodeMaskedPrompt(b);
    const double literal = (p.z_query.transpose() * w.wq * w.wk.transpose() *
                            p.z.transpose() * p.z * w.wv * w.p)(0) / b.norm_len;
    EXPECT_NEAR(PredictFull(w, b), literal, 1e-10 * std::max(1.0, std::abs(literal)));
    EXPECT_NEAR(PredictFull(w, Summarize(b, w.wv * w.p)), literal,
                1e-10 * std::max(1.0, std::abs(literal)));
  }
}

TEST(PredictFullTest, OptimalWeightsMatchReducedForm) {
  const auto [us, up] = SplitBasis(HaarOrthogonal(20, 3), 5);
  const OptimalWeights opt =
      OptimalWeightsTask(BuildCovariance(SingleSubspace{us, 1e-6}), 0.3, 250);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const PromptBatch b = RandomBatch(20, 40, seed);
    const double full = PredictFull(opt.weights, b);
    EXPECT_NEAR(full, PredictReduced(opt.a, b), 1e-10 * std::max(1.0, std::abs(full)));
  }
}

TEST(PredictFullTest, ErrorsOnEmptyPromptAndShapes) {
  PromptBatch empty;
  empty.x = Matrix(0, 3);
  empty.y = Vector(0);
  empty.x_query = Vector::Ones(3);
  const AttentionWeights w = AssembleWeights(Matrix::Identity(3, 3));
  EXPECT_THROW(PredictFull(w, empty), EmptyPromptError);
  EXPECT_THROW(PredictReduced(Matrix::Identity(3, 3), empty), EmptyPromptError);
  EXPECT_THROW(PredictFull(w, RandomBatch(4, 3, 1)), ShapeError);
  PromptBatch bad = RandomBatch(3, 4, 1);
  bad.norm_len = 3;
  EXPECT_THROW(PredictFull(w, bad), ShapeError);
}

TEST(PredictReducedTest, SimpleValues) {
  PromptBatch b;
  b.x = Matrix{{1.0, 0.0}};
  b.y = Vector::Constant(1, 2.0);
  b.x_query = Vector{{1.0, 0.0}};
  b.norm_len = 1;
  EXPECT_EQ(PredictReduced(Matrix::Zero(2, 2), b), 0.0);
  EXPECT_EQ(PredictReduced(Matrix::Identity(2, 2), b), 2.0);
}

TEST(OptimalWeightsTest, IsotropicScalarForm) {
  const int n = 1000000;
  const OptimalWeights opt = OptimalWeightsTask(Matrix::Identity(5, 5), 0.0, n);
  const double expected = static_cast<double>(n) / (n + 1 + 5);
  EXPECT_LT((opt.a - expected * Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(opt.weights.p, Vector::Unit(6, 5));
  EXPECT_EQ(opt.weights.wk, Matrix::Identity(6, 6));
  EXPECT_EQ(opt.weights.wv, Matrix::Identity(6, 6));
  EXPECT_EQ(opt.weights.wq.row(5), Matrix::Zero(1, 6));
  EXPECT_EQ(opt.weights.wq.col(5), Vector::Zero(6));
}

TEST(OptimalWeightsTest, SingleSubspaceEigenvalues) {
  const double eps = 1e-6, n = 250;
  const auto [us, up] = SplitBasis(HaarOrthogonal(20, 9), 5);
  const Matrix sigma = BuildCovariance(SingleSubspace{us, eps});
  const OptimalWeights opt = OptimalWeightsTask(sigma, 0.0, 250);
  const double m_s = sigma.trace();
  const double nu1 = n * (1 + eps) / ((n + 1) * (1 + eps) + m_s);
  const double nu2 = n * eps / ((n + 1) * eps + m_s);
  const auto ev = SortedEigenvalues(opt.a);
  for (int i = 0; i < 15; ++i) EXPECT_NEAR(ev[i], nu2, 1e-10);
  for (int i = 15; i < 20; ++i) EXPECT_NEAR(ev[i], nu1, 1e-10);
}

TEST(OptimalWeightsTest, EigenRouteAgreesWithDirectInverse) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix s = RandomSpd(7, seed);
    const double c = 1.01, k = 3.5;
    const Matrix direct = (c * Matrix::Identity(7, 7) + k * s.inverse()).inverse();
    EXPECT_LT((ShiftedInverseByEigen(s, c, k) - direct).norm(), 1e-10);
    const OptimalWeights opt = OptimalWeightsTask(s, 0.5, 40);
    EXPECT_LT((opt.a - ShiftedInverseByEigen(s, 41.0 / 40, opt.m_s / 40)).norm(), 1e-10);
  }
}

TEST(OptimalWeightsTest, SingularCovarianceRejected) {
  Matrix s = Matrix::Identity(4, 4);
  s(3, 3) = 0.0;
  EXPECT_THROW(OptimalWeightsTask(s, 0.0, 10), SingularCovarianceError);
  EXPECT_THROW(OptimalWeightsFeature(s, 0.0, 10), SingularCovarianceError);
  EXPECT_THROW(ShiftedInverseByEigen(s, 1.0, 1.0), SingularCovarianceError);
  EXPECT_THROW(OptimalWeightsTask(Matrix::Identity(4, 4), 0.0, 0), DomainError);
}

TEST(OptimalWeightsTest, MixtureDegeneratesAndSymmetrises) {
  const double eps = 1e-6;
  const int n = 250;
  const auto [us, up] = SplitBasis(HaarOrthogonal(20, 12), 5);
  const OptimalWeights single =
      OptimalWeightsTask(BuildCovariance(SingleSubspace{us, eps}), 0.2, n);
  const OptimalWeights k1 = OptimalWeightsMixture(MixtureK{{us}, {1.0}, eps}, 0.2, n);
  EXPECT_EQ(single.a, k1.a);

  const OptimalWeights half = OptimalWeightsMixture(MixtureK{{us, up}, {0.5, 0.5}, eps}, 0.0, n);
  const Matrix a_us = us.columns().transpose() * half.a * us.columns();
  const Matrix a_up = up.columns().transpose() * half.a * up.columns();
  EXPECT_LT((a_us - a_up).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(OptimalWeightsTest, UnequalMixtureEigenvalues) {
  const double eps = 1e-6, n = 250;
  const auto [us, up] = SplitBasis(HaarOrthogonal(20, 13), 5);
  const MixtureK mix{{us, up}, {0.3, 0.7}, eps};
  const OptimalWeights opt = OptimalWeightsMixture(mix, 0.0, 250);
  const double m_s = BuildCovariance(mix).trace();
  const auto nu = [&](double g) { return n * (g + eps) / ((n + 1) * (g + eps) + m_s); };
  const Matrix a_us = us.columns().transpose() * opt.a * us.columns();
  const Matrix a_up = up.columns().transpose() * opt.a * up.columns();
  EXPECT_LT((a_us - nu(0.3) * Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((a_up - nu(0.7) * Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(OptimalWeightsTest, FeatureFormsAgree) {
  const OptimalWeights iso_f = OptimalWeightsFeature(Matrix::Identity(6, 6), 0.4, 30);
  const OptimalWeights iso_t = OptimalWeightsTask(Matrix::Identity(6, 6), 0.4, 30);
  EXPECT_LT((iso_f.a - iso_t.a).norm(), 1e-14);
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const int n = 17;
    const Matrix s = RandomSpd(6, seed);
    const double m_s = s.trace() + 0.25;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    const Matrix s_inv_half = eig.operatorInverseSqrt();
    const Matrix a_bar =
        ((n + 1.0) / n * Matrix::Identity(6, 6) + m_s / n * s.inverse()).inverse();
    const Matrix sandwich = s_inv_half * a_bar * s_inv_half;
    EXPECT_LT((OptimalWeightsFeature(s, 0.5, n).a - sandwich).norm(), 1e-10);
  }
}

TEST(OptimalWeightsTest, FeatureSubspaceBlockEigenvalue) {
  const double eps = 0.1, n = 250;
  const auto [us, up] = SplitBasis(HaarOrthogonal(20, 14), 5);
  const Matrix sigma = BuildCovariance(SingleSubspace{us, eps});
  const OptimalWeights opt = OptimalWeightsFeature(sigma, 0.0, 250);
  const double nu1 = n / ((n + 1) * (1 + eps) + sigma.trace());
  const Matrix block = us.columns().transpose() * opt.a * us.columns();
  EXPECT_LT((block - nu1 * Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
}

class LoraAnalyticTest : public ::testing::Test {
 protected:
  LoraAnalyticTest() : split_(SplitBasis(HaarOrthogonal(20, 15), 5)) {}
  const OrthonormalBasis& us() const { return split_.first; }
  const OrthonormalBasis& up() const { return split_.second; }

 private:
  std::pair<OrthonormalBasis, OrthonormalBasis> split_;
};

TEST_F(LoraAnalyticTest, EqualisesBlockEigenvalues) {
  const double eps = 1e-6, n = 250;
  const Matrix sigma = BuildCovariance(SingleSubspace{us(), eps});
  const OptimalWeights opt = OptimalWeightsTask(sigma, 0.0, 250);
  const LoraAdapters ad = LoraAnalyticAdapters(up(), 250, eps, opt.m_s);
  EXPECT_EQ(ad.b1, ad.b2);
  EXPECT_EQ(ad.b1.row(20), Matrix::Zero(1, 5));
  const Matrix a_hat = AdaptedKernel(opt.weights, ad);
  const double nu1 = n * (1 + eps) / ((n + 1) * (1 + eps) + opt.m_s);
  const Matrix b_s = us().columns().transpose() * a_hat * us().columns();
  const Matrix b_p = up().columns().transpose() * a_hat * up().columns();
  EXPECT_LT((b_s - nu1 * Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((b_p - nu1 * Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
  const Matrix range = ad.b1.topRows(20);
  EXPECT_NEAR(SubspaceError(up().columns(), range.householderQr().householderQ() *
                                                Matrix::Identity(20, 5)), 0.0, 1e-10);
}

TEST_F(LoraAnalyticTest, SmallEpsilonLimitIsScaledProjector) {
  const double eps = 1e-12;
  const int n = 250;
  const OptimalWeights opt =
      OptimalWeightsTask(BuildCovariance(SingleSubspace{us(), eps}), 0.0, n);
  const Matrix a_hat = AdaptedKernel(opt.weights, LoraAnalyticAdapters(up(), n, eps, opt.m_s));
  const OrthonormalBasis pair[] = {us(), up()};
  const Matrix u2r = ConcatenateBases(pair).columns();
  const Matrix limit = n / (n + 1.0 + 5.0) * u2r * u2r.transpose();
  EXPECT_LT((a_hat - limit).cwiseAbs().maxCoeff(), 1e-6);
}

TEST_F(LoraAnalyticTest, PrintedScaleIsFarLarger) {
  const double eps = 1e-6, m_s = 5.0 + 20 * eps;
  EXPECT_GT(LoraLambda(2000, eps, m_s, LoraScale::kAsPrinted), 300.0);
  EXPECT_LT(LoraLambda(2000, eps, m_s, LoraScale::kBalanced), 1.0);
}

TEST_F(LoraAnalyticTest, PredictionIdentities) {
  const double eps = 1e-6;
  const OptimalWeights opt =
      OptimalWeightsTask(BuildCovariance(SingleSubspace{us(), eps}), 0.0, 100);
  const LoraAdapters ad = LoraAnalyticAdapters(up(), 100, eps, opt.m_s);
  LoraAdapters zero{Matrix::Zero(21, 5), Matrix::Zero(21, 5)};
  const Matrix a_hat = AdaptedKernel(opt.weights, ad);
  ASSERT_TRUE(ReducedKernel(opt.weights, &ad).has_value());
  EXPECT_LT((*ReducedKernel(opt.weights, &ad) - a_hat).norm(), 1e-15);
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const PromptBatch b = RandomBatch(20, 30, seed);
    EXPECT_DOUBLE_EQ(PredictLora(opt.weights, zero, b), PredictFull(opt.weights, b));
    const double lora = PredictLora(opt.weights, ad, b);
    EXPECT_NEAR(lora, PredictReduced(a_hat, b), 1e-10 * std::max(1.0, std::abs(lora)));
  }
}

TEST_F(LoraAnalyticTest, LongPromptPredictsTasksInAdapterSpan) {
  const double eps = 1e-6;
  const int m = 10000;
  const OptimalWeights opt =
      OptimalWeightsTask(BuildCovariance(SingleSubspace{us(), eps}), 0.0, m);
  const LoraAdapters ad = LoraAnalyticAdapters(up(), m, eps, opt.m_s);
  double bias = 0.0, mse = 0.0;
  constexpr int kPrompts = 50;
  for (int t = 0; t < kPrompts; ++t) {
    Engine engine = MakeEngine(77, t);
    NormalSource normal(engine);
    const Vector w = up().columns() * normal.Vector(5);
    const PromptBatch b = SamplePrompt(w, m, 0.0, nullptr, engine);
    const double err = PredictLora(opt.weights, ad, b) - b.y_query;
    bias += err / kPrompts;
    mse += err * err / kPrompts;
  }
  EXPECT_LT(std::abs(bias), 0.05);
  EXPECT_LT(mse, 0.02);
}

TEST(ReducedKernelTest, RejectsGeneralWeights) {
  EXPECT_FALSE(ReducedKernel(RandomWeights(3, 1)).has_value());
  const Matrix a = RandomSpd(3, 2);
  EXPECT_EQ(*ReducedKernel(AssembleWeights(a)), a);
}

}  // namespace
}  // namespace icl
