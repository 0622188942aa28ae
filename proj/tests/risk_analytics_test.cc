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

#include "icl/risk_analytics.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "icl/errors.h"
#include "icl/linear_attention.h"

namespace icl {
namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> ThetaGrid() {
  std::vector<double> grid;
  for (int i = 0; i <= 8; ++i) grid.push_back(i * kPi / 16);
  return grid;
}

class TaskShiftTest : public ::testing::Test {
 protected:
  TaskShiftTest() : split_(SplitBasis(HaarOrthogonal(20, 2024), 5)) {}
  const OrthonormalBasis& us() const { return split_.first; }
  const OrthonormalBasis& up() const { return split_.second; }
  Matrix TestCov(double theta, double eps) const {
    return BuildCovariance(RotatedSubspace{us(), up(), PrincipalAngles::Broadcast(theta, 5), eps});
  }

 private:
  std::pair<OrthonormalBasis, OrthonormalBasis> split_;
};

TEST_F(TaskShiftTest, ZeroKernelGivesLabelVariance) {
  const Matrix st = TestCov(0.4, 1e-3);
  const RiskValue v = TaskRiskExact(Matrix::Zero(20, 20), st, 0.7, 10);
  EXPECT_NEAR(v.raw, st.trace() + 0.49, 1e-12);
  EXPECT_NEAR(v.normalized * 20, v.raw, 1e-12);
}

TEST_F(TaskShiftTest, OrthogonalShiftNearRankAtModerateLength) {
  const double eps = 1e-6;
  const Matrix a = OptimalWeightsTask(BuildCovariance(SingleSubspace{us(), eps}), 0.0, 250).a;
  const double exact = TaskRiskExact(a, TestCov(kPi / 2, eps), 0.0, 250).raw;
  EXPECT_NEAR(exact, TaskRiskAsymptotic(PrincipalAngles::Broadcast(kPi / 2, 5), 0.0), 0.15);
}

TEST_F(TaskShiftTest, ExactApproachesAsymptoticLawWhenEpsTimesNIsSmall) {
  const double eps = 1e-9;
  const int n = 100000;
  const Matrix a = OptimalWeightsTask(BuildCovariance(SingleSubspace{us(), eps}), 0.0, n).a;
  for (double theta : ThetaGrid()) {
    const double exact = TaskRiskExact(a, TestCov(theta, eps), 0.0, n).raw;
    EXPECT_LT(std::abs(exact - 5 * std::sin(theta) * std::sin(theta)), 1e-2) << theta;
  }
}

TEST_F(TaskShiftTest, LimitsDoNotCommuteWhenEpsTimesNIsOrderOne) {
  // ε = 1e-6, n = 1e5: ν₂ = nε/((n+1)ε + M_s) ≈ 0.0196 on U_{s,⊥}, so the
  // orthogonal-shift risk sits near r(1 − ν₂)² rather than r.
  const double eps = 1e-6;
  const int n = 100000;
  const Matrix sigma = BuildCovariance(SingleSubspace{us(), eps});
  const Matrix a = OptimalWeightsTask(sigma, 0.0, n).a;
  const double nu2 = n * eps / ((n + 1) * eps + sigma.trace());
  const double exact = TaskRiskExact(a, TestCov(kPi / 2, eps), 0.0, n).raw;
  EXPECT_GT(5.0 - exact, 0.1);
  EXPECT_NEAR(exact, 5 * (1 - nu2) * (1 - nu2), 2e-3);
}

TEST_F(TaskShiftTest, MixtureRiskIndependentOfAngle) {
  const double eps = 1e-8;
  for (int n : {10, 60, 250}) {
    const Matrix a = OptimalWeightsMixture(MixtureK{{us(), up()}, {0.5, 0.5}, eps}, 0.3, n).a;
    double lo = 1e300, hi = -1e300;
    for (double theta : ThetaGrid()) {
      const double v = TaskRiskExact(a, TestCov(theta, eps), 0.3, n).raw;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    EXPECT_LT(hi - lo, 1e-6) << n;
  }
}

TEST_F(TaskShiftTest, Mixture2ClosedFormMatchesExactFormula) {
  const double eps = 1e-6;
  const Matrix a = OptimalWeightsMixture(MixtureK{{us(), up()}, {0.5, 0.5}, eps}, 0.0, 250).a;
  EXPECT_NEAR(TaskRiskExact(a, TestCov(0.7, eps), 0.0, 250).raw,
              Mixture2RiskEps0(5, 0.0, 250, 250), 1e-3);
}

TEST_F(TaskShiftTest, SingleComponentClosedFormMatchesAlignedRisk) {
  const double eps = 1e-10;
  for (int n : {5, 50, 500}) {
    const Matrix a = OptimalWeightsTask(BuildCovariance(SingleSubspace{us(), eps}), 0.5, n).a;
    EXPECT_NEAR(TaskRiskExact(a, TestCov(0.0, eps), 0.5, 2 * n).raw,
                MixtureKRiskEps0(1, 5, 0.5, n, 2 * n), 1e-6);
  }
}

TEST(TaskRiskAsymptoticTest, KnownValues) {
  EXPECT_EQ(TaskRiskAsymptotic(PrincipalAngles::Broadcast(0.0, 5), 0.0), 0.0);
  EXPECT_NEAR(TaskRiskAsymptotic(PrincipalAngles::Broadcast(kPi / 2, 5), 0.0), 5.0, 1e-15);
  EXPECT_NEAR(TaskRiskAsymptotic(PrincipalAngles({0.0, kPi / 2, kPi / 6}), 1.0), 2.25, 1e-15);
}

TEST(ClosedFormTest, Mixture2LargePromptReachesNoiseFloor) {
  for (double sigma : {0.0, 1.0}) {
    EXPECT_LT(Mixture2RiskEps0(5, sigma, 1000000, 1000000) - sigma * sigma, 1e-4 * 5);
  }
}

TEST(ClosedFormTest, Mixture2AtThresholdBoundaryEqualsDelta) {
  // n = 99 is the bound itself for δ = 0.5: risk = 55/110 exactly, not below it.
  const double v = Mixture2RiskEps0(5, 0.0, 99, 99);
  EXPECT_GE(v, 0.5 - 1e-12);
  EXPECT_NEAR(v, 0.5, 1e-12);
  EXPECT_LT(Mixture2RiskEps0(5, 0.0, 100, 100), 0.5);
}

TEST(ClosedFormTest, MixtureKSpecialisations) {
  for (int r : {1, 3, 5}) {
    for (double sigma : {0.0, 0.5, 2.0}) {
      for (int64_t n : {1, 7, 99, 1000}) {
        for (int64_t m : {1, 13, 1000}) {
          EXPECT_EQ(MixtureKRiskEps0(2, r, sigma, n, m), Mixture2RiskEps0(r, sigma, n, m));
        }
      }
    }
  }
  EXPECT_LT(MixtureKRiskEps0(3, 5, 0.0, 10000, 10000), 0.01);
  EXPECT_THROW(MixtureKRiskEps0(0, 5, 0.0, 10, 10), DomainError);
  EXPECT_THROW(Mixture2RiskEps0(5, 0.0, 0, 10), DomainError);
}

TEST(ClosedFormTest, Mixture2NonIncreasingInPromptLength) {
  for (double sigma : {0.0, 1.0}) {
    const int64_t m = 10000;
    for (int64_t n = 1; n < m; ++n) {
      ASSERT_LE(Mixture2RiskEps0(5, sigma, n + 1, m), Mixture2RiskEps0(5, sigma, n, m) + 1e-12)
          << n;
    }
  }
}

TEST(ClosedFormTest, LoraMonotoneOnDiagonalAndBelowTurningPoint) {
  for (double sigma : {0.0, 1.0}) {
    for (int64_t n = 1; n < 10000; ++n) {
      ASSERT_LE(LoraRiskEps0(5, sigma, n + 1, n + 1), LoraRiskEps0(5, sigma, n, n) + 1e-12);
    }
    const double big_r = 5 + sigma * sigma;
    const int64_t m = 10000;
    const auto turn = static_cast<int64_t>(m * (1 + big_r) / (1 + 2 * big_r));
    for (int64_t n = 1; n < turn; ++n) {
      ASSERT_LE(LoraRiskEps0(5, sigma, n + 1, m), LoraRiskEps0(5, sigma, n, m) + 1e-12);
    }
  }
}

TEST(ClosedFormTest, LoraRisesSlightlyPastTurningPointForFixedM) {
  EXPECT_GT(LoraRiskEps0(5, 0.0, 10000, 10000), LoraRiskEps0(5, 0.0, 5000, 10000));
}

TEST(ClosedFormTest, LoraLimits) {
  EXPECT_LT(LoraRiskEps0(5, 0.0, 1000000, 1000000), 1e-4);
  const int64_t big = 100000000;
  EXPECT_NEAR(LoraRiskEps0(5, 1.0, big, big) - LoraRiskEps0(5, 0.0, big, big), 1.0, 1e-6);
}

TEST(ThresholdTest, Mixture2Example) {
  EXPECT_NEAR(ThresholdBound(ThresholdKind::Mixture2(), 5, 0.0, 0.5), 99.0, 1e-12);
  EXPECT_EQ(ThresholdPromptLength(ThresholdKind::Mixture2(), 5, 0.0, 0.5), 100);
}

TEST(ThresholdTest, KEqualsTwoMatchesMixture2) {
  for (int r : {1, 2, 5, 8}) {
    for (double sigma : {0.0, 0.3, 1.0}) {
      for (double delta : {0.05, 0.1, 0.5, 0.99}) {
        EXPECT_EQ(ThresholdPromptLength(ThresholdKind::MixtureOf(2), r, sigma, delta),
                  ThresholdPromptLength(ThresholdKind::Mixture2(), r, sigma, delta));
      }
    }
  }
}

TEST(ThresholdTest, NonIncreasingInDelta) {
  for (ThresholdKind kind : {ThresholdKind::Mixture2(), ThresholdKind::MixtureOf(3),
                             ThresholdKind::Lora()}) {
    int64_t prev = ThresholdPromptLength(kind, 5, 0.5, 0.01);
    for (double delta = 0.02; delta < 5.0; delta += 0.01) {
      const int64_t cur = ThresholdPromptLength(kind, 5, 0.5, delta);
      EXPECT_LE(cur, prev) << kind.Name() << " " << delta;
      prev = cur;
    }
    EXPECT_LE(ThresholdPromptLength(kind, 5, 0.0, 4.999), 2) << kind.Name();
  }
}

TEST(ThresholdTest, DomainErrors) {
  EXPECT_THROW(ThresholdPromptLength(ThresholdKind::Mixture2(), 5, 0.0, 0.0), DomainError);
  EXPECT_THROW(ThresholdPromptLength(ThresholdKind::Lora(), 5, 0.0, 5.0), DomainError);
  EXPECT_THROW(ThresholdPromptLength(ThresholdKind::MixtureOf(3), 5, 0.0, -1.0), DomainError);
}

TEST(ThresholdTest, SoundAcrossGrid) {
  for (int r : {2, 5, 8}) {
    for (double sigma : {0.0, 1.0}) {
      for (double delta : {0.1, 0.5, 1.0}) {
        for (ThresholdKind kind : {ThresholdKind::Mixture2(), ThresholdKind::MixtureOf(3),
                                   ThresholdKind::Lora()}) {
          const int64_t n = ThresholdPromptLength(kind, r, sigma, delta);
          EXPECT_LT(ClosedFormRiskEps0(kind, r, sigma, n), sigma * sigma + delta)
              << kind.Name() << " r=" << r << " sigma=" << sigma << " delta=" << delta;
        }
      }
    }
  }
}

class FeatureShiftTest : public TaskShiftTest {};

TEST_F(FeatureShiftTest, ZeroKernelGivesLabelVariance) {
  const Matrix st = TestCov(0.4, 0.1);
  EXPECT_NEAR(FeatureRiskExact(Matrix::Zero(20, 20), st, 0.5, 7).raw, st.trace() + 0.25, 1e-12);
}

TEST_F(FeatureShiftTest, CommutingCaseAgreesWithAlternativeFormula) {
  // With Σ_t ∝ I every trace in the two forms coincides except the Tr(Σ_t) vs
  // Tr(Σ_t²) factor, which agree at Σ_t = I.
  const Matrix a = OptimalWeightsFeature(Matrix::Identity(20, 20), 0.3, 40).a;
  EXPECT_NEAR(FeatureRiskExact(a, Matrix::Identity(20, 20), 0.3, 40).raw,
              FeatureRiskExactAsPrinted(a, Matrix::Identity(20, 20), 0.3, 40).raw, 1e-10);
}

TEST_F(FeatureShiftTest, AlternativeFormulaDisagreesUnderRotation) {
  const double eps = 0.1;
  const Matrix a = OptimalWeightsFeature(BuildCovariance(SingleSubspace{us(), eps}), 0.0, 50).a;
  const Matrix st = TestCov(kPi / 4, eps);
  EXPECT_GT(FeatureRiskExactAsPrinted(a, st, 0.0, 50).raw - FeatureRiskExact(a, st, 0.0, 50).raw,
            10.0);
}

TEST_F(FeatureShiftTest, ExactConvergesToLimit) {
  for (double eps : {0.1, 0.01}) {
    const int n = 1000000000;
    const Matrix a = OptimalWeightsFeature(BuildCovariance(SingleSubspace{us(), eps}), 0.0, n).a;
    for (double theta : ThetaGrid()) {
      const double limit = FeatureRiskAsymptotic(PrincipalAngles::Broadcast(theta, 5), eps, 0.0);
      const double exact = FeatureRiskExact(a, TestCov(theta, eps), 0.0, n).raw;
      EXPECT_NEAR(exact, limit, 1e-4 * std::max(1.0, limit)) << eps << " " << theta;
    }
  }
}

TEST_F(FeatureShiftTest, OrthogonalShiftWithinHalfOfLimitAtModerateEps) {
  const double eps = 0.1;
  const int n = 10000000;
  const Matrix a = OptimalWeightsFeature(BuildCovariance(SingleSubspace{us(), eps}), 0.0, n).a;
  const double exact = FeatureRiskExact(a, TestCov(kPi / 2, eps), 0.0, n).raw;
  EXPECT_TRUE(std::isfinite(exact));
  EXPECT_LT(std::abs(exact - FeatureRiskAsymptotic(PrincipalAngles::Broadcast(kPi / 2, 5), eps, 0.0)),
            0.5);
}

TEST(FeatureAsymptoticTest, EndpointsAndBlowUp) {
  EXPECT_NEAR(FeatureRiskAsymptotic(PrincipalAngles::Broadcast(0.0, 5), 1e-6, 0.4), 0.16, 1e-15);
  EXPECT_NEAR(FeatureRiskAsymptotic(PrincipalAngles::Broadcast(0.0, 5), 0.0, 0.0), 0.0, 0.0);
  EXPECT_GT(FeatureRiskAsymptotic(PrincipalAngles::Broadcast(kPi / 2, 5), 1e-6, 0.0), 1e6 * 5);
  EXPECT_THROW(FeatureRiskAsymptotic(PrincipalAngles::Broadcast(0.1, 5), 0.0, 0.0),
               DivergenceError);
  // 1/ε² scaling: shrinking ε tenfold multiplies the θ > 0 limit by ~100.
  const double big = FeatureRiskAsymptotic(PrincipalAngles::Broadcast(kPi / 4, 5), 1e-4, 0.0);
  const double bigger = FeatureRiskAsymptotic(PrincipalAngles::Broadcast(kPi / 4, 5), 1e-5, 0.0);
  EXPECT_NEAR(bigger / big, 100.0, 0.5);
}

TEST(FeatureAsymptoticTest, AlternativeLimitDiffersFromDerivedLimit) {
  const double derived = FeatureRiskAsymptotic(PrincipalAngles::Broadcast(kPi / 2, 5), 0.1, 0.0);
  const double printed = FeatureRiskAsymptoticAsPrinted(5, kPi / 2, 0.1, 0.0);
  // Gap r(1+ε+ε²)/(1+ε)² + r, tending to 2r as ε → 0.
  EXPECT_NEAR(printed - derived, 5 * (1 + 0.1 + 0.01) / (1.1 * 1.1) + 5, 1e-9);
  EXPECT_NEAR(FeatureRiskAsymptoticAsPrinted(5, 0.0, 1e-9, 0.0), 0.0, 1e-6);
  EXPECT_THROW(FeatureRiskAsymptoticAsPrinted(5, 0.2, 0.0, 0.0), DivergenceError);
}

TEST(OptimalTrainingRiskTest, LimitsAndMonotonicity) {
  EXPECT_LT(OptimalTrainingRisk(Matrix::Identity(5, 5), 0.0, 100000000), 1e-6);
  const auto [us, up] = SplitBasis(HaarOrthogonal(20, 3), 5);
  const Matrix sigma = BuildCovariance(MixtureK{{us, up}, {0.5, 0.5}, 1e-6});
  double prev = 1e300;
  for (int n = 1; n <= 2000; n += 7) {
    const double v = OptimalTrainingRisk(sigma, 0.5, n);
    EXPECT_LE(v, prev + 1e-12);
    prev = v;
    const Matrix a = OptimalWeightsTask(sigma, 0.5, n).a;
    EXPECT_NEAR(v, TaskRiskExact(a, sigma, 0.5, n).raw, 1e-9 * std::max(1.0, v));
  }
}

TEST(GatmiryTest, SpectrumAndTrace) {
  const auto [ss, st] = GatmiryExampleCovariances(5);
  EXPECT_EQ(ss, Matrix::Identity(5, 5));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(st);
  const std::vector<double> expected{0.25, 0.5, 1.0, 1.0, 1.0};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(eig.eigenvalues()[i], expected[i], 1e-12);
  EXPECT_NEAR(st.trace(), 3.75, 1e-12);
}

TEST(GatmiryTest, RiskApproachesNoiseFloor) {
  const auto [ss, st] = GatmiryExampleCovariances(5);
  double prev = 1e300;
  for (int n : {10, 100, 1000, 10000, 1000000}) {
    const double v = TaskRiskExact(OptimalWeightsTask(ss, 0.0, n).a, st, 0.0, n).raw;
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_LT(prev, 1e-4);
}

}  // namespace
}  // namespace icl
