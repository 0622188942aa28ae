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

#ifndef ICL_RISK_ANALYTICS_H_
#define ICL_RISK_ANALYTICS_H_

#include <cstdint>
#include <string>
#include <utility>

#include "icl/subspace_geometry.h"

namespace icl {

enum class ShiftKind { kTask, kFeature };

struct ShiftScenario {
  ShiftKind kind = ShiftKind::kTask;
  CovarianceModel train_cov;
  CovarianceModel test_cov;
  double noise_sd = 0.0;
  int n_train = 1;
  int m_test = 1;

  // Throws ConfigurationError on n_train, m_test < 1, σ < 0 or mismatched d.
  void Validate() const;
};

// normalized = raw / d.
struct RiskValue {
  double raw = 0.0;
  double normalized = 0.0;

  static RiskValue FromRaw(double raw, int d) { return {raw, raw / d}; }
};

// Expected squared error of (1/m) x_qᵀ A Xᵀ y when w ~ N(0, Σ_t), x ~ N(0, I):
//   M_t − 2Tr(Σ_t A) + (M_t/m)Tr(AᵀA) + ((m+1)/m)Tr(A Σ_t Aᵀ), M_t = Tr Σ_t + σ².
RiskValue TaskRiskExact(const Matrix& a, const Matrix& sigma_t, double noise_sd, int m);

// Σ_i sin²θ_i + σ².
double TaskRiskAsymptotic(const PrincipalAngles& angles, double noise_sd);

double Mixture2RiskEps0(int r, double noise_sd, int64_t n, int64_t m);
double MixtureKRiskEps0(int k, int r, double noise_sd, int64_t n, int64_t m);
double LoraRiskEps0(int r, double noise_sd, int64_t n, int64_t m);

struct ThresholdKind {
  enum class Family { kMixture2, kMixtureK, kLora };
  Family family = Family::kMixture2;
  int k = 2;  // component count for kMixtureK

  static ThresholdKind Mixture2() { return {Family::kMixture2, 2}; }
  static ThresholdKind MixtureOf(int k) { return {Family::kMixtureK, k}; }
  static ThresholdKind Lora() { return {Family::kLora, 2}; }
  std::string Name() const;
};

// Real-valued bound the prompt length must strictly exceed.
double ThresholdBound(ThresholdKind kind, int r, double noise_sd, double delta);
// Smallest integer n ≥ 1 strictly above ThresholdBound; δ ∈ (0, r).
int64_t ThresholdPromptLength(ThresholdKind kind, int r, double noise_sd, double delta);
// The ε→0 closed-form risk matching `kind` at n = m.
double ClosedFormRiskEps0(ThresholdKind kind, int r, double noise_sd, int64_t n);

// Expected squared error of (1/m) x_qᵀ A Xᵀ y when w ~ N(0, I), x ~ N(0, Σ_t):
//   M_t − 2Tr(Σ_t A Σ_t) + ((m+1)/m)Tr(Σ_t A Σ_t A Σ_t)
//       + (1/m)Tr(Σ_t)Tr(A Σ_t A Σ_t) + (σ²/m)Tr(A Σ_t A Σ_t).
RiskValue FeatureRiskExact(const Matrix& a, const Matrix& sigma_t, double noise_sd, int m);
// Alternative five-term trace formula; disagrees with simulation, kept for comparison.
RiskValue FeatureRiskExactAsPrinted(const Matrix& a, const Matrix& sigma_t,
                                    double noise_sd, int m);

// n, m → ∞ limit of FeatureRiskExact for Σ_s = U_sU_sᵀ + εI and a rotated
// test covariance: Σ_i sin²θ_i (1+2ε)(sin²θ_i + ε + ε²) / (ε²(1+ε)²) + σ².
double FeatureRiskAsymptotic(const PrincipalAngles& angles, double eps, double noise_sd);
// Alternative limit with c₁ = (1+2ε)(1+ε) + ε², c₂ = 2(1+ε):
//   (c₁ − (1+ε)c₂)/(1+ε)² r cos²θ + (c₁ − εc₂)/ε² r sin²θ + r + σ².
double FeatureRiskAsymptoticAsPrinted(int r, double theta, double eps, double noise_sd);

// M_s − Tr(Σ A) for the optimal A of the task model.
double OptimalTrainingRisk(const Matrix& sigma, double noise_sd, int n);

// Σ_s = I_5 and Σ_t = V diag(1, 1, 1/2, 1/4, 1) Vᵀ with V Haar(seed).
std::pair<Matrix, Matrix> GatmiryExampleCovariances(uint64_t seed);

}  // namespace icl

#endif  // ICL_RISK_ANALYTICS_H_
