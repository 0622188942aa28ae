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

#include <cmath>
#include <algorithm>

#include <fmt/format.h>

#include "icl/errors.h"
#include "icl/linear_attention.h"

namespace icl {
namespace {

void RequireSquarePair(const Matrix& a, const Matrix& sigma_t) {
  if (a.rows() == 0 || a.rows() != a.cols() || sigma_t.rows() != a.rows() ||
      sigma_t.cols() != a.cols()) {
    throw ShapeError("A and Σ_t must be d×d with the same d");
  }
}

void RequireLength(int64_t len, const char* name) {
  if (len < 1) throw DomainError(fmt::format("{} must be >= 1, got {}", name, len));
}

// r + σ² + (m+1+c)/m · r n²/(n+1+c')² − 2 r n/(n+1+c'), with R = r + σ².
double ClosedForm(int r, double noise_sd, int64_t n, int64_t m, double c_num,
                  double c_den) {
  RequireLength(n, "n");
  RequireLength(m, "m");
  const double rr = r;
  const double nn = static_cast<double>(n);
  const double mm = static_cast<double>(m);
  const double big_r = rr + noise_sd * noise_sd;
  const double denom = nn + 1.0 + c_den;
  return big_r + (mm + 1.0 + c_num) / mm * rr * nn * nn / (denom * denom) -
         2.0 * rr * nn / denom;
}

}  // namespace

void ShiftScenario::Validate() const {
  if (n_train < 1 || m_test < 1) {
    throw ConfigurationError("prompt lengths n_train and m_test must be >= 1");
  }
  if (!(noise_sd >= 0.0)) throw ConfigurationError("noise_sd must be non-negative");
  ValidateCovarianceModel(train_cov);
  ValidateCovarianceModel(test_cov);
  if (AmbientDim(train_cov) != AmbientDim(test_cov)) {
    throw ConfigurationError("train and test covariances differ in dimension");
  }
}

RiskValue TaskRiskExact(const Matrix& a, const Matrix& sigma_t, double noise_sd, int m) {
  RequireSquarePair(a, sigma_t);
  RequireLength(m, "m");
  const double mm = m;
  const double m_t = sigma_t.trace() + noise_sd * noise_sd;
  const double raw = m_t - 2.0 * (sigma_t * a).trace() +
                     (m_t / mm) * (a.transpose() * a).trace() +
                     ((mm + 1.0) / mm) * (a * sigma_t * a.transpose()).trace();
  return RiskValue::FromRaw(raw, static_cast<int>(a.rows()));
}

double TaskRiskAsymptotic(const PrincipalAngles& angles, double noise_sd) {
  double total = noise_sd * noise_sd;
  for (double theta : angles.values()) {
    const double s = std::sin(theta);
    total += s * s;
  }
  return total;
}

double Mixture2RiskEps0(int r, double noise_sd, int64_t n, int64_t m) {
  return MixtureKRiskEps0(2, r, noise_sd, n, m);
}

double MixtureKRiskEps0(int k, int r, double noise_sd, int64_t n, int64_t m) {
  if (k < 1) throw DomainError("component count K must be >= 1");
  const double kr = k * (r + noise_sd * noise_sd);
  return ClosedForm(r, noise_sd, n, m, kr, kr);
}

double LoraRiskEps0(int r, double noise_sd, int64_t n, int64_t m) {
  const double big_r = r + noise_sd * noise_sd;
  return ClosedForm(r, noise_sd, n, m, 2.0 * big_r, big_r);
}

std::string ThresholdKind::Name() const {
  switch (family) {
    case Family::kMixture2:
      return "mixture2";
    case Family::kMixtureK:
      return fmt::format("mixture{}", k);
    case Family::kLora:
      return "lora";
  }
  return "unknown";
}

double ThresholdBound(ThresholdKind kind, int r, double noise_sd, double delta) {
  if (r < 1) throw DomainError("rank must be >= 1");
  if (!(delta > 0.0 && delta < r)) {
    throw DomainError(fmt::format("delta must lie in (0, r={}), got {}", r, delta));
  }
  const double rr = r;
  const double big_r = rr + noise_sd * noise_sd;
  switch (kind.family) {
    case ThresholdKind::Family::kMixture2:
    case ThresholdKind::Family::kMixtureK: {
      const int k = kind.family == ThresholdKind::Family::kMixture2 ? 2 : kind.k;
      if (k < 1) throw DomainError("component count K must be >= 1");
      const double c = k * big_r + 1.0;
      return c * rr / delta - c;
    }
    case ThresholdKind::Family::kLora:
      return (2.0 * (big_r + 1.0) * (rr - delta) - rr) / delta +
             (big_r + 1.0) * std::sqrt((rr - delta) / delta);
  }
  throw DomainError("unknown threshold kind");
}

int64_t ThresholdPromptLength(ThresholdKind kind, int r, double noise_sd, double delta) {
  double bound = ThresholdBound(kind, r, noise_sd, delta);
  // Decimal δ (0.1, ...) must not shift an integral bound below itself.
  const double nearest = std::round(bound);
  if (std::abs(bound - nearest) <= 1e-9 * std::max(1.0, std::abs(bound))) {
    bound = nearest;
  }
  const int64_t n = static_cast<int64_t>(std::floor(bound)) + 1;
  return std::max<int64_t>(1, n);
}

double ClosedFormRiskEps0(ThresholdKind kind, int r, double noise_sd, int64_t n) {
  switch (kind.family) {
    case ThresholdKind::Family::kMixture2:
      return Mixture2RiskEps0(r, noise_sd, n, n);
    case ThresholdKind::Family::kMixtureK:
      return MixtureKRiskEps0(kind.k, r, noise_sd, n, n);
    case ThresholdKind::Family::kLora:
      return LoraRiskEps0(r, noise_sd, n, n);
  }
  throw DomainError("unknown threshold kind");
}

RiskValue FeatureRiskExact(const Matrix& a, const Matrix& sigma_t, double noise_sd,
                           int m) {
  RequireSquarePair(a, sigma_t);
  RequireLength(m, "m");
  const double mm = m;
  const double sigma2 = noise_sd * noise_sd;
  const double m_t = sigma_t.trace() + sigma2;
  const Matrix sa = sigma_t * a;
  const Matrix at_s_a = a.transpose() * sigma_t * a;
  const double quad = (at_s_a * sigma_t).trace();
  const double raw = m_t - 2.0 * (sa * sigma_t).trace() +
                     ((mm + 1.0) / mm) * (at_s_a * sigma_t * sigma_t).trace() +
                     (sigma_t.trace() + sigma2) / mm * quad;
  return RiskValue::FromRaw(raw, static_cast<int>(a.rows()));
}

RiskValue FeatureRiskExactAsPrinted(const Matrix& a, const Matrix& sigma_t,
                                    double noise_sd, int m) {
  RequireSquarePair(a, sigma_t);
  RequireLength(m, "m");
  const double mm = m;
  const double sigma2 = noise_sd * noise_sd;
  const double m_t = sigma_t.trace() + sigma2;
  const Matrix s2 = sigma_t * sigma_t;
  const double raw = m_t - 2.0 * (s2 * a).trace() +
                     ((mm + 1.0) / mm) * (a * s2 * sigma_t * a).trace() +
                     s2.trace() * (a * sigma_t * a).trace() / mm +
                     sigma2 / mm * (a * s2 * a).trace();
  return RiskValue::FromRaw(raw, static_cast<int>(a.rows()));
}

double FeatureRiskAsymptotic(const PrincipalAngles& angles, double eps, double noise_sd) {
  if (eps < 0.0) throw DomainError("eps must be non-negative");
  double total = noise_sd * noise_sd;
  for (double theta : angles.values()) {
    const double s2 = std::sin(theta) * std::sin(theta);
    if (s2 == 0.0) continue;
    if (eps == 0.0) {
      throw DivergenceError("feature-shift limit diverges as eps -> 0 for theta > 0", 0);
    }
    total += s2 * (1.0 + 2.0 * eps) * (s2 + eps + eps * eps) /
             (eps * eps * (1.0 + eps) * (1.0 + eps));
  }
  return total;
}

double FeatureRiskAsymptoticAsPrinted(int r, double theta, double eps, double noise_sd) {
  if (eps < 0.0) throw DomainError("eps must be non-negative");
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double c1 = (1.0 + 2.0 * eps) * (1.0 + eps) + eps * eps;
  const double c2 = 2.0 * (1.0 + eps);
  double sin_term = 0.0;
  if (s != 0.0) {
    if (eps == 0.0) {
      throw DivergenceError("feature-shift limit diverges as eps -> 0 for theta > 0", 0);
    }
    sin_term = (c1 - eps * c2) / (eps * eps) * r * s * s;
  }
  return (c1 - (1.0 + eps) * c2) / ((1.0 + eps) * (1.0 + eps)) * r * c * c + sin_term +
         r + noise_sd * noise_sd;
}

double OptimalTrainingRisk(const Matrix& sigma, double noise_sd, int n) {
  const OptimalWeights opt = OptimalWeightsTask(sigma, noise_sd, n);
  return opt.m_s - (sigma * opt.a).trace();
}

std::pair<Matrix, Matrix> GatmiryExampleCovariances(uint64_t seed) {
  const Matrix v = HaarOrthogonal(5, seed);
  Vector lambda(5);
  lambda << 1.0, 1.0, 0.5, 0.25, 1.0;
  Matrix sigma_t = v * lambda.asDiagonal() * v.transpose();
  sigma_t = 0.5 * (sigma_t + sigma_t.transpose());
  return {Matrix::Identity(5, 5), sigma_t};
}

}  // namespace icl
