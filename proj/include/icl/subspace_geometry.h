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

#ifndef ICL_SUBSPACE_GEOMETRY_H_
#define ICL_SUBSPACE_GEOMETRY_H_

#include <cstdint>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace icl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// d×r matrix with orthonormal columns, 1 ≤ r ≤ d.
class OrthonormalBasis {
 public:
  static constexpr double kTolerance = 1e-10;

  // Throws InvalidDimensionError or NormalizationError when the invariant
  // ‖UᵀU − I‖_F ≤ kTolerance fails.
  explicit OrthonormalBasis(Matrix columns);

  const Matrix& columns() const { return columns_; }
  int ambient_dim() const { return static_cast<int>(columns_.rows()); }
  int rank() const { return static_cast<int>(columns_.cols()); }
  Matrix Projector() const { return columns_ * columns_.transpose(); }

 private:
  Matrix columns_;
};

// Principal angles θ_i ∈ [0, π/2].
class PrincipalAngles {
 public:
  explicit PrincipalAngles(std::vector<double> angles);
  // The equal-angle case θ_i = θ for i = 1..r.
  static PrincipalAngles Broadcast(double theta, int r);

  const std::vector<double>& values() const& { return angles_; }
  std::vector<double> values() && { return std::move(angles_); }
  int size() const { return static_cast<int>(angles_.size()); }
  double operator[](int i) const { return angles_[i]; }

 private:
  std::vector<double> angles_;
};

// U Uᵀ + ε I.
struct SingleSubspace {
  OrthonormalBasis basis;
  double eps;
};

// U_t = U_s cos Θ + U_{s,⊥} sin Θ, covariance U_t U_tᵀ + ε I.
struct RotatedSubspace {
  OrthonormalBasis base;
  OrthonormalBasis orth;
  PrincipalAngles angles;
  double eps;
};

// Σ_k γ_k (U_k U_kᵀ + ε I) with pairwise-orthogonal U_k.
struct MixtureK {
  std::vector<OrthonormalBasis> bases;
  std::vector<double> weights;
  double eps;
};

// Ū = Σ_k α_k U_k with Σ α_k² = 1, covariance Ū Ūᵀ + ε I.
struct SpanInterpolated {
  std::vector<OrthonormalBasis> bases;
  std::vector<double> coefficients;
  double eps;
};

struct ExplicitCovariance {
  Matrix matrix;
};

// Default-constructs to an empty ExplicitCovariance, which fails validation.
using CovarianceModel = std::variant<ExplicitCovariance, SingleSubspace, RotatedSubspace,
                                     MixtureK, SpanInterpolated>;

// Throws on any violated variant invariant.
void ValidateCovarianceModel(const CovarianceModel& model);
int AmbientDim(const CovarianceModel& model);

Matrix HaarOrthogonal(int d, uint64_t seed);

// Columns 1..r and r+1..2r of q.
std::pair<OrthonormalBasis, OrthonormalBasis> SplitBasis(const Matrix& q, int r);

OrthonormalBasis RotateBasis(const OrthonormalBasis& base,
                             const OrthonormalBasis& orth,
                             const PrincipalAngles& angles);

OrthonormalBasis SpanInterpolatedBasis(std::span<const OrthonormalBasis> bases,
                                       std::span<const double> coefficients);

// [U_1 U_2 ...]; the blocks must be mutually orthogonal.
OrthonormalBasis ConcatenateBases(std::span<const OrthonormalBasis> bases);

// Symmetric PD matrix; MixtureK yields the second moment Σ_k γ_k Σ_k.
Matrix BuildCovariance(const CovarianceModel& model);

// Sorted ascending, arccos of the clamped singular values of U1ᵀU2.
PrincipalAngles ComputePrincipalAngles(const OrthonormalBasis& u1,
                                       const OrthonormalBasis& u2);

// ‖P_U − P_Û‖²_F / ‖P_U‖²_F for matrices with orthonormal columns.
double SubspaceError(const Matrix& u, const Matrix& u_hat);
double SubspaceError(const OrthonormalBasis& u, const OrthonormalBasis& u_hat);

// τ = Tr(Σ_sᵀ Σ_t) / Tr(Σ_s).
double CovarianceAlignment(const Matrix& sigma_s, const Matrix& sigma_t);

}  // namespace icl

#endif  // ICL_SUBSPACE_GEOMETRY_H_
