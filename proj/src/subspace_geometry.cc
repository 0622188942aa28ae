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

#include "icl/subspace_geometry.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <fmt/format.h>

#include "icl/errors.h"
#include "icl/random.h"

namespace icl {
namespace {

constexpr double kCoefficientTolerance = 1e-12;

void RequirePositiveEps(double eps) {
  if (!(eps > 0.0)) {
    throw DomainError(fmt::format("eps must be positive, got {}", eps));
  }
}

void RequirePairwiseOrthogonal(std::span<const OrthonormalBasis> bases) {
  for (size_t k = 0; k < bases.size(); ++k) {
    for (size_t l = k + 1; l < bases.size(); ++l) {
      if (bases[k].ambient_dim() != bases[l].ambient_dim()) {
        throw ShapeError("bases differ in ambient dimension");
      }
      const double overlap =
          (bases[k].columns().transpose() * bases[l].columns()).norm();
      if (overlap > OrthonormalBasis::kTolerance) {
        throw NormalizationError(fmt::format(
            "bases {} and {} are not orthogonal (overlap {:.3e})", k, l, overlap));
      }
    }
  }
}

Matrix SubspaceCovariance(const Matrix& u, double eps) {
  Matrix sigma = u * u.transpose();
  sigma.diagonal().array() += eps;
  return sigma;
}

struct CovarianceBuilder {
  Matrix operator()(const SingleSubspace& m) const {
    return SubspaceCovariance(m.basis.columns(), m.eps);
  }
  Matrix operator()(const RotatedSubspace& m) const {
    return SubspaceCovariance(RotateBasis(m.base, m.orth, m.angles).columns(),
                              m.eps);
  }
  Matrix operator()(const MixtureK& m) const {
    const int d = m.bases.front().ambient_dim();
    Matrix sigma = Matrix::Zero(d, d);
    for (size_t k = 0; k < m.bases.size(); ++k) {
      sigma.noalias() +=
          m.weights[k] * m.bases[k].columns() * m.bases[k].columns().transpose();
    }
    // Σ γ_k = 1, so the ε I terms pool to ε I.
    sigma.diagonal().array() += m.eps;
    return sigma;
  }
  Matrix operator()(const SpanInterpolated& m) const {
    return SubspaceCovariance(
        SpanInterpolatedBasis(m.bases, m.coefficients).columns(), m.eps);
  }
  Matrix operator()(const ExplicitCovariance& m) const { return m.matrix; }
};

struct ModelValidator {
  void operator()(const SingleSubspace& m) const { RequirePositiveEps(m.eps); }
  void operator()(const RotatedSubspace& m) const {
    RequirePositiveEps(m.eps);
    if (m.base.ambient_dim() != m.orth.ambient_dim() ||
        m.base.rank() != m.orth.rank() || m.angles.size() != m.base.rank()) {
      throw ShapeError("rotated subspace: base, orth and angles disagree in shape");
    }
    const OrthonormalBasis pair[] = {m.base, m.orth};
    RequirePairwiseOrthogonal(pair);
  }
  void operator()(const MixtureK& m) const {
    RequirePositiveEps(m.eps);
    if (m.bases.empty() || m.bases.size() != m.weights.size()) {
      throw ShapeError("mixture: need one weight per basis and at least one basis");
    }
    double total = 0.0;
    for (double g : m.weights) {
      if (!(g >= 0.0)) throw DomainError("mixture weights must be non-negative");
      total += g;
    }
    if (std::abs(total - 1.0) > kCoefficientTolerance) {
      throw NormalizationError(
          fmt::format("mixture weights sum to {}, expected 1", total));
    }
    RequirePairwiseOrthogonal(m.bases);
  }
  void operator()(const SpanInterpolated& m) const {
    RequirePositiveEps(m.eps);
    SpanInterpolatedBasis(m.bases, m.coefficients);
  }
  void operator()(const ExplicitCovariance& m) const {
    const Matrix& s = m.matrix;
    if (s.rows() == 0 || s.rows() != s.cols()) {
      throw ShapeError("explicit covariance must be square and non-empty");
    }
    const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw DomainError("explicit covariance is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-12 * scale) {
      throw DomainError("explicit covariance is not positive semidefinite");
    }
  }
};

}  // namespace

OrthonormalBasis::OrthonormalBasis(Matrix columns) : columns_(std::move(columns)) {
  if (columns_.cols() < 1 || columns_.cols() > columns_.rows()) {
    throw InvalidDimensionError(fmt::format(
        "basis rank must satisfy 1 <= r <= d, got r={} d={}", columns_.cols(),
        columns_.rows()));
  }
  const Eigen::Index r = columns_.cols();
  const double defect =
      (columns_.transpose() * columns_ - Matrix::Identity(r, r)).norm();
  if (!(defect <= kTolerance)) {
    throw NormalizationError(
        fmt::format("columns are not orthonormal (defect {:.3e})", defect));
  }
}

PrincipalAngles::PrincipalAngles(std::vector<double> angles)
    : angles_(std::move(angles)) {
  for (double a : angles_) {
    if (!(a >= 0.0 && a <= std::numbers::pi / 2)) {
      throw DomainError(fmt::format("principal angle {} outside [0, pi/2]", a));
    }
  }
}

PrincipalAngles PrincipalAngles::Broadcast(double theta, int r) {
  if (r < 1) throw InvalidDimensionError("angle count must be positive");
  return PrincipalAngles(std::vector<double>(r, theta));
}

void ValidateCovarianceModel(const CovarianceModel& model) {
  std::visit(ModelValidator{}, model);
}

int AmbientDim(const CovarianceModel& model) {
  struct {
    int operator()(const SingleSubspace& m) const { return m.basis.ambient_dim(); }
    int operator()(const RotatedSubspace& m) const { return m.base.ambient_dim(); }
    int operator()(const MixtureK& m) const {
      return m.bases.empty() ? 0 : m.bases.front().ambient_dim();
    }
    int operator()(const SpanInterpolated& m) const {
      return m.bases.empty() ? 0 : m.bases.front().ambient_dim();
    }
    int operator()(const ExplicitCovariance& m) const {
      return static_cast<int>(m.matrix.rows());
    }
  } visitor;
  return std::visit(visitor, model);
}

Matrix HaarOrthogonal(int d, uint64_t seed) {
  if (d < 1) throw InvalidDimensionError("haar_orthogonal requires d >= 1");
  Engine engine = MakeEngine(seed);
  NormalSource normal(engine);
  const Matrix g = normal.Matrix(d, d);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix& r = qr.matrixQR();
  for (int j = 0; j < d; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

std::pair<OrthonormalBasis, OrthonormalBasis> SplitBasis(const Matrix& q, int r) {
  if (q.rows() != q.cols()) throw ShapeError("split_basis expects a square matrix");
  if (r < 1) throw InvalidDimensionError("split_basis requires r >= 1");
  if (2 * r > q.cols()) {
    throw RankTooLargeError(
        fmt::format("split_basis requires 2r <= d, got r={} d={}", r, q.cols()));
  }
  return {OrthonormalBasis(q.leftCols(r)), OrthonormalBasis(q.middleCols(r, r))};
}

OrthonormalBasis RotateBasis(const OrthonormalBasis& base,
                             const OrthonormalBasis& orth,
                             const PrincipalAngles& angles) {
  if (base.ambient_dim() != orth.ambient_dim() || base.rank() != orth.rank() ||
      angles.size() != base.rank()) {
    throw ShapeError("rotate_basis: base, orth and angles disagree in shape");
  }
  Matrix u = base.columns();
  for (int i = 0; i < base.rank(); ++i) {
    u.col(i) = std::cos(angles[i]) * base.columns().col(i) +
               std::sin(angles[i]) * orth.columns().col(i);
  }
  return OrthonormalBasis(std::move(u));
}

OrthonormalBasis SpanInterpolatedBasis(std::span<const OrthonormalBasis> bases,
                                       std::span<const double> coefficients) {
  if (bases.empty() || bases.size() != coefficients.size()) {
    throw ShapeError("span interpolation needs one coefficient per basis");
  }
  double norm2 = 0.0;
  for (double a : coefficients) norm2 += a * a;
  if (std::abs(norm2 - 1.0) >= kCoefficientTolerance) {
    throw NormalizationError(
        fmt::format("coefficients have squared norm {}, expected 1", norm2));
  }
  for (const auto& b : bases) {
    if (b.rank() != bases.front().rank()) {
      throw ShapeError("span interpolation needs bases of equal rank");
    }
  }
  RequirePairwiseOrthogonal(bases);
  Matrix u = coefficients[0] * bases[0].columns();
  for (size_t k = 1; k < bases.size(); ++k) u += coefficients[k] * bases[k].columns();
  return OrthonormalBasis(std::move(u));
}

OrthonormalBasis ConcatenateBases(std::span<const OrthonormalBasis> bases) {
  if (bases.empty()) throw ShapeError("nothing to concatenate");
  RequirePairwiseOrthogonal(bases);
  Eigen::Index total = 0;
  for (const auto& b : bases) total += b.rank();
  Matrix u(bases.front().ambient_dim(), total);
  Eigen::Index offset = 0;
  for (const auto& b : bases) {
    u.middleCols(offset, b.rank()) = b.columns();
    offset += b.rank();
  }
  return OrthonormalBasis(std::move(u));
}

Matrix BuildCovariance(const CovarianceModel& model) {
  ValidateCovarianceModel(model);
  return std::visit(CovarianceBuilder{}, model);
}

PrincipalAngles ComputePrincipalAngles(const OrthonormalBasis& u1,
                                       const OrthonormalBasis& u2) {
  if (u1.ambient_dim() != u2.ambient_dim() || u1.rank() != u2.rank()) {
    throw ShapeError("principal_angles: bases disagree in shape");
  }
  Eigen::JacobiSVD<Matrix> svd(u1.columns().transpose() * u2.columns());
  std::vector<double> angles;
  angles.reserve(u1.rank());
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
    angles.push_back(std::acos(std::clamp(svd.singularValues()[i], 0.0, 1.0)));
  }
  std::sort(angles.begin(), angles.end());
  return PrincipalAngles(std::move(angles));
}

double SubspaceError(const Matrix& u, const Matrix& u_hat) {
  if (u.rows() != u_hat.rows()) {
    throw ShapeError("subspace_error: ambient dimensions differ");
  }
  if (u.cols() == 0) {
    throw DivisionByZeroError("subspace_error: reference subspace has rank 0");
  }
  const double r1 = static_cast<double>(u.cols());
  const double r2 = static_cast<double>(u_hat.cols());
  const double cross = (u.transpose() * u_hat).squaredNorm();
  return std::max(0.0, (r1 + r2 - 2.0 * cross) / r1);
}

double SubspaceError(const OrthonormalBasis& u, const OrthonormalBasis& u_hat) {
  return SubspaceError(u.columns(), u_hat.columns());
}

double CovarianceAlignment(const Matrix& sigma_s, const Matrix& sigma_t) {
  if (sigma_s.rows() != sigma_t.rows() || sigma_s.cols() != sigma_t.cols()) {
    throw ShapeError("covariance alignment: shapes differ");
  }
  const double trace_s = sigma_s.trace();
  if (trace_s == 0.0) throw DivisionByZeroError("covariance alignment: Tr(Σ_s) = 0");
  return (sigma_s.transpose() * sigma_t).trace() / trace_s;
}

}  // namespace icl
