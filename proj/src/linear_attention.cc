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

#include <cmath>

#include <fmt/format.h>

#include "icl/errors.h"

namespace icl {
namespace {

void RequireNonEmpty(int norm_len) {
  if (norm_len <= 0) throw EmptyPromptError("prediction needs at least one example");
}

void RequireMatchingDim(const AttentionWeights& weights, int d) {
  weights.Validate();
  if (weights.dim() != d) {
    throw ShapeError(fmt::format("weights have d={}, prompt has d={}", weights.dim(), d));
  }
}

// Z_Mᵀ Z_M v for v ∈ R^{d+1}, without materialising Z_M.
Vector GramTimes(const PromptBatch& batch, const Vector& v) {
  const int d = batch.dim();
  const Vector u = batch.x * v.head(d) + batch.y * v[d];
  Vector out(d + 1);
  out.head(d).noalias() = batch.x.transpose() * u;
  out[d] = batch.y.dot(u);
  return out;
}

Vector QueryVector(const Vector& x_query) {
  Vector q = Vector::Zero(x_query.size() + 1);
  q.head(x_query.size()) = x_query;
  return q;
}

void RequireSpd(const Matrix& sigma) {
  if (sigma.rows() == 0 || sigma.rows() != sigma.cols()) {
    throw ShapeError("covariance must be square and non-empty");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma, Eigen::EigenvaluesOnly);
  const double hi = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (!(eig.eigenvalues().minCoeff() > 1e-14 * hi)) {
    throw SingularCovarianceError(fmt::format(
        "covariance is singular (min eigenvalue {:.3e})", eig.eigenvalues().minCoeff()));
  }
}

void RequireTrainingArgs(double noise_sd, int n) {
  if (n < 1) throw DomainError(fmt::format("training prompt length must be >= 1, got {}", n));
  if (!(noise_sd >= 0.0)) throw DomainError("noise_sd must be non-negative");
}

Matrix Symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

}  // namespace

void AttentionWeights::Validate() const {
  const Eigen::Index s = wq.rows();
  if (s < 2 || wq.cols() != s || wk.rows() != s || wk.cols() != s || wv.rows() != s ||
      wv.cols() != s || p.size() != s) {
    throw ShapeError("attention weights must all be (d+1)×(d+1) with p of size d+1");
  }
}

void LoraAdapters::Validate() const {
  if (b1.rows() != b2.rows() || b1.cols() != b2.cols() || b1.cols() < 1) {
    throw ShapeError("adapter factors must share a (d+1)×k shape with k >= 1");
  }
}

void PromptBatch::Validate() const {
  if (norm_len != x.rows()) {
    throw ShapeError(fmt::format("norm_len {} differs from example count {}", norm_len,
                                 x.rows()));
  }
  if (y.size() != x.rows()) throw ShapeError("label count differs from example count");
  if (x.rows() > 0 && x.cols() != x_query.size()) {
    throw ShapeError("query dimension differs from example dimension");
  }
}

MaskedPrompt EncodeMaskedPrompt(const PromptBatch& batch) {
  batch.Validate();
  const Eigen::Index m = batch.x.rows();
  const Eigen::Index d = batch.x_query.size();
  MaskedPrompt out;
  out.z = Matrix::Zero(m + 1, d + 1);
  if (m > 0) {
    out.z.topLeftCorner(m, d) = batch.x;
    out.z.col(d).head(m) = batch.y;
  }
  out.z_query = QueryVector(batch.x_query);
  return out;
}

PromptSummary Summarize(const PromptBatch& batch, const Vector& value_dir) {
  batch.Validate();
  if (value_dir.size() != batch.dim() + 1) throw ShapeError("value direction must have d+1 entries");
  PromptSummary out;
  out.h = GramTimes(batch, value_dir);
  out.x_query = batch.x_query;
  out.y_query = batch.y_query;
  out.norm_len = batch.norm_len;
  return out;
}

double PredictFull(const AttentionWeights& weights, const PromptBatch& batch) {
  batch.Validate();
  RequireNonEmpty(batch.norm_len);
  RequireMatchingDim(weights, batch.dim());
  const Vector h = GramTimes(batch, weights.wv * weights.p);
  const Vector q = QueryVector(batch.x_query);
  return (weights.wq.transpose() * q).dot(weights.wk.transpose() * h) / batch.norm_len;
}

double PredictFull(const AttentionWeights& weights, const PromptSummary& prompt) {
  RequireNonEmpty(prompt.norm_len);
  RequireMatchingDim(weights, static_cast<int>(prompt.x_query.size()));
  if (prompt.h.size() != weights.dim() + 1) throw ShapeError("summary h must have d+1 entries");
  const Vector& h = prompt.h;
  const Vector q = QueryVector(prompt.x_query);
  return (weights.wq.transpose() * q).dot(weights.wk.transpose() * h) / prompt.norm_len;
}

double PredictReduced(const Matrix& a, const PromptBatch& batch) {
  batch.Validate();
  RequireNonEmpty(batch.norm_len);
  if (a.rows() != batch.dim() || a.cols() != batch.dim()) {
    throw ShapeError("reduced kernel must be d×d");
  }
  return batch.x_query.dot(a * (batch.x.transpose() * batch.y)) / batch.norm_len;
}

double PredictLora(const AttentionWeights& weights, const LoraAdapters& adapters,
                   const PromptBatch& batch) {
  batch.Validate();
  RequireNonEmpty(batch.norm_len);
  RequireMatchingDim(weights, batch.dim());
  adapters.Validate();
  if (adapters.b1.rows() != weights.wq.rows()) throw ShapeError("adapter rows differ from d+1");
  const Vector h = GramTimes(batch, weights.wv * weights.p);
  const Vector q = QueryVector(batch.x_query);
  const double base = (weights.wq.transpose() * q).dot(weights.wk.transpose() * h);
  const double low_rank = (adapters.b2.transpose() * q).dot(adapters.b1.transpose() * h);
  return (base + low_rank) / batch.norm_len;
}

double PredictLora(const AttentionWeights& weights, const LoraAdapters& adapters,
                   const PromptSummary& prompt) {
  RequireNonEmpty(prompt.norm_len);
  RequireMatchingDim(weights, static_cast<int>(prompt.x_query.size()));
  adapters.Validate();
  if (adapters.b1.rows() != weights.wq.rows()) throw ShapeError("adapter rows differ from d+1");
  if (prompt.h.size() != weights.dim() + 1) throw ShapeError("summary h must have d+1 entries");
  const Vector& h = prompt.h;
  const Vector q = QueryVector(prompt.x_query);
  const double base = (weights.wq.transpose() * q).dot(weights.wk.transpose() * h);
  const double low_rank = (adapters.b2.transpose() * q).dot(adapters.b1.transpose() * h);
  return (base + low_rank) / prompt.norm_len;
}

AttentionWeights AssembleWeights(const Matrix& a) {
  if (a.rows() < 1 || a.rows() != a.cols()) throw ShapeError("A must be square, d >= 1");
  const Eigen::Index d = a.rows();
  AttentionWeights w;
  w.wq = Matrix::Zero(d + 1, d + 1);
  w.wq.topLeftCorner(d, d) = a;
  w.wk = Matrix::Identity(d + 1, d + 1);
  w.wv = Matrix::Identity(d + 1, d + 1);
  w.p = Vector::Unit(d + 1, d);
  return w;
}

Matrix ShiftedInverseByEigen(const Matrix& sigma, double c, double k) {
  RequireSpd(sigma);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
  const Vector& lambda = eig.eigenvalues();
  Vector mapped(lambda.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    mapped[i] = lambda[i] / (c * lambda[i] + k);
  }
  const Matrix& v = eig.eigenvectors();
  return Symmetrized(v * mapped.asDiagonal() * v.transpose());
}

OptimalWeights OptimalWeightsTask(const Matrix& sigma_train, double noise_sd, int n) {
  RequireTrainingArgs(noise_sd, n);
  RequireSpd(sigma_train);
  const double m_s = sigma_train.trace() + noise_sd * noise_sd;
  // ((n+1)/n Σ + M_s/n I)⁻¹ Σ avoids forming Σ⁻¹ when ε is tiny.
  Matrix lhs = (static_cast<double>(n + 1) / n) * sigma_train;
  lhs.diagonal().array() += m_s / n;
  OptimalWeights out;
  out.a = Symmetrized(lhs.ldlt().solve(sigma_train));
  out.m_s = m_s;
  out.weights = AssembleWeights(out.a);
  return out;
}

OptimalWeights OptimalWeightsMixture(const MixtureK& mixture, double noise_sd, int n) {
  return OptimalWeightsTask(BuildCovariance(mixture), noise_sd, n);
}

OptimalWeights OptimalWeightsFeature(const Matrix& sigma_feat, double noise_sd, int n) {
  RequireTrainingArgs(noise_sd, n);
  RequireSpd(sigma_feat);
  const Eigen::Index d = sigma_feat.rows();
  const double m_s = sigma_feat.trace() + noise_sd * noise_sd;
  Matrix lhs = (static_cast<double>(n + 1) / n) * sigma_feat;
  lhs.diagonal().array() += m_s / n;
  OptimalWeights out;
  out.a = Symmetrized(lhs.ldlt().solve(Matrix::Identity(d, d)));
  out.m_s = m_s;
  out.weights = AssembleWeights(out.a);
  return out;
}

double LoraLambda(int n, double eps, double m_s, LoraScale scale) {
  if (n < 1) throw DomainError("prompt length must be >= 1");
  if (!(eps >= 0.0)) throw DomainError("eps must be non-negative");
  const double nn = n;
  if (scale == LoraScale::kAsPrinted) {
    return nn * (1.0 + eps) / ((nn + 1.0) * eps + m_s);
  }
  const double nu1 = nn * (1.0 + eps) / ((nn + 1.0) * (1.0 + eps) + m_s);
  const double nu2 = nn * eps / ((nn + 1.0) * eps + m_s);
  const double lambda = nu1 - nu2;
  if (lambda < 0.0) {
    throw InvalidScaleError(fmt::format("adapter scale is negative ({})", lambda));
  }
  return lambda;
}

LoraAdapters LoraAnalyticAdapters(const OrthonormalBasis& u_sperp, int n, double eps,
                                  double m_s, LoraScale scale) {
  const double lambda = LoraLambda(n, eps, m_s, scale);
  const int d = u_sperp.ambient_dim();
  LoraAdapters out;
  out.b1 = Matrix::Zero(d + 1, u_sperp.rank());
  out.b1.topRows(d) = std::sqrt(lambda) * u_sperp.columns();
  out.b2 = out.b1;
  return out;
}

std::optional<Matrix> ReducedKernel(const AttentionWeights& weights,
                                    const LoraAdapters* adapters) {
  weights.Validate();
  const int d = weights.dim();
  Matrix full = weights.wq * weights.wk.transpose();
  if (adapters != nullptr) {
    adapters->Validate();
    if (adapters->b1.rows() != d + 1) throw ShapeError("adapter rows differ from d+1");
    full += adapters->b2 * adapters->b1.transpose();
  }
  // Needs W_V p = c e_{d+1} and no coupling from the query to the label row.
  const Vector v = weights.wv * weights.p;
  if (v.head(d).lpNorm<Eigen::Infinity>() != 0.0) return std::nullopt;
  if (full.col(d).head(d).lpNorm<Eigen::Infinity>() != 0.0) return std::nullopt;
  return Matrix(v[d] * full.topLeftCorner(d, d));
}

Matrix AdaptedKernel(const AttentionWeights& weights, const LoraAdapters& adapters) {
  weights.Validate();
  adapters.Validate();
  const int d = weights.dim();
  const Matrix full = weights.wq * weights.wk.transpose() +
                      adapters.b2 * adapters.b1.transpose();
  return full.topLeftCorner(d, d);
}

}  // namespace icl
