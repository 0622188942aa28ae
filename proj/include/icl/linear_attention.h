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

#ifndef ICL_LINEAR_ATTENTION_H_
#define ICL_LINEAR_ATTENTION_H_

#include <optional>

#include "icl/subspace_geometry.h"

namespace icl {

// W_Q, W_K, W_V are (d+1)×(d+1); p has d+1 entries.
struct AttentionWeights {
  Matrix wq;
  Matrix wk;
  Matrix wv;
  Vector p;

  int dim() const { return static_cast<int>(wq.rows()) - 1; }
  // Throws ShapeError unless all four tensors agree on one d ≥ 1.
  void Validate() const;
};

// B_1, B_2 are (d+1)×k.
struct LoraAdapters {
  Matrix b1;
  Matrix b2;

  int rank() const { return static_cast<int>(b1.cols()); }
  void Validate() const;
};

// In-context examples (rows of x, labels y), query and hidden query label.
struct PromptBatch {
  Matrix x;
  Vector y;
  Vector x_query;
  double y_query = 0.0;
  int norm_len = 0;

  int dim() const { return static_cast<int>(x_query.size()); }
  void Validate() const;
};

// What the predictor reads from a prompt once W_V p is fixed:
// h = Z_MᵀZ_M W_V p. Only valid with weights sharing that W_V p.
struct PromptSummary {
  Vector h;  // d+1 entries
  Vector x_query;
  double y_query = 0.0;
  int norm_len = 0;
};

struct MaskedPrompt {
  Matrix z;        // (m+1)×(d+1), last row zero
  Vector z_query;  // [x_q; 0]
};

MaskedPrompt EncodeMaskedPrompt(const PromptBatch& batch);
PromptSummary Summarize(const PromptBatch& batch, const Vector& value_dir);

// (1/m) z_qᵀ W_Q W_Kᵀ Z_Mᵀ Z_M W_V p.
double PredictFull(const AttentionWeights& weights, const PromptBatch& batch);
double PredictFull(const AttentionWeights& weights, const PromptSummary& prompt);

// (1/m) x_qᵀ A Xᵀ y.
double PredictReduced(const Matrix& a, const PromptBatch& batch);

// (1/m) z_qᵀ (W_Q W_Kᵀ + B_2 B_1ᵀ) Z_Mᵀ Z_M W_V p.
double PredictLora(const AttentionWeights& weights, const LoraAdapters& adapters,
                   const PromptBatch& batch);
double PredictLora(const AttentionWeights& weights, const LoraAdapters& adapters,
                   const PromptSummary& prompt);

// W_K = W_V = I, W_Q = [[A, 0], [0, 0]], p = e_{d+1}.
AttentionWeights AssembleWeights(const Matrix& a);

struct OptimalWeights {
  AttentionWeights weights;
  Matrix a;
  double m_s = 0.0;  // Tr(Σ) + σ²
};

// (c I + k Σ⁻¹)⁻¹ through the eigendecomposition of Σ: eigenvalues λ/(cλ + k).
Matrix ShiftedInverseByEigen(const Matrix& sigma, double c, double k);

// A = ((n+1)/n I + M_s/n Σ⁻¹)⁻¹.
OptimalWeights OptimalWeightsTask(const Matrix& sigma_train, double noise_sd, int n);
// Same with Σ the mixture second moment.
OptimalWeights OptimalWeightsMixture(const MixtureK& mixture, double noise_sd, int n);
// A = ((n+1)/n Σ + M_s/n I)⁻¹ = Σ^{-1/2} Ā Σ^{-1/2}.
OptimalWeights OptimalWeightsFeature(const Matrix& sigma_feat, double noise_sd, int n);

// Scale of the analytic adapters.
enum class LoraScale {
  // Λ_r = ν₁ − ν₂: equal eigenvalues on the U_s and U_{s,⊥} blocks.
  kBalanced,
  // Λ_r = n(1+ε)/((n+1)ε + M_s).
  kAsPrinted,
};

double LoraLambda(int n, double eps, double m_s, LoraScale scale);

// B_1 = B_2 = [U_{s,⊥} Λ_r^{1/2}; 0ᵀ].
LoraAdapters LoraAnalyticAdapters(const OrthonormalBasis& u_sperp, int n, double eps,
                                  double m_s, LoraScale scale = LoraScale::kBalanced);

// The d×d kernel A with ŷ = (1/m) x_qᵀ A Xᵀ y, when the weights (and
// adapters, if given) have that reduced form; nullopt otherwise.
std::optional<Matrix> ReducedKernel(const AttentionWeights& weights,
                                    const LoraAdapters* adapters = nullptr);

// Top-left d×d block of W_Q W_Kᵀ + B_2 B_1ᵀ, i.e. the effective A.
Matrix AdaptedKernel(const AttentionWeights& weights, const LoraAdapters& adapters);

}  // namespace icl

#endif  // ICL_LINEAR_ATTENTION_H_
