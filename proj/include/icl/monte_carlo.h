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

#ifndef ICL_MONTE_CARLO_H_
#define ICL_MONTE_CARLO_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icl/linear_attention.h"
#include "icl/random.h"
#include "icl/risk_analytics.h"

namespace icl {

enum class ModelSource {
  kOptimalTask,
  kOptimalMixture,
  kOptimalFeature,
  kLoraAnalytic,
  kExplicitWeights,
};

enum class SamplingMode {
  // Materialise every in-context example.
  kFullPrompt,
  // Draw Z_MᵀZ_M directly from its Wishart law (Bartlett decomposition);
  // exact in distribution, needs m ≥ d+1.
  kGram,
  // kGram when m ≥ 4(d+1), else kFullPrompt.
  kAuto,
};

std::string ToString(ModelSource source);
std::string ToString(SamplingMode mode);

struct SimulationPlan {
  ShiftScenario scenario;
  ModelSource model_source = ModelSource::kOptimalTask;
  int64_t trials = 1;
  uint64_t base_seed = 0;
  SamplingMode sampling = SamplingMode::kAuto;
  // 0 means hardware concurrency; results do not depend on it.
  int threads = 1;
  // kExplicitWeights only.
  std::optional<AttentionWeights> explicit_weights;
  std::optional<LoraAdapters> explicit_adapters;
  // kLoraAnalytic: U_{s,⊥}; defaults to the orth basis of a rotated test model.
  std::optional<OrthonormalBasis> lora_target;
  LoraScale lora_scale = LoraScale::kBalanced;
};

struct RiskEstimate {
  double mean = 0.0;
  double std_error = 0.0;  // sample std / √T
  int64_t trials = 0;
  std::optional<double> analytic_exact;
  std::optional<double> analytic_asymptotic;
};

// Gaussian (or Gaussian-mixture) sampler prepared once for a covariance model.
class ModelSampler {
 public:
  explicit ModelSampler(const CovarianceModel& model);
  // Isotropic N(0, I_d).
  static ModelSampler Isotropic(int d);

  // Subspace variants: U g + √ε z. MixtureK picks component k w.p. γ_k first.
  Vector Sample(NormalSource& normal) const;
  int dim() const { return dim_; }
  bool is_mixture() const { return components_.size() > 1; }

 private:
  ModelSampler() = default;
  struct Component {
    Matrix factor;  // d×q
    double sqrt_eps = 0.0;
  };
  std::vector<Component> components_;
  std::vector<double> cumulative_;
  int dim_ = 0;
};

Vector SampleTaskVector(const CovarianceModel& model, Engine& engine);

// `feature_cov` null means isotropic features. The query label carries its
// own noise draw.
PromptBatch SamplePrompt(const Vector& w, int m, double noise_sd,
                         const CovarianceModel* feature_cov, Engine& engine);

// Draws prompts of one scenario: w from the task model (N(0, I) under feature
// shift) and features from the feature model (N(0, I) under task shift).
class PromptSampler {
 public:
  PromptSampler(ShiftKind kind, const CovarianceModel& test_cov, double noise_sd, int m,
                SamplingMode mode);

  PromptBatch SampleBatch(NormalSource& normal) const;
  // h = Z_MᵀZ_M value_dir for a fresh prompt.
  PromptSummary SampleSummary(const Vector& value_dir, NormalSource& normal) const;
  SamplingMode resolved_mode() const { return mode_; }
  int dim() const { return d_; }

 private:
  Vector SampleQuery(NormalSource& normal) const;

  int d_;
  int m_;
  double noise_sd_;
  SamplingMode mode_;
  ModelSampler task_;
  ModelSampler features_;
  bool isotropic_features_;
  Matrix feature_root_;  // Σ_x^{1/2}-type factor, gram mode only
};

SamplingMode ResolveSamplingMode(SamplingMode requested, int d, int m);

RiskEstimate EstimateRisk(const SimulationPlan& plan);

// Row-major over (θ, length) with n = m = length; the template's test model
// must be a RotatedSubspace. Cell c uses seed DeriveSeed(base_seed, c).
std::vector<std::vector<RiskEstimate>> PhaseSweep(std::span<const double> theta_grid,
                                                  std::span<const int> length_grid,
                                                  const SimulationPlan& plan_template);

}  // namespace icl

#endif  // ICL_MONTE_CARLO_H_
