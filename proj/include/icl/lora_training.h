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

#ifndef ICL_LORA_TRAINING_H_
#define ICL_LORA_TRAINING_H_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "icl/linear_attention.h"
#include "icl/monte_carlo.h"

namespace icl {

struct TrainConfig {
  int adapter_rank = 5;
  double learning_rate = 2e-3;
  int batch_size = 32;
  int iterations = 20000;
  int prompt_length = 200;
  double init_scale = 0.01;
  CovarianceModel finetune_cov;
  double noise_sd = 0.0;
  uint64_t base_seed = 0;
  int snapshot_stride = 100;
  // Stop once the error to `target` drops below this; ≤ 0 disables.
  double early_stop_error = 0.05;
  // U_{s,⊥}; errors use the top target->rank() singular vectors.
  std::optional<OrthonormalBasis> target;
  // U_{2r}; errors use the top wide_target->rank() singular vectors.
  std::optional<OrthonormalBasis> wide_target;
  SamplingMode sampling = SamplingMode::kAuto;

  void Validate(int d) const;
};

struct TrainRecord {
  int64_t iteration = 0;
  double loss = 0.0;           // minibatch loss before the update
  double error_to_target = 0.0;  // NaN without a target
  double error_to_wide = 0.0;    // NaN without a wide target
};

struct AdapterSnapshot {
  int64_t iteration = 0;
  LoraAdapters adapters;
};

struct TrainTrajectory {
  std::vector<TrainRecord> records;
  std::vector<AdapterSnapshot> snapshots;
  LoraAdapters final_adapters;
  int64_t iterations_run = 0;
  bool early_stopped = false;
};

struct LossAndGradient {
  double loss = 0.0;  // mean of (y_q − ŷ)² over the batch
  Matrix grad_b1;
  Matrix grad_b2;
};

// Exact gradients of the bilinear adapted predictor:
//   ∂ŷ/∂B₂ = (1/m) q (B₁ᵀh)ᵀ,  ∂ŷ/∂B₁ = (1/m) h (B₂ᵀq)ᵀ,
// with q = [x_q; 0] and h = Z_MᵀZ_M W_V p.
LossAndGradient LoraLossAndGradient(const AttentionWeights& weights,
                                    const LoraAdapters& adapters,
                                    std::span<const PromptSummary> batch);
LossAndGradient LoraLossAndGradient(const AttentionWeights& weights,
                                    const LoraAdapters& adapters,
                                    std::span<const PromptBatch> batch);

// Top block: Haar frame × init_scale; bottom row zero; b2 = b1.
LoraAdapters InitAdapters(int d, int k, double init_scale, uint64_t seed);

// Plain gradient descent on fresh minibatches; `pretrained` stays untouched.
TrainTrajectory TrainLora(const AttentionWeights& pretrained, const TrainConfig& cfg);

struct AdapterSpectrum {
  Vector b1;  // descending
  Vector b2;
};
AdapterSpectrum ComputeAdapterSpectrum(const LoraAdapters& adapters);

// Top-r left singular vectors of a factor's top d×k block.
Matrix TopLeftSingularFrame(const Matrix& factor, int r);

struct AdapterAlignment {
  double error = 0.0;           // max over both factors
  bool rank_deficient = false;  // σ_r ≤ 1e-8 σ_1 in some factor
};
AdapterAlignment VerifyLearnedVsAnalytic(const LoraAdapters& trained,
                                         const OrthonormalBasis& u_sperp, int r);

}  // namespace icl

#endif  // ICL_LORA_TRAINING_H_
