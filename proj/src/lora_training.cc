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

#include "icl/lora_training.h"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "icl/errors.h"
#include "icl/random.h"

namespace icl {
namespace {

constexpr uint64_t kInitTag = 1;
constexpr uint64_t kBatchTag = 2;

double FrameError(const LoraAdapters& adapters, const OrthonormalBasis& target) {
  const int r = target.rank();
  return std::max(SubspaceError(target.columns(), TopLeftSingularFrame(adapters.b1, r)),
                  SubspaceError(target.columns(), TopLeftSingularFrame(adapters.b2, r)));
}

}  // namespace

void TrainConfig::Validate(int d) const {
  if (adapter_rank < 1 || adapter_rank > d) {
    throw ConfigurationError(fmt::format("adapter_rank must lie in [1, d={}]", d));
  }
  if (!(learning_rate >= 0.0)) throw ConfigurationError("learning_rate must be non-negative");
  if (batch_size < 1) throw ConfigurationError("batch_size must be >= 1");
  if (iterations < 1) throw ConfigurationError("iterations must be >= 1");
  if (prompt_length < 1) throw ConfigurationError("prompt_length must be >= 1");
  if (!(init_scale > 0.0)) throw ConfigurationError("init_scale must be positive");
  if (!(noise_sd >= 0.0)) throw ConfigurationError("noise_sd must be non-negative");
  if (snapshot_stride < 1) throw ConfigurationError("snapshot_stride must be >= 1");
  ValidateCovarianceModel(finetune_cov);
  if (AmbientDim(finetune_cov) != d) {
    throw ConfigurationError("fine-tuning model dimension differs from the weights");
  }
  for (const auto* t : {&target, &wide_target}) {
    if (*t && (*t)->ambient_dim() != d) throw ConfigurationError("target dimension differs");
    if (*t && (*t)->rank() > adapter_rank) {
      throw ConfigurationError("target rank exceeds adapter rank");
    }
  }
}

LossAndGradient LoraLossAndGradient(const AttentionWeights& weights,
                                    const LoraAdapters& adapters,
                                    std::span<const PromptSummary> batch) {
  weights.Validate();
  adapters.Validate();
  if (batch.empty()) throw EmptyPromptError("gradient needs a non-empty batch");
  const int d = weights.dim();
  if (adapters.b1.rows() != d + 1) throw ShapeError("adapter rows differ from d+1");
  const Matrix kernel = weights.wq * weights.wk.transpose();
  LossAndGradient out;
  out.grad_b1 = Matrix::Zero(adapters.b1.rows(), adapters.b1.cols());
  out.grad_b2 = Matrix::Zero(adapters.b2.rows(), adapters.b2.cols());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Vector q = Vector::Zero(d + 1);
  for (const PromptSummary& s : batch) {
    if (s.norm_len <= 0) throw EmptyPromptError("prediction needs at least one example");
    if (s.h.size() != d + 1 || s.x_query.size() != d) throw ShapeError("summary shape mismatch");
    q.head(d) = s.x_query;
    const Vector b1h = adapters.b1.transpose() * s.h;
    const Vector b2q = adapters.b2.transpose() * q;
    const double inv_m = 1.0 / s.norm_len;
    const double pred = inv_m * (q.dot(kernel * s.h) + b2q.dot(b1h));
    const double resid = pred - s.y_query;
    out.loss += inv_b * resid * resid;
    const double g = 2.0 * inv_b * resid * inv_m;
    out.grad_b2.noalias() += g * q * b1h.transpose();
    out.grad_b1.noalias() += g * s.h * b2q.transpose();
  }
  return out;
}

LossAndGradient LoraLossAndGradient(const AttentionWeights& weights,
                                    const LoraAdapters& adapters,
                                    std::span<const PromptBatch> batch) {
  weights.Validate();
  const Vector value_dir = weights.wv * weights.p;
  std::vector<PromptSummary> summaries;
  summaries.reserve(batch.size());
  for (const PromptBatch& b : batch) summaries.push_back(Summarize(b, value_dir));
  return LoraLossAndGradient(weights, adapters, std::span<const PromptSummary>(summaries));
}

LoraAdapters InitAdapters(int d, int k, double init_scale, uint64_t seed) {
  if (d < 1) throw InvalidDimensionError("init_adapters needs d >= 1");
  if (k < 1 || k > d) {
    throw InvalidDimensionError(fmt::format("adapter rank k={} must lie in [1, d={}]", k, d));
  }
  LoraAdapters out;
  out.b1 = Matrix::Zero(d + 1, k);
  out.b1.topRows(d) = init_scale * HaarOrthogonal(d, seed).leftCols(k);
  out.b2 = out.b1;
  return out;
}

TrainTrajectory TrainLora(const AttentionWeights& pretrained, const TrainConfig& cfg) {
  pretrained.Validate();
  const int d = pretrained.dim();
  cfg.Validate(d);
  const PromptSampler sampler(ShiftKind::kTask, cfg.finetune_cov, cfg.noise_sd,
                              cfg.prompt_length, cfg.sampling);
  const Vector value_dir = pretrained.wv * pretrained.p;
  const uint64_t batch_seed = DeriveSeed(cfg.base_seed, kBatchTag);
  constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

  TrainTrajectory traj;
  LoraAdapters adapters =
      InitAdapters(d, cfg.adapter_rank, cfg.init_scale, DeriveSeed(cfg.base_seed, kInitTag));
  std::vector<PromptSummary> batch(cfg.batch_size);
  for (int64_t it = 0; it < cfg.iterations; ++it) {
    Engine engine = MakeEngine(batch_seed, static_cast<uint64_t>(it));
    NormalSource normal(engine);
    for (auto& s : batch) s = sampler.SampleSummary(value_dir, normal);
    const LossAndGradient lg =
        LoraLossAndGradient(pretrained, adapters, std::span<const PromptSummary>(batch));
    if (!std::isfinite(lg.loss) || !lg.grad_b1.allFinite() || !lg.grad_b2.allFinite()) {
      throw DivergenceError(fmt::format("LoRA training diverged at iteration {}", it), it);
    }
    TrainRecord rec;
    rec.iteration = it;
    rec.loss = lg.loss;
    rec.error_to_target = cfg.target ? FrameError(adapters, *cfg.target) : kNan;
    rec.error_to_wide = cfg.wide_target ? FrameError(adapters, *cfg.wide_target) : kNan;
    traj.records.push_back(rec);
    if (it % cfg.snapshot_stride == 0) traj.snapshots.push_back({it, adapters});
    if (cfg.target && cfg.early_stop_error > 0.0 && rec.error_to_target < cfg.early_stop_error) {
      traj.early_stopped = true;
      break;
    }
    adapters.b1 -= cfg.learning_rate * lg.grad_b1;
    adapters.b2 -= cfg.learning_rate * lg.grad_b2;
    traj.iterations_run = it + 1;
  }
  traj.final_adapters = adapters;
  if (traj.snapshots.empty() || traj.snapshots.back().iteration != traj.iterations_run) {
    traj.snapshots.push_back({traj.iterations_run, adapters});
  }
  return traj;
}

AdapterSpectrum ComputeAdapterSpectrum(const LoraAdapters& adapters) {
  adapters.Validate();
  const Eigen::Index d = adapters.b1.rows() - 1;
  AdapterSpectrum out;
  out.b1 = Eigen::JacobiSVD<Matrix>(adapters.b1.topRows(d)).singularValues();
  out.b2 = Eigen::JacobiSVD<Matrix>(adapters.b2.topRows(d)).singularValues();
  return out;
}

Matrix TopLeftSingularFrame(const Matrix& factor, int r) {
  const Eigen::Index d = factor.rows() - 1;
  if (r < 1 || r > factor.cols() || r > d) {
    throw InvalidDimensionError(fmt::format("frame rank {} exceeds factor shape", r));
  }
  Eigen::JacobiSVD<Matrix> svd(factor.topRows(d), Eigen::ComputeThinU);
  return svd.matrixU().leftCols(r);
}

AdapterAlignment VerifyLearnedVsAnalytic(const LoraAdapters& trained,
                                         const OrthonormalBasis& u_sperp, int r) {
  trained.Validate();
  if (u_sperp.rank() != r) throw ShapeError("target rank differs from r");
  if (trained.b1.rows() != u_sperp.ambient_dim() + 1) throw ShapeError("adapter rows differ from d+1");
  AdapterAlignment out;
  const AdapterSpectrum spec = ComputeAdapterSpectrum(trained);
  for (const Vector* s : {&spec.b1, &spec.b2}) {
    if (s->size() < r || (*s)[0] == 0.0 || (*s)[r - 1] <= 1e-8 * (*s)[0]) {
      out.rank_deficient = true;
    }
  }
  out.error = std::max(SubspaceError(u_sperp.columns(), TopLeftSingularFrame(trained.b1, r)),
                       SubspaceError(u_sperp.columns(), TopLeftSingularFrame(trained.b2, r)));
  return out;
}

}  // namespace icl
