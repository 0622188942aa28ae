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

#include "icl/monte_carlo.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include <boost/random/uniform_01.hpp>
#include <fmt/format.h>

#include "icl/errors.h"

namespace icl {
namespace {

constexpr int64_t kBlockSize = 1024;

struct BlockStats {
  int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;
};

// Neumaier-compensated sum.
class CompensatedSum {
 public:
  void Add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double Value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

BlockStats SummarizeBlock(const std::vector<double>& losses) {
  BlockStats s;
  s.count = static_cast<int64_t>(losses.size());
  CompensatedSum sum;
  for (double l : losses) sum.Add(l);
  s.mean = sum.Value() / static_cast<double>(s.count);
  CompensatedSum sq;
  for (double l : losses) sq.Add((l - s.mean) * (l - s.mean));
  s.m2 = sq.Value();
  return s;
}

Matrix SymmetricFactor(const Matrix& sigma) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

// Basis of the test subspace for the subspace-built variants.
std::optional<Matrix> SubspaceOf(const CovarianceModel& model) {
  if (const auto* s = std::get_if<SingleSubspace>(&model)) return s->basis.columns();
  if (const auto* s = std::get_if<RotatedSubspace>(&model)) {
    return RotateBasis(s->base, s->orth, s->angles).columns();
  }
  if (const auto* s = std::get_if<SpanInterpolated>(&model)) {
    return SpanInterpolatedBasis(s->bases, s->coefficients).columns();
  }
  return std::nullopt;
}

bool InSpan(const Matrix& u, const Matrix& span) {
  return (u - span * (span.transpose() * u)).norm() < 1e-8;
}

struct ResolvedModel {
  AttentionWeights weights;
  std::optional<LoraAdapters> adapters;
  std::optional<double> asymptotic;
};

ResolvedModel ResolveModel(const SimulationPlan& plan) {
  const ShiftScenario& sc = plan.scenario;
  const bool feature = sc.kind == ShiftKind::kFeature;
  const bool mixture_train = std::holds_alternative<MixtureK>(sc.train_cov);
  const double sigma = sc.noise_sd;
  const int n = sc.n_train;
  const int m = sc.m_test;
  const std::optional<Matrix> test_basis = SubspaceOf(sc.test_cov);
  ResolvedModel out;
  switch (plan.model_source) {
    case ModelSource::kOptimalTask: {
      if (feature) throw ConfigurationError("optimal-task weights need a task-shift scenario");
      if (mixture_train) {
        throw ConfigurationError("optimal-task needs a non-mixture training model; use optimal-mixture");
      }
      out.weights = OptimalWeightsTask(BuildCovariance(sc.train_cov), sigma, n).weights;
      const auto* train = std::get_if<SingleSubspace>(&sc.train_cov);
      if (train != nullptr && test_basis && test_basis->cols() == train->basis.rank()) {
        const PrincipalAngles angles =
            ComputePrincipalAngles(train->basis, OrthonormalBasis(*test_basis));
        out.asymptotic = TaskRiskAsymptotic(angles, sigma);
      }
      break;
    }
    case ModelSource::kOptimalMixture: {
      if (feature) throw ConfigurationError("optimal-mixture weights need a task-shift scenario");
      const auto* mix = std::get_if<MixtureK>(&sc.train_cov);
      if (mix == nullptr) throw ConfigurationError("optimal-mixture needs a MixtureK training model");
      out.weights = OptimalWeightsMixture(*mix, sigma, n).weights;
      const int k = static_cast<int>(mix->bases.size());
      const int r = mix->bases.front().rank();
      bool equal = true;
      for (size_t i = 0; i < mix->bases.size(); ++i) {
        equal = equal && mix->bases[i].rank() == r &&
                std::abs(mix->weights[i] - 1.0 / k) < 1e-12;
      }
      if (equal && test_basis && test_basis->cols() == r &&
          InSpan(*test_basis, ConcatenateBases(mix->bases).columns())) {
        out.asymptotic = MixtureKRiskEps0(k, r, sigma, n, m);
      }
      break;
    }
    case ModelSource::kOptimalFeature: {
      if (!feature) throw ConfigurationError("optimal-feature weights need a feature-shift scenario");
      if (mixture_train) throw ConfigurationError("feature covariance must be Gaussian, not a mixture");
      out.weights = OptimalWeightsFeature(BuildCovariance(sc.train_cov), sigma, n).weights;
      const auto* train = std::get_if<SingleSubspace>(&sc.train_cov);
      const auto* test = std::get_if<RotatedSubspace>(&sc.test_cov);
      if (train != nullptr && test != nullptr && train->eps == test->eps &&
          train->basis.columns() == test->base.columns()) {
        out.asymptotic = FeatureRiskAsymptotic(test->angles, test->eps, sigma);
      }
      break;
    }
    case ModelSource::kLoraAnalytic: {
      if (feature) throw ConfigurationError("lora-analytic needs a task-shift scenario");
      const auto* train = std::get_if<SingleSubspace>(&sc.train_cov);
      if (train == nullptr) throw ConfigurationError("lora-analytic needs a SingleSubspace training model");
      std::optional<OrthonormalBasis> target = plan.lora_target;
      if (!target) {
        if (const auto* rot = std::get_if<RotatedSubspace>(&sc.test_cov)) target = rot->orth;
      }
      if (!target) {
        throw ConfigurationError("lora-analytic needs lora_target or a rotated test model");
      }
      const OptimalWeights opt = OptimalWeightsTask(BuildCovariance(sc.train_cov), sigma, n);
      out.weights = opt.weights;
      out.adapters = LoraAnalyticAdapters(*target, n, train->eps, opt.m_s, plan.lora_scale);
      const int r = train->basis.rank();
      const OrthonormalBasis pair[] = {train->basis, *target};
      if (plan.lora_scale == LoraScale::kBalanced && target->rank() == r && test_basis &&
          test_basis->cols() == r && InSpan(*test_basis, ConcatenateBases(pair).columns())) {
        out.asymptotic = LoraRiskEps0(r, sigma, n, m);
      }
      break;
    }
    case ModelSource::kExplicitWeights: {
      if (!plan.explicit_weights) throw ConfigurationError("explicit-weights needs explicit_weights");
      out.weights = *plan.explicit_weights;
      out.adapters = plan.explicit_adapters;
      break;
    }
  }
  out.weights.Validate();
  if (out.weights.dim() != AmbientDim(sc.test_cov)) {
    throw ConfigurationError("model dimension differs from scenario dimension");
  }
  return out;
}

}  // namespace

std::string ToString(ModelSource source) {
  switch (source) {
    case ModelSource::kOptimalTask:
      return "optimal-task";
    case ModelSource::kOptimalMixture:
      return "optimal-mixture";
    case ModelSource::kOptimalFeature:
      return "optimal-feature";
    case ModelSource::kLoraAnalytic:
      return "lora-analytic";
    case ModelSource::kExplicitWeights:
      return "explicit-weights";
  }
  return "unknown";
}

std::string ToString(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::kFullPrompt:
      return "full";
    case SamplingMode::kGram:
      return "gram";
    case SamplingMode::kAuto:
      return "auto";
  }
  return "unknown";
}

ModelSampler::ModelSampler(const CovarianceModel& model) {
  ValidateCovarianceModel(model);
  dim_ = AmbientDim(model);
  if (const auto* mix = std::get_if<MixtureK>(&model)) {
    const double sqrt_eps = std::sqrt(mix->eps);
    double total = 0.0;
    for (size_t k = 0; k < mix->bases.size(); ++k) {
      components_.push_back({mix->bases[k].columns(), sqrt_eps});
      total += mix->weights[k];
      cumulative_.push_back(total);
    }
    return;
  }
  if (const auto* ex = std::get_if<ExplicitCovariance>(&model)) {
    components_.push_back({SymmetricFactor(ex->matrix), 0.0});
    return;
  }
  const auto eps_of = [](const auto& m) -> double {
    if constexpr (requires { m.eps; }) {
      return m.eps;
    } else {
      return 0.0;
    }
  };
  const double eps = std::visit(eps_of, model);
  components_.push_back({*SubspaceOf(model), std::sqrt(eps)});
}

ModelSampler ModelSampler::Isotropic(int d) {
  if (d < 1) throw InvalidDimensionError("isotropic sampler needs d >= 1");
  ModelSampler s;
  s.dim_ = d;
  s.components_.push_back({Matrix(d, 0), 1.0});
  return s;
}

Vector ModelSampler::Sample(NormalSource& normal) const {
  size_t k = 0;
  if (components_.size() > 1) {
    boost::random::uniform_01<double> uniform;
    const double u = uniform(normal.engine());
    while (k + 1 < components_.size() && u >= cumulative_[k]) ++k;
  }
  const Component& c = components_[k];
  Vector w = Vector::Zero(dim_);
  if (c.factor.cols() > 0) w.noalias() = c.factor * normal.Vector(c.factor.cols());
  if (c.sqrt_eps > 0.0) w += c.sqrt_eps * normal.Vector(dim_);
  return w;
}

Vector SampleTaskVector(const CovarianceModel& model, Engine& engine) {
  NormalSource normal(engine);
  return ModelSampler(model).Sample(normal);
}

PromptBatch SamplePrompt(const Vector& w, int m, double noise_sd,
                         const CovarianceModel* feature_cov, Engine& engine) {
  if (m < 1) throw DomainError("prompt length must be >= 1");
  if (!(noise_sd >= 0.0)) throw DomainError("noise_sd must be non-negative");
  const int d = static_cast<int>(w.size());
  const ModelSampler features =
      feature_cov != nullptr ? ModelSampler(*feature_cov) : ModelSampler::Isotropic(d);
  if (features.dim() != d) throw ShapeError("feature model dimension differs from task vector");
  NormalSource normal(engine);
  PromptBatch batch;
  batch.x.resize(m, d);
  batch.y.resize(m);
  for (int j = 0; j < m; ++j) {
    batch.x.row(j) = features.Sample(normal).transpose();
    batch.y[j] = batch.x.row(j).dot(w) + noise_sd * normal();
  }
  batch.x_query = features.Sample(normal);
  batch.y_query = batch.x_query.dot(w) + noise_sd * normal();
  batch.norm_len = m;
  return batch;
}

SamplingMode ResolveSamplingMode(SamplingMode requested, int d, int m) {
  switch (requested) {
    case SamplingMode::kAuto:
      return m >= 4 * (d + 1) ? SamplingMode::kGram : SamplingMode::kFullPrompt;
    case SamplingMode::kGram:
      if (m < d + 1) {
        throw ConfigurationError(
            fmt::format("gram sampling needs m >= d+1 (m={}, d={})", m, d));
      }
      return requested;
    case SamplingMode::kFullPrompt:
      return requested;
  }
  return requested;
}

PromptSampler::PromptSampler(ShiftKind kind, const CovarianceModel& test_cov,
                             double noise_sd, int m, SamplingMode mode)
    : d_(AmbientDim(test_cov)),
      m_(m),
      noise_sd_(noise_sd),
      mode_(ResolveSamplingMode(mode, AmbientDim(test_cov), m)),
      task_(kind == ShiftKind::kTask ? ModelSampler(test_cov)
                                     : ModelSampler::Isotropic(AmbientDim(test_cov))),
      features_(kind == ShiftKind::kTask ? ModelSampler::Isotropic(AmbientDim(test_cov))
                                         : ModelSampler(test_cov)),
      isotropic_features_(kind == ShiftKind::kTask) {
  if (m < 1) throw DomainError("prompt length must be >= 1");
  if (!(noise_sd >= 0.0)) throw DomainError("noise_sd must be non-negative");
  if (!isotropic_features_) {
    if (features_.is_mixture()) {
      throw ConfigurationError("feature covariance must be Gaussian, not a mixture");
    }
    feature_root_ = SymmetricFactor(BuildCovariance(test_cov));
  }
}

Vector PromptSampler::SampleQuery(NormalSource& normal) const {
  return features_.Sample(normal);
}

PromptBatch PromptSampler::SampleBatch(NormalSource& normal) const {
  const Vector w = task_.Sample(normal);
  PromptBatch batch;
  batch.x.resize(m_, d_);
  batch.y.resize(m_);
  for (int j = 0; j < m_; ++j) {
    batch.x.row(j) = features_.Sample(normal).transpose();
    batch.y[j] = batch.x.row(j).dot(w) + noise_sd_ * normal();
  }
  batch.x_query = SampleQuery(normal);
  batch.y_query = batch.x_query.dot(w) + noise_sd_ * normal();
  batch.norm_len = m_;
  return batch;
}

PromptSummary PromptSampler::SampleSummary(const Vector& value_dir,
                                           NormalSource& normal) const {
  if (value_dir.size() != d_ + 1) throw ShapeError("value direction must have d+1 entries");
  if (mode_ == SamplingMode::kFullPrompt) return Summarize(SampleBatch(normal), value_dir);

  // Rows z_j = T u_j with u_j ~ N(0, I_{d+1}), T = [[L, 0], [wᵀL, σ]], so
  // Z_MᵀZ_M = T W Tᵀ with W ~ Wishart(I, m) = B Bᵀ (Bartlett).
  const Vector w = task_.Sample(normal);
  const int p = d_ + 1;
  Matrix b = Matrix::Zero(p, p);
  for (int i = 0; i < p; ++i) {
    b(i, i) = std::sqrt(normal.ChiSquared(static_cast<double>(m_ - i)));
    for (int j = 0; j < i; ++j) b(i, j) = normal();
  }
  const double v_y = value_dir[d_];
  Vector t(p);
  const Vector vx = value_dir.head(d_) + v_y * w;
  t.head(d_) = isotropic_features_ ? vx : Vector(feature_root_.transpose() * vx);
  t[d_] = noise_sd_ * v_y;
  const Vector bt = b.triangularView<Eigen::Lower>().transpose() * t;
  const Vector wt = b.triangularView<Eigen::Lower>() * bt;
  PromptSummary out;
  out.h.resize(p);
  out.h.head(d_) = isotropic_features_ ? Vector(wt.head(d_))
                                       : Vector(feature_root_ * wt.head(d_));
  out.h[d_] = w.dot(out.h.head(d_)) + noise_sd_ * wt[d_];
  out.x_query = SampleQuery(normal);
  out.y_query = out.x_query.dot(w) + noise_sd_ * normal();
  out.norm_len = m_;
  return out;
}

RiskEstimate EstimateRisk(const SimulationPlan& plan) {
  plan.scenario.Validate();
  if (plan.trials < 1) throw ConfigurationError("trials must be >= 1");
  const ShiftScenario& sc = plan.scenario;
  const ResolvedModel model = ResolveModel(plan);
  const PromptSampler sampler(sc.kind, sc.test_cov, sc.noise_sd, sc.m_test, plan.sampling);
  const Vector value_dir = model.weights.wv * model.weights.p;

  RiskEstimate est;
  est.trials = plan.trials;
  est.analytic_asymptotic = model.asymptotic;
  const LoraAdapters* adapters = model.adapters ? &*model.adapters : nullptr;
  if (const auto a = ReducedKernel(model.weights, adapters)) {
    const Matrix sigma_t = BuildCovariance(sc.test_cov);
    est.analytic_exact = sc.kind == ShiftKind::kTask
                             ? TaskRiskExact(*a, sigma_t, sc.noise_sd, sc.m_test).raw
                             : FeatureRiskExact(*a, sigma_t, sc.noise_sd, sc.m_test).raw;
  }

  const int64_t blocks = (plan.trials + kBlockSize - 1) / kBlockSize;
  std::vector<BlockStats> stats(blocks);
  std::atomic<int64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    std::vector<double> losses;
    losses.reserve(kBlockSize);
    for (int64_t blk = next++; blk < blocks; blk = next++) {
      try {
        losses.clear();
        const int64_t begin = blk * kBlockSize;
        const int64_t end = std::min(plan.trials, begin + kBlockSize);
        for (int64_t t = begin; t < end; ++t) {
          Engine engine = MakeEngine(plan.base_seed, static_cast<uint64_t>(t));
          NormalSource normal(engine);
          const PromptSummary s = sampler.SampleSummary(value_dir, normal);
          const double pred = adapters != nullptr ? PredictLora(model.weights, *adapters, s)
                                                  : PredictFull(model.weights, s);
          const double err = s.y_query - pred;
          losses.push_back(err * err);
        }
        stats[blk] = SummarizeBlock(losses);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = blocks;
      }
    }
  };
  int threads = plan.threads > 0 ? plan.threads
                                 : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = static_cast<int>(std::min<int64_t>(threads, blocks));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  // Chan merge in block order keeps the result schedule-independent.
  long double count = 0.0L, mean = 0.0L, m2 = 0.0L;
  for (const BlockStats& s : stats) {
    const long double nb = static_cast<long double>(s.count);
    const long double total = count + nb;
    const long double delta = static_cast<long double>(s.mean) - mean;
    mean += delta * nb / total;
    m2 += static_cast<long double>(s.m2) + delta * delta * count * nb / total;
    count = total;
  }
  est.mean = static_cast<double>(mean);
  const double t = static_cast<double>(plan.trials);
  est.std_error =
      plan.trials > 1 ? std::sqrt(static_cast<double>(m2) / (t - 1.0)) / std::sqrt(t) : 0.0;
  if (!std::isfinite(est.mean)) {
    throw DivergenceError("Monte Carlo mean is not finite", plan.trials);
  }
  return est;
}

std::vector<std::vector<RiskEstimate>> PhaseSweep(std::span<const double> theta_grid,
                                                  std::span<const int> length_grid,
                                                  const SimulationPlan& plan_template) {
  if (theta_grid.empty() || length_grid.empty()) {
    throw ConfigurationError("phase sweep grids must be non-empty");
  }
  const auto* rotated = std::get_if<RotatedSubspace>(&plan_template.scenario.test_cov);
  if (rotated == nullptr) throw ConfigurationError("phase sweep needs a rotated test model");
  std::vector<std::vector<RiskEstimate>> out(theta_grid.size());
  uint64_t cell = 0;
  for (size_t i = 0; i < theta_grid.size(); ++i) {
    for (int len : length_grid) {
      SimulationPlan plan = plan_template;
      RotatedSubspace test = *rotated;
      test.angles = PrincipalAngles::Broadcast(theta_grid[i], rotated->base.rank());
      plan.scenario.test_cov = test;
      plan.scenario.n_train = len;
      plan.scenario.m_test = len;
      plan.base_seed = DeriveSeed(plan_template.base_seed, cell++);
      out[i].push_back(EstimateRisk(plan));
    }
  }
  return out;
}

}  // namespace icl
