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

#include "icl/experiment_harness.h"

#include <openssl/crypto.h>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <fmt/format.h>

#include "icl/errors.h"
#include "icl/lora_training.h"
#include "icl/random.h"
#include "icl/subspace_geometry.h"
#include "json.hpp"

namespace icl {
namespace {

using nlohmann::json;

constexpr uint64_t kGeometryTag = 0x67656f6dULL;
constexpr uint64_t kRowTag = 0x726f7773ULL;
constexpr uint64_t kTrainTag = 0x7472616eULL;
constexpr uint64_t kEvalTag = 0x6576616cULL;

constexpr std::pair<ExperimentKind, const char*> kKindNames[] = {
    {ExperimentKind::kSingleShiftSweep, "single-shift-sweep"},
    {ExperimentKind::kMixtureSweep, "mixture-sweep"},
    {ExperimentKind::kKMixtureSpan, "k-mixture-span"},
    {ExperimentKind::kPhasePlot, "phase-plot"},
    {ExperimentKind::kGatmiry, "gatmiry"},
    {ExperimentKind::kLoraAnalytic, "lora-analytic"},
    {ExperimentKind::kLoraTrain, "lora-train"},
    {ExperimentKind::kLoraRank2r, "lora-rank2r"},
    {ExperimentKind::kFeatureShiftSweep, "feature-shift-sweep"},
    {ExperimentKind::kThresholdTable, "threshold-table"},
};

const std::set<std::string> kTopLevelFields = {"schema_version", "output_dir", "description",
                                               "experiments"};
const std::set<std::string> kExperimentFields = {
    "id",          "kind",           "description",    "figure",        "d",
    "rank",        "eps",            "noise_sd",       "theta_grid",    "theta_points",
    "prompt_lengths", "train_length", "trials",        "seed",          "sampling",
    "components",  "alpha_sets",     "lambda_convention", "train_seeds", "iterations",
    "learning_rate", "batch_size",   "init_scale",     "early_stop_error", "snapshot_stride",
    "ranks",       "noise_sds",      "deltas",         "families"};

std::string Join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string Index(const std::string& path, size_t i) { return fmt::format("{}[{}]", path, i); }

int64_t AsInt(const json& j, const std::string& field, int64_t lo, int64_t hi) {
  if (!j.is_number_integer()) throw SchemaError(field, "expected an integer");
  const int64_t v = j.is_number_unsigned() && j.get<uint64_t>() > INT64_MAX
                        ? INT64_MAX
                        : j.get<int64_t>();
  if (v < lo || v > hi) throw SchemaError(field, fmt::format("must lie in [{}, {}]", lo, hi));
  return v;
}

uint64_t AsSeed(const json& j, const std::string& field) {
  if (j.is_number_unsigned()) return j.get<uint64_t>();
  if (j.is_number_integer()) throw SchemaError(field, "seed must be non-negative");
  throw SchemaError(field, "expected a non-negative integer");
}

double AsDouble(const json& j, const std::string& field) {
  if (!j.is_number()) throw SchemaError(field, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw SchemaError(field, "must be finite");
  return v;
}

std::string AsString(const json& j, const std::string& field) {
  if (!j.is_string()) throw SchemaError(field, "expected a string");
  return j.get<std::string>();
}

const json& AsArray(const json& j, const std::string& field) {
  if (!j.is_array()) throw SchemaError(field, "expected an array");
  if (j.empty()) throw SchemaError(field, "must not be empty");
  return j;
}

std::vector<double> AsDoubles(const json& j, const std::string& field) {
  std::vector<double> out;
  for (size_t i = 0; const auto& e : AsArray(j, field)) out.push_back(AsDouble(e, Index(field, i++)));
  return out;
}

std::vector<int> AsInts(const json& j, const std::string& field, int lo, int hi) {
  std::vector<int> out;
  for (size_t i = 0; const auto& e : AsArray(j, field)) {
    out.push_back(static_cast<int>(AsInt(e, Index(field, i++), lo, hi)));
  }
  return out;
}

std::optional<ThresholdKind> ParseFamily(const std::string& name) {
  if (name == "mixture2") return ThresholdKind::Mixture2();
  if (name == "lora") return ThresholdKind::Lora();
  if (name.size() > 7 && name.starts_with("mixture") &&
      std::all_of(name.begin() + 7, name.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    const int k = std::atoi(name.c_str() + 7);
    if (k >= 2 && k <= 64) return ThresholdKind::MixtureOf(k);
  }
  return std::nullopt;
}

std::vector<double> DefaultThetaGrid() {
  std::vector<double> grid;
  for (int i = 0; i <= 8; ++i) grid.push_back(i * std::numbers::pi / 16);
  return grid;
}

std::vector<int> DefaultLengths(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kPhasePlot:
      return {10, 40, 70, 100, 130, 160, 200, 250};
    case ExperimentKind::kGatmiry:
      return {10, 25, 50, 100, 250, 500, 1000, 2000};
    case ExperimentKind::kLoraAnalytic:
      return {10, 50, 100, 250, 500, 1000, 2000};
    case ExperimentKind::kLoraTrain:
    case ExperimentKind::kLoraRank2r:
      return {200};
    default:
      return {10, 50, 100, 150, 200, 250};
  }
}

ExperimentSpec ParseExperiment(const json& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path, "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!kExperimentFields.contains(key)) throw SchemaError(Join(path, key), "unknown field");
  }
  auto field = [&](const char* key) { return Join(path, key); };
  auto has = [&](const char* key) { return j.contains(key); };

  ExperimentSpec spec;
  if (!has("id")) throw SchemaError(field("id"), "required field missing");
  spec.id = AsString(j["id"], field("id"));
  if (spec.id.empty() || !std::all_of(spec.id.begin(), spec.id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
      })) {
    throw SchemaError(field("id"), "must be non-empty and use only [A-Za-z0-9._-]");
  }
  if (!has("kind")) throw SchemaError(field("kind"), "required field missing");
  const std::string kind_name = AsString(j["kind"], field("kind"));
  const auto kind = ParseExperimentKind(kind_name);
  if (!kind) throw SchemaError(field("kind"), fmt::format("unknown kind '{}'", kind_name));
  spec.kind = *kind;
  const bool threshold = spec.kind == ExperimentKind::kThresholdTable;
  const bool gatmiry = spec.kind == ExperimentKind::kGatmiry;

  if (has("d")) spec.d = static_cast<int>(AsInt(j["d"], field("d"), 1, 4096));
  if (gatmiry) {
    if (has("d") && spec.d != 5) {
      throw SchemaError(field("d"), "the gatmiry example is 5-dimensional");
    }
    spec.d = 5;
    spec.rank = 5;
  }
  if (has("rank")) {
    spec.rank = static_cast<int>(AsInt(j["rank"], field("rank"), 1, 4096));
  } else if (!threshold && !gatmiry) {
    throw SchemaError(field("rank"), "required field missing");
  }
  spec.eps = spec.kind == ExperimentKind::kFeatureShiftSweep ? 0.1 : 1e-6;
  if (has("eps")) spec.eps = AsDouble(j["eps"], field("eps"));
  if (spec.eps <= 0.0) throw SchemaError(field("eps"), "must be > 0");
  if (has("noise_sd")) spec.noise_sd = AsDouble(j["noise_sd"], field("noise_sd"));
  if (spec.noise_sd < 0.0) throw SchemaError(field("noise_sd"), "must be ≥ 0");

  if (has("theta_grid") && has("theta_points")) {
    throw SchemaError(field("theta_points"), "give theta_grid or theta_points, not both");
  }
  if (has("theta_grid")) {
    spec.theta_grid = AsDoubles(j["theta_grid"], field("theta_grid"));
  } else if (has("theta_points")) {
    const int k = static_cast<int>(AsInt(j["theta_points"], field("theta_points"), 1, 10000));
    for (int i = 0; i < k; ++i) {
      spec.theta_grid.push_back(k == 1 ? 0.0 : i * (std::numbers::pi / 2) / (k - 1));
    }
  } else {
    spec.theta_grid = DefaultThetaGrid();
  }
  spec.prompt_lengths = has("prompt_lengths")
                            ? AsInts(j["prompt_lengths"], field("prompt_lengths"), 1, 100000000)
                            : DefaultLengths(spec.kind);
  if (has("train_length")) {
    spec.train_length =
        static_cast<int>(AsInt(j["train_length"], field("train_length"), 1, 100000000));
  }
  if (has("trials")) spec.trials = AsInt(j["trials"], field("trials"), 1, INT64_MAX);
  if (has("seed")) spec.seed = AsSeed(j["seed"], field("seed"));
  if (has("sampling")) {
    const std::string s = AsString(j["sampling"], field("sampling"));
    if (s == "auto") {
      spec.sampling = SamplingMode::kAuto;
    } else if (s == "full") {
      spec.sampling = SamplingMode::kFullPrompt;
    } else if (s == "gram") {
      spec.sampling = SamplingMode::kGram;
    } else {
      throw SchemaError(field("sampling"), "expected one of auto, full, gram");
    }
  }

  if (has("components")) {
    spec.components = static_cast<int>(AsInt(j["components"], field("components"), 2, 4096));
  }
  if (has("alpha_sets")) {
    const std::string f = field("alpha_sets");
    for (size_t i = 0; const auto& set : AsArray(j["alpha_sets"], f)) {
      const std::string fi = Index(f, i++);
      std::vector<double> alpha = AsDoubles(set, fi);
      if (static_cast<int>(alpha.size()) != spec.components) {
        throw SchemaError(fi, fmt::format("needs {} coefficients", spec.components));
      }
      double sq = 0.0;
      for (double a : alpha) sq += a * a;
      if (std::abs(sq - 1.0) > 1e-9) throw SchemaError(fi, "squared coefficients must sum to 1");
      spec.alpha_sets.push_back(std::move(alpha));
    }
  }
  if (has("lambda_convention")) {
    const std::string s = AsString(j["lambda_convention"], field("lambda_convention"));
    if (s == "balanced") {
      spec.lambda_convention = LoraScale::kBalanced;
    } else if (s == "printed") {
      spec.lambda_convention = LoraScale::kAsPrinted;
    } else {
      throw SchemaError(field("lambda_convention"), "expected balanced or printed");
    }
  }

  if (has("train_seeds")) {
    const std::string f = field("train_seeds");
    for (size_t i = 0; const auto& s : AsArray(j["train_seeds"], f)) {
      spec.train_seeds.push_back(AsSeed(s, Index(f, i++)));
    }
  } else {
    spec.train_seeds = {1, 2, 3, 4, 5};
  }
  if (has("iterations")) {
    spec.iterations = static_cast<int>(AsInt(j["iterations"], field("iterations"), 1, 100000000));
  }
  if (has("learning_rate")) spec.learning_rate = AsDouble(j["learning_rate"], field("learning_rate"));
  if (spec.learning_rate <= 0.0) throw SchemaError(field("learning_rate"), "must be > 0");
  if (has("batch_size")) {
    spec.batch_size = static_cast<int>(AsInt(j["batch_size"], field("batch_size"), 1, 1000000));
  }
  if (has("init_scale")) spec.init_scale = AsDouble(j["init_scale"], field("init_scale"));
  if (spec.init_scale <= 0.0) throw SchemaError(field("init_scale"), "must be > 0");
  if (spec.kind == ExperimentKind::kLoraRank2r) spec.early_stop_error = 0.0;
  if (has("early_stop_error")) {
    spec.early_stop_error = AsDouble(j["early_stop_error"], field("early_stop_error"));
  }
  if (has("snapshot_stride")) {
    spec.snapshot_stride =
        static_cast<int>(AsInt(j["snapshot_stride"], field("snapshot_stride"), 1, 100000000));
  }

  spec.ranks = has("ranks") ? AsInts(j["ranks"], field("ranks"), 1, 4096) : std::vector<int>{2, 5, 8};
  spec.noise_sds = has("noise_sds") ? AsDoubles(j["noise_sds"], field("noise_sds"))
                                    : std::vector<double>{0.0, 1.0};
  for (size_t i = 0; i < spec.noise_sds.size(); ++i) {
    if (spec.noise_sds[i] < 0.0) throw SchemaError(Index(field("noise_sds"), i), "must be ≥ 0");
  }
  spec.deltas = has("deltas") ? AsDoubles(j["deltas"], field("deltas"))
                              : std::vector<double>{0.1, 0.5, 1.0};
  if (has("families")) {
    const std::string f = field("families");
    for (size_t i = 0; const auto& e : AsArray(j["families"], f)) {
      const std::string fi = Index(f, i++);
      const auto family = ParseFamily(AsString(e, fi));
      if (!family) throw SchemaError(fi, "expected mixture2, mixture<K> or lora");
      spec.families.push_back(*family);
    }
  } else {
    spec.families = {ThresholdKind::Mixture2(), ThresholdKind::MixtureOf(3), ThresholdKind::Lora()};
  }

  // Cross-field constraints.
  if (threshold) {
    const int min_rank = *std::min_element(spec.ranks.begin(), spec.ranks.end());
    for (size_t i = 0; i < spec.deltas.size(); ++i) {
      if (spec.deltas[i] <= 0.0 || spec.deltas[i] >= min_rank) {
        throw SchemaError(Index(field("deltas"), i), "δ must lie in (0, min rank)");
      }
    }
    return spec;
  }
  const int blocks = spec.kind == ExperimentKind::kKMixtureSpan ? spec.components : 2;
  if (!gatmiry && blocks * spec.rank > spec.d) {
    throw SchemaError(field("rank"),
                      fmt::format("{} orthogonal rank-{} blocks do not fit in d = {}", blocks,
                                  spec.rank, spec.d));
  }
  if (spec.kind == ExperimentKind::kLoraRank2r && 2 * spec.rank > spec.d) {
    throw SchemaError(field("rank"), "rank-2r adapters need 2r ≤ d");
  }
  if ((spec.kind == ExperimentKind::kLoraTrain || spec.kind == ExperimentKind::kLoraRank2r) &&
      spec.prompt_lengths.size() != 1) {
    throw SchemaError(field("prompt_lengths"), "training uses exactly one prompt length");
  }
  if (spec.sampling == SamplingMode::kGram) {
    for (size_t i = 0; i < spec.prompt_lengths.size(); ++i) {
      if (spec.prompt_lengths[i] < spec.d + 1) {
        throw SchemaError(Index(field("prompt_lengths"), i),
                          "gram sampling needs every prompt length ≥ d + 1");
      }
    }
  }
  return spec;
}

std::pair<int, int> LineAndColumn(std::string_view text, size_t byte) {
  int line = 1, col = 1;
  for (size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// Orthonormal rank-r blocks of one Haar frame.
std::vector<OrthonormalBasis> MakeBlocks(int d, int r, int count, uint64_t seed) {
  const Matrix q = HaarOrthogonal(d, DeriveSeed(seed, kGeometryTag));
  std::vector<OrthonormalBasis> out;
  for (int k = 0; k < count; ++k) out.emplace_back(q.middleCols(k * r, r));
  return out;
}

std::optional<double> Normalize(const std::optional<double>& v, int d) {
  if (!v) return std::nullopt;
  return *v / d;
}

ResultRow BaseRow(const ExperimentSpec& spec) {
  ResultRow row;
  row.experiment_id = spec.id;
  row.kind = ToString(spec.kind);
  row.rank = spec.rank;
  row.noise_sd = spec.noise_sd;
  row.eps = spec.eps;
  return row;
}

void FillEstimate(ResultRow& row, const RiskEstimate& est, int d) {
  row.trials = est.trials;
  row.mc_mean = est.mean;
  row.mc_stderr = est.std_error;
  row.analytic_exact = est.analytic_exact;
  row.analytic_asymptotic = est.analytic_asymptotic;
  row.normalized_mc = est.mean / d;
  row.normalized_exact = Normalize(est.analytic_exact, d);
}

struct SweepPoint {
  double label;
  ShiftScenario scenario;
  ModelSource source;
  std::optional<OrthonormalBasis> lora_target;
};

ExperimentOutput RunSweep(const ExperimentSpec& spec, int threads) {
  const int d = spec.d;
  const int r = spec.rank;
  const bool kmix = spec.kind == ExperimentKind::kKMixtureSpan;
  const auto blocks = MakeBlocks(d, r, kmix ? spec.components : 2, spec.seed);
  const OrthonormalBasis& us = blocks[0];
  const OrthonormalBasis& up = blocks[1];
  const double eps = spec.eps;
  const std::vector<double> equal(blocks.size(), 1.0 / blocks.size());

  // One entry per θ (or α set); the prompt lengths are filled in below.
  std::vector<SweepPoint> points;
  auto rotated = [&](double theta) {
    return RotatedSubspace{us, up, PrincipalAngles::Broadcast(theta, r), eps};
  };
  if (kmix) {
    std::vector<std::pair<double, std::vector<double>>> sets;
    if (!spec.alpha_sets.empty()) {
      for (const auto& a : spec.alpha_sets) sets.emplace_back(a[0], a);
    } else {
      const double spread = 1.0 / std::sqrt(spec.components - 1.0);
      for (double theta : spec.theta_grid) {
        std::vector<double> a(spec.components, std::sin(theta) * spread);
        a[0] = std::cos(theta);
        sets.emplace_back(theta, std::move(a));
      }
    }
    for (auto& [label, alpha] : sets) {
      SweepPoint p{label, {}, ModelSource::kOptimalMixture, std::nullopt};
      p.scenario.train_cov = MixtureK{blocks, equal, eps};
      p.scenario.test_cov = SpanInterpolated{blocks, alpha, eps};
      points.push_back(std::move(p));
    }
  } else {
    for (double theta : spec.theta_grid) {
      SweepPoint p{theta, {}, ModelSource::kOptimalTask, std::nullopt};
      p.scenario.test_cov = rotated(theta);
      switch (spec.kind) {
        case ExperimentKind::kSingleShiftSweep:
          p.scenario.train_cov = SingleSubspace{us, eps};
          break;
        case ExperimentKind::kMixtureSweep:
        case ExperimentKind::kPhasePlot:
          p.scenario.train_cov = MixtureK{blocks, equal, eps};
          p.source = ModelSource::kOptimalMixture;
          break;
        case ExperimentKind::kLoraAnalytic:
          p.scenario.train_cov = SingleSubspace{us, eps};
          p.source = ModelSource::kLoraAnalytic;
          p.lora_target = up;
          break;
        case ExperimentKind::kFeatureShiftSweep:
          p.scenario.kind = ShiftKind::kFeature;
          p.scenario.train_cov = SingleSubspace{us, eps};
          p.source = ModelSource::kOptimalFeature;
          break;
        default:
          throw ConfigurationError("not a sweep kind");
      }
      points.push_back(std::move(p));
    }
  }

  ExperimentOutput out;
  uint64_t row_index = 0;
  for (const SweepPoint& point : points) {
    const double tau = CovarianceAlignment(BuildCovariance(point.scenario.train_cov),
                                           BuildCovariance(point.scenario.test_cov));
    for (int len : spec.prompt_lengths) {
      SimulationPlan plan;
      plan.scenario = point.scenario;
      plan.scenario.noise_sd = spec.noise_sd;
      plan.scenario.n_train = spec.train_length.value_or(len);
      plan.scenario.m_test = len;
      plan.model_source = point.source;
      plan.trials = spec.trials;
      plan.base_seed = DeriveSeed(DeriveSeed(spec.seed, kRowTag), row_index++);
      plan.sampling = spec.sampling;
      plan.threads = threads;
      plan.lora_target = point.lora_target;
      plan.lora_scale = spec.lambda_convention;
      ResultRow row = BaseRow(spec);
      row.theta_or_alpha = point.label;
      row.n = plan.scenario.n_train;
      row.m = len;
      row.seed = plan.base_seed;
      row.tau = tau;
      FillEstimate(row, EstimateRisk(plan), d);
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

ExperimentOutput RunGatmiry(const ExperimentSpec& spec, int threads) {
  const auto [sigma_s, sigma_t] = GatmiryExampleCovariances(DeriveSeed(spec.seed, kGeometryTag));
  const double tau = CovarianceAlignment(sigma_s, sigma_t);
  ExperimentOutput out;
  uint64_t row_index = 0;
  for (int len : spec.prompt_lengths) {
    SimulationPlan plan;
    plan.scenario = {ShiftKind::kTask, ExplicitCovariance{sigma_s}, ExplicitCovariance{sigma_t},
                     spec.noise_sd, spec.train_length.value_or(len), len};
    plan.model_source = ModelSource::kOptimalTask;
    plan.trials = spec.trials;
    plan.base_seed = DeriveSeed(DeriveSeed(spec.seed, kRowTag), row_index++);
    plan.sampling = spec.sampling;
    plan.threads = threads;
    ResultRow row = BaseRow(spec);
    row.eps.reset();
    row.n = plan.scenario.n_train;
    row.m = len;
    row.seed = plan.base_seed;
    row.tau = tau;
    FillEstimate(row, EstimateRisk(plan), spec.d);
    out.rows.push_back(std::move(row));
  }
  return out;
}

double SpectralRatio(const Vector& s, int r) {
  if (s.size() <= r || s[r - 1] == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return s[r] / s[r - 1];
}

double WideError(const LoraAdapters& a, const OrthonormalBasis& wide) {
  const int k = wide.rank();
  return std::max(SubspaceError(wide.columns(), TopLeftSingularFrame(a.b1, k)),
                  SubspaceError(wide.columns(), TopLeftSingularFrame(a.b2, k)));
}

ExperimentOutput RunLoraTraining(const ExperimentSpec& spec, int threads) {
  const bool wide = spec.kind == ExperimentKind::kLoraRank2r;
  const int d = spec.d;
  const int r = spec.rank;
  const int n = spec.prompt_lengths.front();
  const auto blocks = MakeBlocks(d, r, 2, spec.seed);
  const OrthonormalBasis& us = blocks[0];
  const OrthonormalBasis& up = blocks[1];
  const OrthonormalBasis u2r = ConcatenateBases(blocks);
  const SingleSubspace pretrain{us, spec.eps};
  const OptimalWeights pre =
      OptimalWeightsTask(BuildCovariance(pretrain), spec.noise_sd, spec.train_length.value_or(n));

  ExperimentOutput out;
  CsvTable trajectory{{"seed", "iteration", "loss", "error_to_target", "error_to_wide"}, {}};
  CsvTable spectrum{{"seed", "factor", "index", "singular_value"}, {}};
  CsvTable summary{{"seed", "status", "iterations_run", "early_stopped", "error_to_target",
                    "error_to_wide", "rank_deficient", "ratio_b1", "ratio_b2"},
                   {}};
  for (uint64_t train_seed : spec.train_seeds) {
    TrainConfig cfg;
    cfg.adapter_rank = wide ? 2 * r : r;
    cfg.learning_rate = spec.learning_rate;
    cfg.batch_size = spec.batch_size;
    cfg.iterations = spec.iterations;
    cfg.prompt_length = n;
    cfg.init_scale = spec.init_scale;
    cfg.finetune_cov = SingleSubspace{u2r, spec.eps};
    cfg.noise_sd = spec.noise_sd;
    cfg.base_seed = DeriveSeed(DeriveSeed(spec.seed, kTrainTag), train_seed);
    cfg.snapshot_stride = spec.snapshot_stride;
    cfg.early_stop_error = spec.early_stop_error;
    cfg.target = up;
    if (wide) cfg.wide_target = u2r;
    cfg.sampling = spec.sampling;
    const std::string seed_cell = std::to_string(train_seed);

    TrainTrajectory traj;
    try {
      traj = TrainLora(pre.weights, cfg);
    } catch (const DivergenceError& e) {
      summary.rows.push_back({seed_cell, fmt::format("diverged@{}", e.iteration()),
                              std::to_string(e.iteration()), "0", "", "", "", "", ""});
      out.notes.push_back(fmt::format("seed {}: {}", train_seed, e.what()));
      continue;
    }
    for (const TrainRecord& rec : traj.records) {
      if (rec.iteration % spec.snapshot_stride != 0 && rec.iteration + 1 != traj.iterations_run) {
        continue;
      }
      trajectory.rows.push_back({seed_cell, std::to_string(rec.iteration), FormatNumber(rec.loss),
                                 FormatNumber(rec.error_to_target),
                                 FormatNumber(rec.error_to_wide)});
    }
    const AdapterSpectrum spec_values = ComputeAdapterSpectrum(traj.final_adapters);
    for (const auto& [name, values] :
         {std::pair{"b1", &spec_values.b1}, std::pair{"b2", &spec_values.b2}}) {
      for (Eigen::Index i = 0; i < values->size(); ++i) {
        spectrum.rows.push_back({seed_cell, name, std::to_string(i), FormatNumber((*values)[i])});
      }
    }
    const AdapterAlignment align = VerifyLearnedVsAnalytic(traj.final_adapters, up, r);
    summary.rows.push_back(
        {seed_cell, "ok", std::to_string(traj.iterations_run), traj.early_stopped ? "1" : "0",
         FormatNumber(align.error),
         wide ? FormatNumber(WideError(traj.final_adapters, u2r)) : std::string(),
         align.rank_deficient ? "1" : "0",
         wide ? FormatNumber(SpectralRatio(spec_values.b1, r)) : std::string(),
         wide ? FormatNumber(SpectralRatio(spec_values.b2, r)) : std::string()});

    // Risk of the trained model on U_{s,⊥} tasks.
    SimulationPlan plan;
    plan.scenario = {ShiftKind::kTask, pretrain,
                     RotatedSubspace{us, up, PrincipalAngles::Broadcast(std::numbers::pi / 2, r),
                                     spec.eps},
                     spec.noise_sd, spec.train_length.value_or(n), n};
    plan.model_source = ModelSource::kExplicitWeights;
    plan.explicit_weights = pre.weights;
    plan.explicit_adapters = traj.final_adapters;
    plan.trials = spec.trials;
    plan.base_seed = DeriveSeed(cfg.base_seed, kEvalTag);
    plan.sampling = spec.sampling;
    plan.threads = threads;
    ResultRow row = BaseRow(spec);
    row.theta_or_alpha = std::numbers::pi / 2;
    row.n = plan.scenario.n_train;
    row.m = n;
    row.seed = train_seed;
    row.tau = CovarianceAlignment(BuildCovariance(plan.scenario.train_cov),
                                  BuildCovariance(plan.scenario.test_cov));
    FillEstimate(row, EstimateRisk(plan), d);
    out.rows.push_back(std::move(row));
  }
  out.aux.emplace_back("trajectory", std::move(trajectory));
  out.aux.emplace_back("spectrum", std::move(spectrum));
  out.aux.emplace_back("summary", std::move(summary));
  return out;
}

ExperimentOutput RunThresholdTable(const ExperimentSpec& spec) {
  ExperimentOutput out;
  for (const ThresholdKind& family : spec.families) {
    for (int r : spec.ranks) {
      for (double sigma : spec.noise_sds) {
        for (double delta : spec.deltas) {
          const int64_t n = ThresholdPromptLength(family, r, sigma, delta);
          ResultRow row = BaseRow(spec);
          row.kind = family.Name();
          row.theta_or_alpha = delta;
          row.n = n;
          row.m = n;
          row.trials = 0;
          row.analytic_exact = ClosedFormRiskEps0(family, r, sigma, n);
          row.normalized_exact = *row.analytic_exact / spec.d;
          row.rank = r;
          row.noise_sd = sigma;
          row.eps.reset();
          row.seed = spec.seed;
          out.rows.push_back(std::move(row));
        }
      }
    }
  }
  return out;
}

void WriteFile(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(fmt::format("cannot open {} for writing", path.string()));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(fmt::format("short write to {}", path.string()));
}

std::string CsvCell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::string RenderLine(const std::vector<std::string>& cells) {
  std::string line;
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) line += ',';
    line += CsvCell(cells[i]);
  }
  return line + '\n';
}

}  // namespace

std::string ToString(ExperimentKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<ExperimentKind> ParseExperimentKind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (name == n) return k;
  }
  return std::nullopt;
}

SuiteConfig ParseSuiteConfig(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = LineAndColumn(json_text, e.byte == 0 ? 0 : e.byte - 1);
    throw SchemaError(fmt::format("<json> line {} column {}", line, col), "malformed JSON");
  }
  if (!root.is_object()) throw SchemaError("<root>", "expected an object");
  for (const auto& [key, value] : root.items()) {
    if (!kTopLevelFields.contains(key)) throw SchemaError(key, "unknown field");
  }
  SuiteConfig config;
  if (!root.contains("schema_version")) {
    throw SchemaError("schema_version", "required field missing");
  }
  config.schema_version =
      static_cast<int>(AsInt(root["schema_version"], "schema_version", 0, INT32_MAX));
  if (config.schema_version != kSchemaVersion) {
    throw SchemaError("schema_version", fmt::format("unsupported version {} (expected {})",
                                                    config.schema_version, kSchemaVersion));
  }
  if (root.contains("output_dir")) config.output_dir = AsString(root["output_dir"], "output_dir");
  if (!root.contains("experiments")) throw SchemaError("experiments", "required field missing");
  std::set<std::string> ids;
  for (size_t i = 0; const auto& e : AsArray(root["experiments"], "experiments")) {
    const std::string path = Index("experiments", i++);
    ExperimentSpec spec = ParseExperiment(e, path);
    if (!ids.insert(spec.id).second) {
      throw SchemaError(path + ".id", fmt::format("duplicate id '{}'", spec.id));
    }
    config.experiments.push_back(std::move(spec));
  }
  return config;
}

SuiteConfig LoadSuiteConfig(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw SchemaError(path.string(), "cannot read configuration file");
  std::stringstream ss;
  ss << f.rdbuf();
  return ParseSuiteConfig(ss.str());
}

ExperimentOutput RunExperiment(const ExperimentSpec& spec, int threads) {
  switch (spec.kind) {
    case ExperimentKind::kThresholdTable:
      return RunThresholdTable(spec);
    case ExperimentKind::kGatmiry:
      return RunGatmiry(spec, threads);
    case ExperimentKind::kLoraTrain:
    case ExperimentKind::kLoraRank2r:
      return RunLoraTraining(spec, threads);
    default:
      return RunSweep(spec, threads);
  }
}

std::string FormatNumber(double value) {
  if (std::isnan(value)) return "";
  return fmt::format("{:.17g}", value);
}

std::string FormatNumber(const std::optional<double>& value) {
  return value ? FormatNumber(*value) : std::string();
}

const std::vector<std::string>& ResultColumns() {
  static const std::vector<std::string> kColumns = {
      "experiment_id", "kind",           "theta_or_alpha", "n",
      "m",             "trials",         "mc_mean",        "mc_stderr",
      "analytic_exact", "analytic_asymptotic", "normalized_mc", "normalized_exact",
      "seed",          "rank",           "noise_sd",       "eps",
      "tau"};
  return kColumns;
}

std::string RenderResultTable(const std::vector<ResultRow>& rows) {
  std::string out = RenderLine(ResultColumns());
  for (const ResultRow& r : rows) {
    out += RenderLine({r.experiment_id, r.kind, FormatNumber(r.theta_or_alpha),
                       std::to_string(r.n), std::to_string(r.m), std::to_string(r.trials),
                       FormatNumber(r.mc_mean), FormatNumber(r.mc_stderr),
                       FormatNumber(r.analytic_exact), FormatNumber(r.analytic_asymptotic),
                       FormatNumber(r.normalized_mc), FormatNumber(r.normalized_exact),
                       std::to_string(r.seed), std::to_string(r.rank), FormatNumber(r.noise_sd),
                       FormatNumber(r.eps), FormatNumber(r.tau)});
  }
  return out;
}

std::string RenderCsv(const CsvTable& table) {
  std::string out = RenderLine(table.header);
  for (const auto& row : table.rows) out += RenderLine(row);
  return out;
}

std::filesystem::path ResolveOutputDir(const RunOptions& options, const SuiteConfig& config) {
  if (options.out_dir) return *options.out_dir;
  if (const char* env = std::getenv("ICL_LAB_OUT"); env != nullptr && *env != '\0') return env;
  if (config.output_dir) return *config.output_dir;
  return "results";
}

RunReport RunSuite(const std::filesystem::path& config_path, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  std::ifstream f(config_path, std::ios::binary);
  if (!f) throw SchemaError(config_path.string(), "cannot read configuration file");
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  SuiteConfig config = ParseSuiteConfig(bytes);
  if (options.seed_override) {
    for (auto& spec : config.experiments) spec.seed = *options.seed_override;
  }

  RunReport report;
  report.out_dir = ResolveOutputDir(options, config);
  std::filesystem::create_directories(report.out_dir);

  json::array_t experiments;
  for (const ExperimentSpec& spec : config.experiments) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentOutput result = RunExperiment(spec, options.threads);
    const std::filesystem::path table = report.out_dir / (spec.id + ".csv");
    WriteFile(table, RenderResultTable(result.rows));
    report.files.push_back(table);
    json::array_t aux_files;
    for (const auto& [suffix, csv] : result.aux) {
      const std::filesystem::path p = report.out_dir / (spec.id + "_" + suffix + ".csv");
      WriteFile(p, RenderCsv(csv));
      report.files.push_back(p);
      aux_files.push_back(p.filename().string());
    }
    for (const auto& note : result.notes) report.notes.push_back(spec.id + ": " + note);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    experiments.push_back(json{{"id", spec.id},
                               {"kind", ToString(spec.kind)},
                               {"seed", spec.seed},
                               {"table", table.filename().string()},
                               {"aux", aux_files},
                               {"rows", result.rows.size()},
                               {"notes", result.notes},
                               {"wall_seconds", secs}});
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json manifest = {
      {"tool", "icl_lab"},
      {"version", kToolVersion},
      {"schema_version", config.schema_version},
      {"config_path", config_path.string()},
      {"config_sha256", Sha256Hex(bytes)},
      {"threads", options.threads},
      {"seed_override", options.seed_override ? json(*options.seed_override) : json(nullptr)},
      {"libraries",
       {{"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION,
                              EIGEN_MINOR_VERSION)},
        {"boost", BOOST_LIB_VERSION},
        {"fmt", fmt::format("{}", FMT_VERSION)},
        {"openssl", OpenSSL_version(OPENSSL_VERSION)}}},
      {"compiler", __VERSION__},
      {"experiments", experiments},
      {"wall_seconds", report.wall_seconds}};
  const std::filesystem::path manifest_path = report.out_dir / "manifest.json";
  WriteFile(manifest_path, manifest.dump(2) + "\n");
  report.files.push_back(manifest_path);
  return report;
}

const std::vector<BundledExperiment>& BundledExperiments() {
  static const std::vector<BundledExperiment> kBundled = {
      {"fig2-left", "Fig. 2 (left)", "single-shift-sweep",
       "single-subspace training; risk vs prompt length for each test angle"},
      {"fig2-theta", "Fig. 2 (left), angle cross-section", "single-shift-sweep",
       "single-subspace training at n=m=250 on a 17-point angle grid; tracks r sin^2(theta)"},
      {"fig3-left", "Fig. 3 (left)", "mixture-sweep",
       "two-subspace mixture training; risk vs prompt length, near zero for every angle"},
      {"fig4-left", "Fig. 4 (left)", "phase-plot",
       "mixture training; angle x prompt length phase grid with tau column"},
      {"fig4-right", "Fig. 4 (right)", "gatmiry",
       "Sigma_s = I_5, Sigma_t = V diag(1,1,1/2,1/4,1) V^T; risk vs prompt length"},
      {"fig6-left", "Fig. 6 (left)", "lora-analytic",
       "analytic LoRA adapters on U_{s,perp}; risk vs prompt length per angle"},
      {"fig6-right", "Fig. 6 (right)", "lora-train",
       "gradient-descent LoRA on U_{2r} tasks, 5 seeds; subspace error to the analytic adapters"},
      {"fig7-linear", "Fig. 7 (linear analogue)", "k-mixture-span",
       "three-subspace mixture training; test tasks across the span"},
      {"fig8", "Fig. 8", "lora-rank2r",
       "rank-2r adapters on U_{2r} tasks; learned subspace and adapter spectrum"},
      {"fig9", "Fig. 9", "feature-shift-sweep",
       "feature covariance shift at eps=0.1; risk vs angle with tau column"},
      {"threshold-table", "Thm. 1 / Thm. 2 / Cor. 1 thresholds", "threshold-table",
       "smallest prompt length with closed-form risk below sigma^2 + delta"},
  };
  return kBundled;
}

std::string Sha256Hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

}  // namespace icl
