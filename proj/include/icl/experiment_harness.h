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

#ifndef ICL_EXPERIMENT_HARNESS_H_
#define ICL_EXPERIMENT_HARNESS_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "icl/linear_attention.h"
#include "icl/monte_carlo.h"
#include "icl/risk_analytics.h"

namespace icl {

inline constexpr int kSchemaVersion = 1;
inline constexpr char kToolVersion[] = "1.0.0";

enum class ExperimentKind {
  kSingleShiftSweep,
  kMixtureSweep,
  kKMixtureSpan,
  kPhasePlot,
  kGatmiry,
  kLoraAnalytic,
  kLoraTrain,
  kLoraRank2r,
  kFeatureShiftSweep,
  kThresholdTable,
};

std::string ToString(ExperimentKind kind);
std::optional<ExperimentKind> ParseExperimentKind(std::string_view name);

struct ExperimentSpec {
  std::string id;
  ExperimentKind kind = ExperimentKind::kSingleShiftSweep;
  int d = 20;
  int rank = 5;
  double eps = 1e-6;
  double noise_sd = 0.0;
  std::vector<double> theta_grid;  // radians
  std::vector<int> prompt_lengths;
  // Fixes n while m runs over prompt_lengths; otherwise n = m.
  std::optional<int> train_length;
  int64_t trials = 10000;
  uint64_t seed = 0;
  SamplingMode sampling = SamplingMode::kAuto;

  // k-mixture-span.
  int components = 3;
  std::vector<std::vector<double>> alpha_sets;

  // lora-analytic.
  LoraScale lambda_convention = LoraScale::kBalanced;

  // lora-train, lora-rank2r.
  std::vector<uint64_t> train_seeds;
  int iterations = 20000;
  double learning_rate = 2e-3;
  int batch_size = 32;
  double init_scale = 0.01;
  double early_stop_error = 0.05;
  int snapshot_stride = 100;

  // threshold-table.
  std::vector<int> ranks;
  std::vector<double> noise_sds;
  std::vector<double> deltas;
  std::vector<ThresholdKind> families;
};

struct SuiteConfig {
  int schema_version = kSchemaVersion;
  std::optional<std::string> output_dir;
  std::vector<ExperimentSpec> experiments;
};

// Throws SchemaError naming the offending field, e.g. "experiments[0].rank".
SuiteConfig ParseSuiteConfig(std::string_view json_text);
SuiteConfig LoadSuiteConfig(const std::filesystem::path& path);

struct ResultRow {
  std::string experiment_id;
  std::string kind;
  double theta_or_alpha = 0.0;
  int64_t n = 0;
  int64_t m = 0;
  int64_t trials = 0;
  std::optional<double> mc_mean;
  std::optional<double> mc_stderr;
  std::optional<double> analytic_exact;
  std::optional<double> analytic_asymptotic;
  std::optional<double> normalized_mc;
  std::optional<double> normalized_exact;
  uint64_t seed = 0;
  int rank = 0;
  double noise_sd = 0.0;
  std::optional<double> eps;
  std::optional<double> tau;
};

// Header plus rows of preformatted cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct ExperimentOutput {
  std::vector<ResultRow> rows;
  // (file suffix, table), written as <id>_<suffix>.csv.
  std::vector<std::pair<std::string, CsvTable>> aux;
  std::vector<std::string> notes;
};

// `threads` only affects speed.
ExperimentOutput RunExperiment(const ExperimentSpec& spec, int threads = 1);

// 17 significant digits; NaN and absent values are empty cells.
std::string FormatNumber(double value);
std::string FormatNumber(const std::optional<double>& value);
const std::vector<std::string>& ResultColumns();
std::string RenderResultTable(const std::vector<ResultRow>& rows);
std::string RenderCsv(const CsvTable& table);

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  int threads = 1;
  std::optional<uint64_t> seed_override;
};

struct RunReport {
  std::filesystem::path out_dir;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> notes;
  double wall_seconds = 0.0;
};

// Output directory: options.out_dir, then $ICL_LAB_OUT, then the config's
// output_dir, then "results".
std::filesystem::path ResolveOutputDir(const RunOptions& options, const SuiteConfig& config);

RunReport RunSuite(const std::filesystem::path& config_path, const RunOptions& options);

struct BundledExperiment {
  std::string id;
  std::string figure;
  std::string kind;
  std::string description;
};
const std::vector<BundledExperiment>& BundledExperiments();

std::string Sha256Hex(std::string_view bytes);

}  // namespace icl

#endif  // ICL_EXPERIMENT_HARNESS_H_
