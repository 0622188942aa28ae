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

#ifndef ICL_ACCEPTANCE_H_
#define ICL_ACCEPTANCE_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace icl {

struct CriterionResult {
  std::string id;
  std::string title;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string relation;  // how measured must compare to tolerance
  std::string detail;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  int threads = 1;
  uint64_t seed = 2026;
  std::vector<std::string> criteria;  // empty runs all
};

// {"schema_version": 1, "suite": "acceptance", "threads": N, "seed": S,
//  "criteria": ["A1", ...]}; throws SchemaError.
AcceptanceOptions ParseAcceptanceConfig(std::string_view json_text);
AcceptanceOptions LoadAcceptanceConfig(const std::filesystem::path& path);

const std::vector<std::string>& AcceptanceCriteria();

// Throws ConfigurationError for an unknown id.
CriterionResult RunCriterion(std::string_view id, const AcceptanceOptions& options);

std::vector<CriterionResult> RunAcceptance(
    const AcceptanceOptions& options,
    const std::function<void(const CriterionResult&)>& on_result = {});

// One line: id, PASS/FAIL, measured vs tolerance, seconds, detail.
std::string FormatCriterion(const CriterionResult& result);

}  // namespace icl

#endif  // ICL_ACCEPTANCE_H_
