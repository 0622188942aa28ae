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

#ifndef ICL_RANDOM_H_
#define ICL_RANDOM_H_

#include <cstdint>
#include <random>

#include <Eigen/Dense>
#include <boost/random/chi_squared_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

namespace icl {

using Engine = std::mt19937_64;

// Engine whose state is a pure function of (seed, stream).
Engine MakeEngine(uint64_t seed, uint64_t stream = 0);

// Mixes a purpose tag into a seed; used to give independent sub-streams to
// the pieces of one experiment (basis, Monte Carlo, training, ...).
uint64_t DeriveSeed(uint64_t seed, uint64_t tag);

class NormalSource {
 public:
  explicit NormalSource(Engine& engine) : engine_(engine) {}

  double operator()() { return normal_(engine_); }

  Eigen::VectorXd Vector(Eigen::Index n);
  Eigen::MatrixXd Matrix(Eigen::Index rows, Eigen::Index cols);
  double ChiSquared(double dof);
  Engine& engine() { return engine_; }

 private:
  Engine& engine_;
  boost::random::normal_distribution<double> normal_;
};

}  // namespace icl

#endif  // ICL_RANDOM_H_
