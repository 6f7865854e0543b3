// Copyright 2026 The selfdistill Authors.
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

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "selfdistill/common.hpp"

namespace selfdistill::convergence {

// G(M) = A_G M + b_G (data generation), T(D) = A_T D + c_T (training from the
// fixed base model), Phi(M) = T(G(M)).
struct AffineSystem {
  Eigen::MatrixXd a_g;
  Eigen::VectorXd b_g;
  Eigen::MatrixXd a_t;
  Eigen::VectorXd c_t;
  double l_g = 0.0;  // spectral norm of a_g
  double l_t = 0.0;  // spectral norm of a_t

  std::size_t n() const { return static_cast<std::size_t>(b_g.size()); }
  double contraction() const { return l_t * l_g; }
  Eigen::VectorXd generate(const Eigen::VectorXd& m) const { return a_g * m + b_g; }
  Eigen::VectorXd train(const Eigen::VectorXd& d) const { return a_t * d + c_t; }
  Eigen::VectorXd phi(const Eigen::VectorXd& m) const { return train(generate(m)); }
};

double spectral_norm(const Eigen::MatrixXd& a);
double spectral_radius(const Eigen::MatrixXd& a);

// Builds the system from given parts and measures l_g, l_t.
AffineSystem make_system(Eigen::MatrixXd a_g, Eigen::VectorXd b_g, Eigen::MatrixXd a_t, Eigen::VectorXd c_t);

// Random U diag(s) V^T matrices whose largest singular value equals the
// target; offsets are standard normal. Throws BadTargets on a negative or
// non-finite target, BadDims when n == 0.
AffineSystem make_affine_system(std::uint64_t seed, std::size_t n, double target_lt, double target_lg);

// Largest ||Phi(x) - Phi(y)|| / ||x - y|| over random Gaussian pairs.
double lipschitz_probe(const AffineSystem& sys, std::size_t pairs, std::uint64_t seed);

enum class TrajectoryStatus { kContractive, kNonContractive };

struct Trajectory {
  std::vector<Eigen::VectorXd> states;  // M_0 .. M_steps
  std::optional<Eigen::VectorXd> fixed_point;
  std::vector<double> distances;   // ||M_i - M*||, empty without a fixed point
  std::vector<double> step_sizes;  // ||M_{i+1} - M_i||
  TrajectoryStatus status = TrajectoryStatus::kContractive;
};

// M* = (I - A_T A_G)^-1 (A_T b_G + c_T) is solved whenever the spectral
// radius of A_T A_G is below 1. Status is NonContractive when L_T L_G >= 1.
Trajectory iterate_self_distillation(const AffineSystem& sys, const Eigen::VectorXd& m0, std::size_t steps);

struct StepCheck {
  std::size_t step = 0;
  double distance = 0.0;
  double bound = 0.0;             // q^i * distance_0
  std::optional<double> ratio;    // distance_i / distance_{i-1}
  bool ratio_ok = true;
  bool bound_ok = true;
};

struct ContractionReport {
  double q = 0.0;  // L_T * L_G
  TrajectoryStatus status = TrajectoryStatus::kContractive;
  std::vector<StepCheck> steps;
  std::size_t ratio_violations = 0;
  std::size_t bound_violations = 0;
  std::optional<double> nash_residual;  // ||M* - Phi(M*)||
  double abs_floor = 0.0;
  bool pass = false;
};

inline constexpr double kContractionRtol = 1e-6;
inline constexpr double kNashTolerance = 1e-9;

// Step i passes the ratio check when d_i <= min(q, 1) d_{i-1} (1 + rtol) + floor
// (a step that fails to shrink never passes) and
// the bound check when d_i <= q^i d_0 (1 + rtol) + floor. The floor,
// 64 eps (||M*|| + d_0), absorbs rounding once distances reach machine
// precision. Never throws.
ContractionReport verify_contraction(const Trajectory& traj, const AffineSystem& sys,
                                     double rtol = kContractionRtol);

// Columns: step, distance, bound, ratio.
void write_csv(std::ostream& out, const ContractionReport& report);

}  // namespace selfdistill::convergence
