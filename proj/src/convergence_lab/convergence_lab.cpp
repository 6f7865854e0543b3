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

#include "selfdistill/convergence_lab.hpp"

#include <cmath>
#include <limits>

namespace selfdistill::convergence {
namespace {

Eigen::MatrixXd gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.normal();
  }
  return m;
}

Eigen::VectorXd gaussian_vector(Rng& rng, std::size_t n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  return v;
}

// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
// of R's diagonal folded into Q.
Eigen::MatrixXd random_orthogonal(Rng& rng, std::size_t n) {
  const Eigen::MatrixXd g = gaussian_matrix(rng, n, n);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < q.cols(); ++i) {
    if (r(i, i) < 0) q.col(i) *= -1.0;
  }
  return q;
}

Eigen::MatrixXd matrix_with_norm(Rng& rng, std::size_t n, double target) {
  if (target == 0.0) return Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd s(n);
  s(0) = target;
  for (std::size_t i = 1; i < n; ++i) s(i) = target * rng.uniform(0.05, 1.0);
  const Eigen::MatrixXd u = random_orthogonal(rng, n);
  const Eigen::MatrixXd v = random_orthogonal(rng, n);
  return u * s.asDiagonal() * v.transpose();
}

}  // namespace

double spectral_norm(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()(0);
}

double spectral_radius(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

AffineSystem make_system(Eigen::MatrixXd a_g, Eigen::VectorXd b_g, Eigen::MatrixXd a_t, Eigen::VectorXd c_t) {
  const auto n = b_g.size();
  if (n == 0 || a_g.rows() != n || a_g.cols() != n || a_t.rows() != n || a_t.cols() != n || c_t.size() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "affine system parts disagree on dimension");
  }
  AffineSystem s{std::move(a_g), std::move(b_g), std::move(a_t), std::move(c_t), 0.0, 0.0};
  s.l_g = spectral_norm(s.a_g);
  s.l_t = spectral_norm(s.a_t);
  return s;
}

AffineSystem make_affine_system(std::uint64_t seed, std::size_t n, double target_lt, double target_lg) {
  if (n == 0) throw Error(ErrorCode::kBadDims, "system dimension must be positive");
  if (!std::isfinite(target_lt) || !std::isfinite(target_lg) || target_lt < 0.0 || target_lg < 0.0) {
    throw Error(ErrorCode::kBadTargets, "Lipschitz targets must be finite and non-negative");
  }
  Rng rng(seed);
  auto a_g = matrix_with_norm(rng, n, target_lg);
  auto b_g = gaussian_vector(rng, n);
  auto a_t = matrix_with_norm(rng, n, target_lt);
  auto c_t = gaussian_vector(rng, n);
  return make_system(std::move(a_g), std::move(b_g), std::move(a_t), std::move(c_t));
}

double lipschitz_probe(const AffineSystem& sys, std::size_t pairs, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < pairs; ++k) {
    const auto x = gaussian_vector(rng, sys.n());
    const auto y = gaussian_vector(rng, sys.n());
    const double dxy = (x - y).norm();
    if (dxy == 0.0) continue;
    worst = std::max(worst, (sys.phi(x) - sys.phi(y)).norm() / dxy);
  }
  return worst;
}

Trajectory iterate_self_distillation(const AffineSystem& sys, const Eigen::VectorXd& m0, std::size_t steps) {
  if (static_cast<std::size_t>(m0.size()) != sys.n()) {
    throw Error(ErrorCode::kDimensionMismatch, "start state has the wrong dimension");
  }
  if (steps == 0) throw Error(ErrorCode::kInvalidArgument, "steps must be positive");
  Trajectory t;
  t.status = sys.contraction() < 1.0 ? TrajectoryStatus::kContractive : TrajectoryStatus::kNonContractive;
  t.states.reserve(steps + 1);
  t.states.push_back(m0);
  for (std::size_t i = 0; i < steps; ++i) {
    t.states.push_back(sys.phi(t.states.back()));
    t.step_sizes.push_back((t.states.back() - t.states[t.states.size() - 2]).norm());
  }
  const Eigen::MatrixXd composed = sys.a_t * sys.a_g;
  if (spectral_radius(composed) < 1.0) {
    const auto n = static_cast<Eigen::Index>(sys.n());
    const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n, n) - composed;
    const Eigen::VectorXd rhs = sys.a_t * sys.b_g + sys.c_t;
    Eigen::VectorXd m = lhs.colPivHouseholderQr().solve(rhs);
    m += lhs.colPivHouseholderQr().solve(rhs - lhs * m);
    t.fixed_point = std::move(m);
    for (const auto& s : t.states) t.distances.push_back((s - *t.fixed_point).norm());
  }
  return t;
}

ContractionReport verify_contraction(const Trajectory& traj, const AffineSystem& sys, double rtol) {
  ContractionReport r;
  r.q = sys.contraction();
  r.status = r.q < 1.0 ? TrajectoryStatus::kContractive : TrajectoryStatus::kNonContractive;
  if (traj.fixed_point) r.nash_residual = (*traj.fixed_point - sys.phi(*traj.fixed_point)).norm();

  // Without a fixed point, successive step sizes stand in for distances.
  const std::vector<double>& d = traj.fixed_point ? traj.distances : traj.step_sizes;
  if (!d.empty()) {
    const double scale = (traj.fixed_point ? traj.fixed_point->norm() : traj.states.front().norm()) + d.front();
    r.abs_floor = 64.0 * std::numeric_limits<double>::epsilon() * scale;
    double qi = 1.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      StepCheck c;
      c.step = i;
      c.distance = d[i];
      c.bound = qi * d.front();
      c.bound_ok = d[i] <= c.bound * (1.0 + rtol) + r.abs_floor;
      if (i > 0) {
        if (d[i - 1] > 0.0) c.ratio = d[i] / d[i - 1];
        c.ratio_ok = d[i] <= std::min(r.q, 1.0) * d[i - 1] * (1.0 + rtol) + r.abs_floor;
      }
      r.ratio_violations += !c.ratio_ok;
      r.bound_violations += !c.bound_ok;
      r.steps.push_back(c);
      qi *= r.q;
    }
  }
  const bool nash_ok = r.nash_residual && *r.nash_residual <= kNashTolerance;
  r.pass = r.status == TrajectoryStatus::kContractive && r.ratio_violations == 0 && r.bound_violations == 0 && nash_ok;
  return r;
}

void write_csv(std::ostream& out, const ContractionReport& report) {
  out.precision(17);
  out << "step,distance,bound,ratio\n";
  for (const auto& s : report.steps) {
    out << s.step << ',' << s.distance << ',' << s.bound << ',';
    if (s.ratio) out << *s.ratio;
    out << '\n';
  }
}

}  // namespace selfdistill::convergence
