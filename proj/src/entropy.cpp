#include "repgan/entropy.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "repgan/rng.hpp"

namespace repgan::entropy {

namespace {

double xlogy(double x, double y) { return x > 0.0 ? x * std::log(y) : 0.0; }

}  // namespace

void DiscreteJoint::validate() const {
  if (table.rows() < 1 || table.cols() < 1 || table.rows() > kMaxAlphabet ||
      table.cols() > kMaxAlphabet)
    throw std::invalid_argument("DiscreteJoint: alphabet size out of range");
  if ((table.array() < 0.0).any()) throw std::invalid_argument("DiscreteJoint: negative entry");
  if (std::abs(table.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("DiscreteJoint: total mass differs from 1");
}

Eigen::MatrixXd DiscreteJoint::conditional_x_given_z() const {
  Eigen::MatrixXd cond = table;
  const Eigen::VectorXd pz = marginal_z();
  for (Eigen::Index z = 0; z < cond.cols(); ++z) {
    if (pz(z) > 0.0) cond.col(z) /= pz(z);
  }
  return cond;
}

Eigen::MatrixXd DiscreteJoint::conditional_z_given_x() const {
  Eigen::MatrixXd cond = table;
  const Eigen::VectorXd px = marginal_x();
  for (Eigen::Index x = 0; x < cond.rows(); ++x) {
    if (px(x) > 0.0) cond.row(x) /= px(x);
  }
  return cond;
}

double shannon(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) h -= xlogy(p(i), p(i));
  return h;
}

double conditional_entropy(const DiscreteJoint& joint, Direction dir) {
  joint.validate();
  const Eigen::MatrixXd& t = joint.table;
  const Eigen::VectorXd m = dir == Direction::XGivenZ ? joint.marginal_z() : joint.marginal_x();
  double h = 0.0;
  for (Eigen::Index x = 0; x < t.rows(); ++x) {
    for (Eigen::Index z = 0; z < t.cols(); ++z) {
      const double pxz = t(x, z);
      if (pxz <= 0.0) continue;
      const double denom = dir == Direction::XGivenZ ? m(z) : m(x);
      h -= pxz * std::log(pxz / denom);
    }
  }
  return h;
}

double cross_bound(const DiscreteJoint& joint_q, const Eigen::MatrixXd& p_x_given_z) {
  joint_q.validate();
  if (p_x_given_z.rows() != joint_q.table.rows() || p_x_given_z.cols() != joint_q.table.cols())
    throw std::invalid_argument("cross_bound: conditional shape mismatch");
  double bound = 0.0;
  for (Eigen::Index x = 0; x < joint_q.table.rows(); ++x) {
    for (Eigen::Index z = 0; z < joint_q.table.cols(); ++z) {
      const double q = joint_q.table(x, z);
      if (q <= 0.0) continue;
      if (p_x_given_z(x, z) <= 0.0) return std::numeric_limits<double>::infinity();
      bound -= q * std::log(p_x_given_z(x, z));
    }
  }
  return bound;
}

double expected_kl_gap(const DiscreteJoint& joint_q, const Eigen::MatrixXd& p_x_given_z) {
  const Eigen::VectorXd pz = joint_q.marginal_z();
  const Eigen::MatrixXd qc = joint_q.conditional_x_given_z();
  double gap = 0.0;
  for (Eigen::Index z = 0; z < joint_q.table.cols(); ++z) {
    if (pz(z) <= 0.0) continue;
    gap += pz(z) * kl(qc.col(z), p_x_given_z.col(z));
  }
  return gap;
}

double mutual_information(const DiscreteJoint& joint) {
  return shannon(joint.marginal_x()) - conditional_entropy(joint, Direction::XGivenZ);
}

double kl(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl: length mismatch");
  double d = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) <= 0.0) continue;
    if (q(i) <= 0.0) throw std::invalid_argument("kl: support(p) not within support(q)");
    d += p(i) * std::log(p(i) / q(i));
  }
  return d;
}

double js(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  const Eigen::VectorXd m = 0.5 * (p + q);
  return 0.5 * kl(p, m) + 0.5 * kl(q, m);
}

BoundTrialSummary run_bound_trials(int trials, std::uint64_t seed, double tol) {
  RngStream rng(seed);
  BoundTrialSummary summary;
  summary.trials.reserve(static_cast<std::size_t>(trials));
  for (int i = 0; i < trials; ++i) {
    const int nx = 2 + rng.uniform_int(7);
    const int nz = 2 + rng.uniform_int(7);
    DiscreteJoint joint;
    joint.table.resize(nx, nz);
    for (Eigen::Index r = 0; r < nx; ++r)
      for (Eigen::Index c = 0; c < nz; ++c)
        joint.table(r, c) = -std::log(1.0 - rng.uniform());  // Exp(1) -> Dirichlet after renorm
    joint.table /= joint.table.sum();

    Eigen::MatrixXd p_cond(nx, nz);
    for (Eigen::Index c = 0; c < nz; ++c) {
      for (Eigen::Index r = 0; r < nx; ++r) p_cond(r, c) = -std::log(1.0 - rng.uniform());
      p_cond.col(c) /= p_cond.col(c).sum();
    }

    BoundTrial t;
    t.h_x_given_z = conditional_entropy(joint, Direction::XGivenZ);
    t.bound = cross_bound(joint, p_cond);
    t.gap = expected_kl_gap(joint, p_cond);
    t.bound_holds = t.bound >= t.h_x_given_z - tol;
    t.gap_matches = std::abs((t.bound - t.h_x_given_z) - t.gap) <= tol * std::max(1.0, t.bound);
    const double attained = cross_bound(joint, joint.conditional_x_given_z());
    t.equality_case_ok = std::abs(attained - t.h_x_given_z) <= tol * std::max(1.0, attained);
    if (!(t.bound_holds && t.gap_matches && t.equality_case_ok)) summary.failures++;
    summary.trials.push_back(t);
  }
  return summary;
}

}  // namespace repgan::entropy
