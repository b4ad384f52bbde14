#pragma once

// Exact information-theoretic quantities on small discrete systems, used
// to verify numerically that the reconstruction-style cross terms are
// upper bounds of the matching conditional entropies. Everything is exact
// enumeration in nats; alphabets are capped so no estimation sneaks in.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace repgan::entropy {

inline constexpr int kMaxAlphabet = 64;

// Finite joint probability table p(x,z); rows index X, columns index Z.
struct DiscreteJoint {
  Eigen::MatrixXd table;

  // Throws std::invalid_argument on negative entries, mass != 1 (1e-12),
  // or alphabets larger than kMaxAlphabet.
  void validate() const;

  Eigen::VectorXd marginal_x() const { return table.rowwise().sum(); }
  Eigen::VectorXd marginal_z() const { return table.colwise().sum(); }

  // Conditional table q(x|z) (columns normalized); columns with zero mass
  // stay zero.
  Eigen::MatrixXd conditional_x_given_z() const;
  Eigen::MatrixXd conditional_z_given_x() const;
};

enum class Direction { XGivenZ, ZGivenX };

// Shannon entropy of a distribution, in nats, with 0*log0 := 0.
double shannon(const Eigen::VectorXd& p);

// Exact conditional entropy H(X|Z) or H(Z|X) of a joint, in nats.
double conditional_entropy(const DiscreteJoint& joint, Direction dir);

// The variational upper bound -E_{q(x,z)}[log p(x|z)] for a model
// conditional table p(x|z) (rows X, cols Z, columns are distributions).
// Returns +inf where q puts mass outside p's support.
double cross_bound(const DiscreteJoint& joint_q, const Eigen::MatrixXd& p_x_given_z);

// Expected KL gap E_{q(z)}[KL(q(x|z) || p(x|z))]; cross_bound equals
// conditional_entropy(XGivenZ) + this gap.
double expected_kl_gap(const DiscreteJoint& joint_q, const Eigen::MatrixXd& p_x_given_z);

double mutual_information(const DiscreteJoint& joint);

// KL(p||q) in nats; throws std::invalid_argument if support(p) is not
// contained in support(q).
double kl(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

// Jensen-Shannon divergence 0.5*KL(p||m) + 0.5*KL(q||m), m = (p+q)/2.
double js(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

// Randomized verification of the bound chain on synthetic systems.
struct BoundTrial {
  double h_x_given_z = 0;
  double bound = 0;
  double gap = 0;  // enumerated E_z[KL]
  bool bound_holds = false;
  bool gap_matches = false;     // bound - H == gap within tolerance
  bool equality_case_ok = false;  // plugging q(x|z) itself attains H exactly
};

struct BoundTrialSummary {
  std::vector<BoundTrial> trials;
  int failures = 0;
};

// Runs `trials` random (joint, conditional) pairs with the given seed and
// checks bound >= H(X|Z), gap identity, and the KL=0 equality case, all
// at tolerance `tol`.
BoundTrialSummary run_bound_trials(int trials, std::uint64_t seed, double tol = 1e-12);

}  // namespace repgan::entropy
