#pragma once

// Exact information quantities over small discrete joint distributions.

#include <cstdint>
#include <string>
#include <vector>

#include "teb/rng.hpp"

namespace teb {

/// Joint pmf over named finite variables, stored row-major (last axis fastest).
struct JointTable {
  std::vector<std::string> names;
  std::vector<int> cards;
  std::vector<double> probs;

  JointTable() = default;
  JointTable(std::vector<std::string> names, std::vector<int> cards);

  std::size_t axis(const std::string& name) const;
  bool has_axis(const std::string& name) const;
  std::size_t size() const { return probs.size(); }
  /// Per-axis values of flat index `flat`.
  std::vector<int> unravel(std::size_t flat) const;
  std::size_t ravel(const std::vector<int>& values) const;
  double& at(const std::vector<int>& values) { return probs[ravel(values)]; }
  double at(const std::vector<int>& values) const { return probs[ravel(values)]; }
  /// Throws ContractError unless every entry is >= 0 and the sum is 1 within 1e-12.
  void validate() const;
  /// Marginal over `keep`, in the given order.
  JointTable marginal(const std::vector<std::string>& keep) const;
};

/// Row-stochastic conditional table: rows index the conditioning configuration.
struct Channel {
  int rows = 0;
  int cols = 0;
  std::vector<double> p;  // rows * cols

  double operator()(int r, int c) const { return p[static_cast<std::size_t>(r) * cols + c]; }
  void validate(const std::string& what) const;
};

/// I(A;B|C) in nats by direct summation; `c` may be empty.
double cond_mutual_info(const JointTable& j, const std::vector<std::string>& a, const std::vector<std::string>& b,
                        const std::vector<std::string>& c = {});
double entropy(const JointTable& j, const std::vector<std::string>& vars);

/// Closed-form H(Y'|Y) of the K-class switching process with switch probability s.
double switching_te(int classes, double switch_prob);
/// Explicit joint over (Y, X, Y'): Y uniform, X the next class, Y' = X.
JointTable switching_joint(int classes, double switch_prob);

/// p(x,y) is a |X| x |Y| table, flattened row-major.
struct PairTable {
  int nx = 0, ny = 0;
  std::vector<double> p;
};

/// Axes (Y', Z, X, Y): p(x,y) p(y'|x,y) q(z|x,y). Channel rows are x * ny + y.
JointTable build_joint_graph_a(const PairTable& p_xy, const Channel& p_yprime_given_xy, const Channel& q_z_given_xy);
/// Axes (Y', Z, X, Y): p(x,y) q(z|x,y) d(y'|z,y). The d rows are z * ny + y.
JointTable build_joint_graph_b(const PairTable& p_xy, const Channel& q_z_given_xy, const Channel& d_yprime_given_zy);

/// Dirichlet(1) draws.
PairTable random_pair_table(int nx, int ny, CounterRng& rng);
Channel random_channel(int rows, int cols, CounterRng& rng);
/// One-hot rows with uniformly drawn targets.
Channel random_function(int rows, int cols, CounterRng& rng);

struct InequalitySuiteResult {
  int instances = 0;
  double max_graph_a_gap = -1e300;     // max of I(Y';Z|Y) - I(Y';X|Y)
  double max_graph_b_gap = -1e300;     // max of I(Y';X|Y) - I(Z;X|Y)
  double max_equality_gap = 0;         // max |I(Y';Z|Y) - I(Y';X|Y)| with both independencies
  double max_construction_error = 0;   // largest by-construction conditional independence
  int graph_a_violations = 0;
  int graph_b_violations = 0;
  int equality_violations = 0;

  bool pass(double tol = 1e-9) const;
};

/// `instances` random tables of each kind with cardinalities in [2, max_card].
InequalitySuiteResult check_inequalities(int instances, int max_card, std::uint64_t seed, double tol = 1e-9);

struct ContextCheck {
  double lhs = 0;  // I(X;Y'|C)
  double rhs = 0;  // I(X;Y'|Y)
  bool equal = false;
};

/// Needs axes X, Y, Y' and C.
ContextCheck context_replacement_check(const JointTable& j, double tol = 1e-9);
/// Extends a (Y', X, Y) table with C drawn from p(c|y); rows of the channel index y.
JointTable add_context(const JointTable& yprime_x_y, const Channel& c_given_y);

}  // namespace teb
