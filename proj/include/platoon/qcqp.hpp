#pragma once

#include "platoon/common.hpp"

#include <vector>

namespace platoon {

// 1/2 y'Ay + b'y + c <= 0. An empty A marks a linear constraint.
struct QuadConstraint {
  Mat A;
  Vec b;
  double c{0};

  bool linear() const { return A.size() == 0; }
  double eval(const Vec& y) const { return (linear() ? 0.0 : 0.5 * y.dot(A * y)) + b.dot(y) + c; }
  Vec grad(const Vec& y) const { return linear() ? b : Vec(A * y + b); }
};

// min 1/2 y'Py + q'y + r  s.t.  lo <= y <= hi,  cons_j(y) <= 0.
struct ConvexQcqp {
  Mat P;
  Vec q;
  double r{0};
  Vec lo, hi;
  std::vector<QuadConstraint> cons;

  int dim() const { return static_cast<int>(q.size()); }
  double objective(const Vec& y) const { return 0.5 * y.dot(P * y) + q.dot(y) + r; }
  double max_violation(const Vec& y) const;
};

struct QcqpOptions {
  double kkt_tol{1e-8};
  double feas_tol{1e-9};
  double t_init{1.0};
  double mu{10.0};
  int max_newton{400};
  double regularization{1e-12};
};

struct QcqpResult {
  Vec y;
  Vec lambda;                // multipliers of cons
  Vec mu_lo, mu_hi;          // box multipliers
  double kkt_residual{0};
  double max_violation{0};
  int newton_iterations{0};
  bool fast_path{false};
};

// argmin over [lo, hi] of a t^2 + b t, a > 0.
double box_prox(double a, double b, double lo, double hi);

// Primal-dual active set for min 1/2 y'Py + q'y over [lo, hi] given the Cholesky factor of P.
// Returns false if it does not settle on a KKT point.
bool box_qp(const Mat& P, const Vec& q, const Vec& lo, const Vec& hi, const Eigen::LLT<Mat>& full, Vec& y);
QcqpResult qcqp_solve(const ConvexQcqp& problem, const QcqpOptions& options = {}, const Vec* hint = nullptr);

// argmin f(y) + 1/(2 rho) |y - anchor|^2 over the feasible set of problem.
QcqpResult qcqp_prox(const ConvexQcqp& problem, const Vec& anchor, double rho, const QcqpOptions& options = {},
                     const Vec* hint = nullptr);

// Scaled KKT residual of a candidate with the given multipliers.
double kkt_residual(const ConvexQcqp& problem, const Vec& y, const Vec& lambda, const Vec& mu_lo, const Vec& mu_hi);

// Augmented variable layout: agent i holds its own block followed by copies of its neighbours' blocks.
struct AugmentedLayout {
  int n{0};
  int p{0};
  std::vector<std::vector<int>> neighbors;  // 1-based, neighbors[i] for i = 1..n, sorted
  std::vector<int> agent_offset;            // start of agent i's slice

  static AugmentedLayout build(int n, int p, const std::vector<std::vector<int>>& neighbors);
  int agent_dim(int i) const { return p * (1 + static_cast<int>(neighbors[static_cast<std::size_t>(i)].size())); }
  int total_dim() const { return agent_offset.back(); }
  // Offset of vehicle j's block inside agent i's slice, or -1 if absent.
  int local_offset(int i, int j) const;
  Vec agent_slice(const Vec& full, int i) const { return full.segment(agent_offset[static_cast<std::size_t>(i)], agent_dim(i)); }
  // Consensus vector whose copies all equal the owners' blocks.
  Vec broadcast(const Vec& u) const;
  // Owners' blocks, grouped by vehicle.
  Vec owned(const Vec& full) const;
};

Vec project_consensus(const AugmentedLayout& layout, const Vec& u_hat);

}  // namespace platoon
