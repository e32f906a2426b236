#pragma once

#include "otmatch/feature_set.hpp"

#include <stdexcept>
#include <string>
#include <utility>

namespace otmatch {

// Regularized transportation problem
//
//   minimize   (reg/2) ||X||^2  +  sum_{i,j} cost_{i,j} x_{i,j}
//   subject to x_{i,j} >= 0
//              sum_j x_{i,j} = supplies_i     (m rows)
//              sum_i x_{i,j} = demands_j      (n rows)
//
// With balanced marginals the m+n equality rows have rank m+n-1, so the
// last demand row is always dropped from the solved system. The flow is
// vectorized row-major: entry (i, j) is component i*n + j.

constexpr double kMarginalFloor = 1e-3;
constexpr double kDefaultReg = 1e-3;
constexpr double kSolveTolerance = 1e-8;
constexpr int kMaxIterations = 50;

struct TransportProblem {
    Matrix cost;      // m x n
    Vector supplies;  // m, strictly positive
    Vector demands;   // n, strictly positive, sums to sum(supplies)
    double reg = kDefaultReg;

    int suppliers() const { return static_cast<int>(supplies.size()); }
    int demanders() const { return static_cast<int>(demands.size()); }
    int variables() const { return suppliers() * demanders(); }
    int equalities() const { return suppliers() + demanders() - 1; }
};

struct FlowSolution {
    Matrix flow;        // m x n, >= -1e-8 elementwise
    Vector ineq_duals;  // m*n, multipliers of -x <= 0, >= -1e-8
    Vector eq_duals;    // m+n; the dropped (last demand) row's dual is 0
    double objective = 0.0;
    int iterations = 0;
    double residual = 0.0;
};

struct ConvergenceError : std::runtime_error {
    ConvergenceError(const std::string& what, double last_residual)
        : std::runtime_error(what), residual(last_residual) {}
    double residual;
};

/// Marginals from normalized feature sets: s_i = max(0, u_i . sum_j v_j)
/// + floor, d_j = max(0, v_j . sum_i u_i) + floor; demands are then
/// rescaled so totals balance exactly. Throws on channel mismatch.
std::pair<Vector, Vector> build_marginals(const FeatureSet& u, const FeatureSet& v);

/// Validates dimensions and positivity, rebalances demands to the supply
/// total, and fixes reg. Throws std::invalid_argument on bad input.
TransportProblem assemble(Matrix cost, Vector supplies, Vector demands,
                          double reg = kDefaultReg);

/// Primal-dual interior-point solve (Mehrotra predictor-corrector on the
/// reduced equality system). Deterministic. Throws ConvergenceError if the
/// KKT residual does not reach `tolerance` within kMaxIterations.
FlowSolution solve(const TransportProblem& p, double tolerance = kSolveTolerance);

/// Independent oracle: enumerate every active set of the nonnegativity
/// constraints, solve each equality-constrained QP by a dense linear
/// solve, and return the feasible minimizer. Requires m*n <= 9.
FlowSolution solve_reference(const TransportProblem& p);

/// Stacked KKT residual [grad_X L; diag(lambda) f(X); h(X) - b] under the
/// conventions above (f(X) = -X, reduced equality rows). Length
/// m*n + m*n + (m+n-1).
Vector kkt_residual(const TransportProblem& p, const FlowSolution& sol);

/// Dense reduced equality matrix (m+n-1) x (m*n); row i < m sums row i of
/// the flow, row m+j sums column j (j < n-1).
Matrix equality_matrix(int m, int n);

/// Objective value (reg/2)||X||^2 + <cost, X>.
double objective_value(const TransportProblem& p, const Matrix& flow);

// Debug dump: plain text, round-trips with ~1e-16 relative fidelity.
std::string dump_problem(const TransportProblem& p);
TransportProblem parse_problem(const std::string& text);
TransportProblem load_problem(const std::string& path);

}  // namespace otmatch
