#pragma once

#include "otmatch/transport.hpp"

#include <functional>
#include <string>

namespace otmatch {

// Differentiation of the optimal flow by the implicit function theorem on
// the KKT system of the regularized transportation problem. No solver
// unrolling: one linear solve against the KKT matrix per requested
// direction, sharing a single factorization.

struct DegeneracyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense flow Jacobian for small instances. Pair indices are row-major
/// (i, j) -> i*n + j, so dcost is (m*n) x (m*n) with entry
/// (i*n+j, k*n+l) = d x_{i,j} / d c_{k,l}. The last demand column of
/// ddemand is identically zero: that equality row is the redundant one
/// dropped from the solved system.
struct FlowJacobian {
    int m = 0;
    int n = 0;
    Matrix dcost;    // (m*n) x (m*n)
    Matrix dsupply;  // (m*n) x m
    Matrix ddemand;  // (m*n) x n

    double cost_entry(int i, int j, int k, int l) const {
        return dcost(i * n + j, k * n + l);
    }
    double supply_entry(int i, int j, int k) const { return dsupply(i * n + j, k); }
    double demand_entry(int i, int j, int l) const { return ddemand(i * n + j, l); }
};

/// Gradients of a scalar loss with respect to the rows of the two feature
/// sets (same shapes as u.data / v.data).
struct FeatureGrads {
    Matrix du;
    Matrix dv;
};

/// Cotangents after pulling a flow upstream back through the KKT system.
struct FlowVjp {
    Matrix dcost;      // m x n
    Vector dsupplies;  // m
    Vector ddemands;   // n; last entry 0 (dropped equality row)
};

/// Materialized Jacobian of the flow against cost entries and marginals.
/// Requires a converged, strictly complementary solution; throws
/// DegeneracyError otherwise (a larger reg usually removes the degeneracy).
FlowJacobian flow_jacobian(const TransportProblem& p, const FlowSolution& sol);

/// Vector-Jacobian product: dL/dflow -> (dL/dcost, dL/dmarginals) with one
/// transpose KKT solve. Agrees with contracting flow_jacobian.
FlowVjp flow_vjp(const TransportProblem& p, const FlowSolution& sol,
                 const Matrix& dflow);

/// Chains a flow upstream (and optionally a direct cost upstream) back to
/// the feature rows through both the cost path c_{i,j} = 1 - u_i . v_j and
/// the marginal path (ReLU-floored dot products, demand rebalancing).
/// `p`/`sol` must come from marginals built on (u, v).
FeatureGrads backprop_to_features(const FeatureSet& u, const FeatureSet& v,
                                  const TransportProblem& p, const FlowSolution& sol,
                                  const Matrix& dflow,
                                  const Matrix* dcost_direct = nullptr);

/// Full gradient of d_W(u, v) = (1/mn) sum c_{i,j} x~_{i,j}: flow upstream
/// cost/(mn) plus the direct cost-term upstream flow/(mn).
FeatureGrads d_w_gradient(const FeatureSet& u, const FeatureSet& v,
                          const TransportProblem& p, const FlowSolution& sol);

struct GradCheckReport {
    double max_rel_err = 0.0;
    int worst_coordinate = -1;  // flat index over u.data rows then v.data rows
    double threshold = 1e-3;
    bool pass() const { return max_rel_err <= threshold; }
    std::string to_string() const;
};

using FeatureFn = std::function<double(const FeatureSet&, const FeatureSet&)>;
using FeatureGradFn = std::function<FeatureGrads(const FeatureSet&, const FeatureSet&)>;

/// Central finite differences with step h per coordinate against the
/// analytic gradient. Relative error uses denominator max(|a|, |b|, 1e-8).
/// Throws std::runtime_error if fn returns a non-finite value.
GradCheckReport grad_check(const FeatureFn& fn, const FeatureGradFn& analytic,
                           const FeatureSet& u, const FeatureSet& v, double h,
                           double threshold = 1e-3);

}  // namespace otmatch
