#include "otmatch/diffgrad.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <cstdio>
#include <sstream>

namespace otmatch {

namespace {

// a weakly active pair drifts to x ~ lambda ~ sqrt(mu) on the central
// path, while benign entries keep one coordinate at its limit value far
// above that scale
double degenerate_threshold(const Vector& x, const Vector& lam) {
    double mu_bar = std::max(x.cwiseProduct(lam).maxCoeff(), 1e-22);
    return std::max(100.0 * std::sqrt(mu_bar), 1e-9);
}

Vector vectorize(const Matrix& m2) {
    Vector out(m2.size());
    for (Eigen::Index i = 0; i < m2.rows(); ++i)
        for (Eigen::Index j = 0; j < m2.cols(); ++j) out(i * m2.cols() + j) = m2(i, j);
    return out;
}

// Factorization of the reduced KKT system
//   [ diag(d)  A^T ] [y1]   [r1]
//   [ A        0   ] [y2] = [r2]
// with d_e = reg + lambda_e / x_e, eliminated through the SPD Schur
// complement S = A diag(1/d) A^T. The block matrix is symmetric, so the
// same factorization serves forward (Jacobian) and transpose (VJP) solves.
class KktSystem {
public:
    KktSystem(const TransportProblem& p, const FlowSolution& sol)
        : m_(p.suppliers()), n_(p.demanders()) {
        if (kkt_residual(p, sol).lpNorm<Eigen::Infinity>() > 1e-6)
            throw std::invalid_argument("flow differentiation: solution not converged");
        const Vector x = vectorize(sol.flow);
        const Vector& lam = sol.ineq_duals;
        const double tau = degenerate_threshold(x, lam);
        for (Eigen::Index e = 0; e < x.size(); ++e)
            if (x(e) < tau && lam(e) < tau)
                throw DegeneracyError(
                    "flow differentiation: weakly active constraint (x and lambda both "
                    "near zero); a larger reg usually restores strict complementarity");
        dinv_ = (Vector::Constant(x.size(), p.reg) + lam.cwiseQuotient(x)).cwiseInverse();

        const int neq = m_ + n_ - 1;
        Matrix schur = Matrix::Zero(neq, neq);
        for (int i = 0; i < m_; ++i) {
            for (int j = 0; j < n_; ++j) {
                double e = dinv_(i * n_ + j);
                schur(i, i) += e;
                if (j < n_ - 1) {
                    schur(m_ + j, m_ + j) += e;
                    schur(i, m_ + j) += e;
                    schur(m_ + j, i) += e;
                }
            }
        }
        ldlt_.compute(schur);
        if (ldlt_.info() != Eigen::Success || !ldlt_.isPositive())
            throw DegeneracyError("flow differentiation: singular KKT system");
    }

    int suppliers() const { return m_; }
    int demanders() const { return n_; }

    void solve(const Vector& r1, const Vector& r2, Vector& y1, Vector& y2) const {
        y2 = ldlt_.solve(apply_eq(dinv_.cwiseProduct(r1)) - r2);
        y1 = dinv_.cwiseProduct(r1 - apply_eq_t(y2));
    }

private:
    Vector apply_eq(const Vector& x) const {
        Vector out = Vector::Zero(m_ + n_ - 1);
        for (int i = 0; i < m_; ++i) out(i) = x.segment(i * n_, n_).sum();
        for (int j = 0; j < n_ - 1; ++j) {
            double s = 0.0;
            for (int i = 0; i < m_; ++i) s += x(i * n_ + j);
            out(m_ + j) = s;
        }
        return out;
    }

    Vector apply_eq_t(const Vector& nu) const {
        Vector out(m_ * n_);
        for (int i = 0; i < m_; ++i)
            for (int j = 0; j < n_; ++j)
                out(i * n_ + j) = nu(i) + (j < n_ - 1 ? nu(m_ + j) : 0.0);
        return out;
    }

    int m_, n_;
    Vector dinv_;
    Eigen::LDLT<Matrix> ldlt_;
};

}  // namespace

FlowJacobian flow_jacobian(const TransportProblem& p, const FlowSolution& sol) {
    KktSystem kkt(p, sol);
    const int m = p.suppliers(), n = p.demanders();
    const int nvar = m * n, neq = m + n - 1;

    FlowJacobian jac;
    jac.m = m;
    jac.n = n;
    jac.dcost.resize(nvar, nvar);
    jac.dsupply.resize(nvar, m);
    jac.ddemand = Matrix::Zero(nvar, n);

    Vector y1, y2;
    Vector r1 = Vector::Zero(nvar);
    Vector r2 = Vector::Zero(neq);
    for (int e = 0; e < nvar; ++e) {
        r1(e) = -1.0;
        kkt.solve(r1, r2, y1, y2);
        jac.dcost.col(e) = y1;
        r1(e) = 0.0;
    }
    for (int r = 0; r < neq; ++r) {
        r2(r) = 1.0;
        kkt.solve(r1, r2, y1, y2);
        if (r < m)
            jac.dsupply.col(r) = y1;
        else
            jac.ddemand.col(r - m) = y1;
        r2(r) = 0.0;
    }
    if (!jac.dcost.allFinite() || !jac.dsupply.allFinite() || !jac.ddemand.allFinite())
        throw DegeneracyError("flow differentiation: non-finite Jacobian");
    return jac;
}

FlowVjp flow_vjp(const TransportProblem& p, const FlowSolution& sol, const Matrix& dflow) {
    if (dflow.rows() != p.suppliers() || dflow.cols() != p.demanders())
        throw std::invalid_argument("flow_vjp: upstream shape mismatch");
    KktSystem kkt(p, sol);
    const int m = p.suppliers(), n = p.demanders();

    Vector w1, w3;
    kkt.solve(vectorize(dflow), Vector::Zero(m + n - 1), w1, w3);

    FlowVjp out;
    out.dcost.resize(m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.dcost(i, j) = -w1(i * n + j);
    out.dsupplies = w3.head(m);
    out.ddemands = Vector::Zero(n);
    out.ddemands.head(n - 1) = w3.tail(n - 1);
    return out;
}

FeatureGrads backprop_to_features(const FeatureSet& u, const FeatureSet& v,
                                  const TransportProblem& p, const FlowSolution& sol,
                                  const Matrix& dflow, const Matrix* dcost_direct) {
    const int m = u.regions(), n = v.regions();
    if (p.suppliers() != m || p.demanders() != n)
        throw std::invalid_argument("backprop_to_features: problem/feature shape mismatch");

    FlowVjp vjp = flow_vjp(p, sol, dflow);
    Matrix dcost = vjp.dcost;
    if (dcost_direct) dcost += *dcost_direct;

    FeatureGrads g;
    // cost path: d c_{i,j} / d u_i = -v_j, d c_{i,j} / d v_j = -u_i
    g.du = -dcost * v.data;
    g.dv = -dcost.transpose() * u.data;

    // marginal path: recompute the forward quantities of build_marginals
    Vector v_sum = v.data.colwise().sum();
    Vector u_sum = u.data.colwise().sum();
    Vector s_pre = u.data * v_sum;
    Vector d_pre = v.data * u_sum;
    Vector s = s_pre.cwiseMax(0.0);
    s.array() += kMarginalFloor;
    Vector d_raw = d_pre.cwiseMax(0.0);
    d_raw.array() += kMarginalFloor;
    double s_total = s.sum();
    double d_total = d_raw.sum();
    double scale = s_total / d_total;

    const Vector& gs = vjp.dsupplies;
    const Vector& gd = vjp.ddemands;

    // demands were rebalanced: d = d_raw * (sum s / sum d_raw)
    double gd_dot = gd.dot(d_raw);
    Vector gs_total = gs;
    gs_total.array() += gd_dot / d_total;
    Vector gd_raw = gd * scale;
    gd_raw.array() -= gd_dot * s_total / (d_total * d_total);

    // ReLU: floored entries (pre <= 0) get subgradient 0
    Vector a = gs_total;
    Vector b = gd_raw;
    for (int i = 0; i < m; ++i)
        if (s_pre(i) <= 0.0) a(i) = 0.0;
    for (int j = 0; j < n; ++j)
        if (d_pre(j) <= 0.0) b(j) = 0.0;

    // s_pre_i = u_i . sum(v): every photo row receives a . u; symmetrically
    // for d_pre_j = v_j . sum(u)
    g.du += a * v_sum.transpose();
    Eigen::RowVectorXd au = a.transpose() * u.data;
    g.dv.rowwise() += au;
    g.dv += b * u_sum.transpose();
    Eigen::RowVectorXd bv = b.transpose() * v.data;
    g.du.rowwise() += bv;
    return g;
}

FeatureGrads d_w_gradient(const FeatureSet& u, const FeatureSet& v,
                          const TransportProblem& p, const FlowSolution& sol) {
    const double inv_mn = 1.0 / (double(u.regions()) * v.regions());
    Matrix dflow = p.cost * inv_mn;
    Matrix dcost_direct = sol.flow * inv_mn;
    return backprop_to_features(u, v, p, sol, dflow, &dcost_direct);
}

std::string GradCheckReport::to_string() const {
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6e", max_rel_err);
    os << "max_rel_err " << buf << "\n";
    os << "worst_coordinate " << worst_coordinate << "\n";
    std::snprintf(buf, sizeof buf, "%.6e", threshold);
    os << "threshold " << buf << "\n";
    os << "result " << (pass() ? "pass" : "fail") << "\n";
    return os.str();
}

GradCheckReport grad_check(const FeatureFn& fn, const FeatureGradFn& analytic,
                           const FeatureSet& u, const FeatureSet& v, double h,
                           double threshold) {
    FeatureGrads g = analytic(u, v);
    GradCheckReport report;
    report.threshold = threshold;

    auto probe = [&](FeatureSet& fs, const FeatureSet& other, bool u_side, Eigen::Index r,
                     Eigen::Index c, double gval, int flat) {
        double saved = fs.data(r, c);
        fs.data(r, c) = saved + h;
        double fp = u_side ? fn(fs, other) : fn(other, fs);
        fs.data(r, c) = saved - h;
        double fm = u_side ? fn(fs, other) : fn(other, fs);
        fs.data(r, c) = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("grad_check: non-finite function value");
        double fd = (fp - fm) / (2.0 * h);
        double rel = std::abs(fd - gval) / std::max({std::abs(fd), std::abs(gval), 1e-8});
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_coordinate = flat;
        }
    };

    FeatureSet up = u, vp = v;
    int flat = 0;
    for (Eigen::Index r = 0; r < up.data.rows(); ++r)
        for (Eigen::Index c = 0; c < up.data.cols(); ++c, ++flat)
            probe(up, v, true, r, c, g.du(r, c), flat);
    for (Eigen::Index r = 0; r < vp.data.rows(); ++r)
        for (Eigen::Index c = 0; c < vp.data.cols(); ++c, ++flat)
            probe(vp, u, false, r, c, g.dv(r, c), flat);
    return report;
}

}  // namespace otmatch
