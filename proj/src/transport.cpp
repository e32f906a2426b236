#include "otmatch/transport.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace otmatch {

std::pair<Vector, Vector> build_marginals(const FeatureSet& u, const FeatureSet& v) {
    if (u.channels != v.channels)
        throw std::invalid_argument("build_marginals: channel mismatch");
    Vector v_sum = v.data.colwise().sum();
    Vector u_sum = u.data.colwise().sum();
    Vector supplies = (u.data * v_sum).cwiseMax(0.0);
    supplies.array() += kMarginalFloor;
    Vector demands = (v.data * u_sum).cwiseMax(0.0);
    demands.array() += kMarginalFloor;
    demands *= supplies.sum() / demands.sum();
    return {std::move(supplies), std::move(demands)};
}

TransportProblem assemble(Matrix cost, Vector supplies, Vector demands, double reg) {
    const auto m = supplies.size();
    const auto n = demands.size();
    if (m < 1 || n < 1)
        throw std::invalid_argument("assemble: empty marginals");
    if (cost.rows() != m || cost.cols() != n)
        throw std::invalid_argument("assemble: cost shape does not match marginals");
    if (!cost.allFinite() || !supplies.allFinite() || !demands.allFinite())
        throw std::invalid_argument("assemble: non-finite input");
    if (supplies.minCoeff() <= 0.0 || demands.minCoeff() <= 0.0)
        throw std::invalid_argument("assemble: marginals must be strictly positive");
    if (reg < 0.0)
        throw std::invalid_argument("assemble: reg must be nonnegative");
    demands *= supplies.sum() / demands.sum();
    return TransportProblem{std::move(cost), std::move(supplies), std::move(demands), reg};
}

Matrix equality_matrix(int m, int n) {
    Matrix a = Matrix::Zero(m + n - 1, m * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) a(i, i * n + j) = 1.0;
    for (int j = 0; j < n - 1; ++j)
        for (int i = 0; i < m; ++i) a(m + j, i * n + j) = 1.0;
    return a;
}

double objective_value(const TransportProblem& p, const Matrix& flow) {
    return 0.5 * p.reg * flow.squaredNorm() + p.cost.cwiseProduct(flow).sum();
}

namespace {

Vector vectorize(const Matrix& m2) {
    // row-major flattening: (i, j) -> i*n + j
    Vector out(m2.size());
    for (Eigen::Index i = 0; i < m2.rows(); ++i)
        for (Eigen::Index j = 0; j < m2.cols(); ++j) out(i * m2.cols() + j) = m2(i, j);
    return out;
}

Matrix devectorize(const Vector& v, int m, int n) {
    Matrix out(m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out(i, j) = v(i * n + j);
    return out;
}

Vector reduced_rhs(const TransportProblem& p) {
    const int m = p.suppliers(), n = p.demanders();
    Vector b(m + n - 1);
    b.head(m) = p.supplies;
    for (int j = 0; j < n - 1; ++j) b(m + j) = p.demands(j);
    return b;
}

Vector apply_eq(const Vector& x, int m, int n) {
    Vector out = Vector::Zero(m + n - 1);
    for (int i = 0; i < m; ++i) out(i) = x.segment(i * n, n).sum();
    for (int j = 0; j < n - 1; ++j) {
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += x(i * n + j);
        out(m + j) = s;
    }
    return out;
}

Vector apply_eq_t(const Vector& nu, int m, int n) {
    Vector out(m * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out(i * n + j) = nu(i) + (j < n - 1 ? nu(m + j) : 0.0);
    return out;
}

// boundary step: largest a with z + a*dz >= 0 (inf when unconstrained)
double boundary_step(const Vector& z, const Vector& dz) {
    double a = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < z.size(); ++i)
        if (dz(i) < 0.0) a = std::min(a, -z(i) / dz(i));
    return a;
}

Vector pad_eq_duals(const Vector& nu, int m, int n) {
    Vector out = Vector::Zero(m + n);
    out.head(m + n - 1) = nu;
    return out;
}

}  // namespace

FlowSolution solve(const TransportProblem& p, double tolerance) {
    const int m = p.suppliers(), n = p.demanders();
    const int nvar = m * n, neq = m + n - 1;
    const Vector c = vectorize(p.cost);
    const Vector b = reduced_rhs(p);

    Vector x = Vector::Constant(nvar, p.supplies.sum() / nvar);
    Vector lam = Vector::Ones(nvar);
    Vector nu = Vector::Zero(neq);

    Matrix schur(neq, neq);
    Eigen::LLT<Matrix> llt;
    double res = std::numeric_limits<double>::infinity();
    int iter = 0;
    bool converged = false;

    for (iter = 0; iter < kMaxIterations; ++iter) {
        Vector rd = p.reg * x + c - lam + apply_eq_t(nu, m, n);
        Vector rp = apply_eq(x, m, n) - b;
        Vector comp = x.cwiseProduct(lam);
        res = std::max({rd.lpNorm<Eigen::Infinity>(), rp.lpNorm<Eigen::Infinity>(),
                        comp.lpNorm<Eigen::Infinity>()});
        if (res <= tolerance) {
            converged = true;
            break;
        }

        double mu = comp.sum() / nvar;
        Vector dinv = (Vector::Constant(nvar, p.reg) + lam.cwiseQuotient(x)).cwiseInverse();

        schur.setZero();
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                double e = dinv(i * n + j);
                schur(i, i) += e;
                if (j < n - 1) {
                    schur(m + j, m + j) += e;
                    schur(i, m + j) += e;
                    schur(m + j, i) += e;
                }
            }
        }
        llt.compute(schur);
        if (llt.info() != Eigen::Success) {
            // near-singular normal matrix; nudge the diagonal once
            schur.diagonal().array() += 1e-12 * (1.0 + schur.diagonal().maxCoeff());
            llt.compute(schur);
            if (llt.info() != Eigen::Success) break;
        }

        auto newton = [&](const Vector& rhs2) {
            Vector rr = -rd + rhs2.cwiseQuotient(x);
            Vector dnu = llt.solve(apply_eq(dinv.cwiseProduct(rr), m, n) + rp);
            Vector dx = dinv.cwiseProduct(rr - apply_eq_t(dnu, m, n));
            Vector dlam = (rhs2 - lam.cwiseProduct(dx)).cwiseQuotient(x);
            return std::make_tuple(std::move(dx), std::move(dlam), std::move(dnu));
        };

        // predictor
        auto [dxa, dla, dnua] = newton(-comp);
        double apa = std::min(1.0, boundary_step(x, dxa));
        double ada = std::min(1.0, boundary_step(lam, dla));
        double mu_aff = (x + apa * dxa).dot(lam + ada * dla) / nvar;
        double sigma = std::pow(mu_aff / mu, 3);
        sigma = std::clamp(sigma, 0.0, 1.0);

        // corrector
        Vector rhs2 = -comp - dxa.cwiseProduct(dla);
        rhs2.array() += sigma * mu;
        auto [dx, dlam, dnu] = newton(rhs2);
        double ap = std::min(1.0, 0.995 * boundary_step(x, dx));
        double ad = std::min(1.0, 0.995 * boundary_step(lam, dlam));
        x += ap * dx;
        lam += ad * dlam;
        nu += ad * dnu;
    }

    if (!converged)
        throw ConvergenceError("transport solve: no convergence after " +
                                   std::to_string(iter) + " iterations",
                               res);

    FlowSolution sol;
    sol.flow = devectorize(x, m, n);
    sol.ineq_duals = lam;
    sol.eq_duals = pad_eq_duals(nu, m, n);
    sol.objective = objective_value(p, sol.flow);
    sol.iterations = iter;
    sol.residual = res;
    return sol;
}

FlowSolution solve_reference(const TransportProblem& p) {
    const int m = p.suppliers(), n = p.demanders();
    const int nvar = m * n, neq = m + n - 1;
    if (nvar > 9)
        throw std::invalid_argument("solve_reference: instance too large (m*n > 9)");

    const Matrix a_eq = equality_matrix(m, n);
    const Vector b = reduced_rhs(p);
    const Vector c = vectorize(p.cost);

    double best_obj = std::numeric_limits<double>::infinity();
    Vector best_x, best_nu;
    int tried = 0;

    for (unsigned mask = 0; mask < (1u << nvar); ++mask) {
        // rows or columns with every entry pinned to zero cannot carry
        // their positive marginal
        bool infeasible = false;
        for (int i = 0; i < m && !infeasible; ++i) {
            bool all = true;
            for (int j = 0; j < n; ++j)
                if (!(mask & (1u << (i * n + j)))) all = false;
            infeasible = all;
        }
        for (int j = 0; j < n && !infeasible; ++j) {
            bool all = true;
            for (int i = 0; i < m; ++i)
                if (!(mask & (1u << (i * n + j)))) all = false;
            infeasible = all;
        }
        if (infeasible) continue;

        int nact = 0;
        for (int e = 0; e < nvar; ++e)
            if (mask & (1u << e)) ++nact;

        const int dim = nvar + neq + nact;
        Matrix kkt = Matrix::Zero(dim, dim);
        Vector rhs = Vector::Zero(dim);
        kkt.topLeftCorner(nvar, nvar) = p.reg * Matrix::Identity(nvar, nvar);
        kkt.block(0, nvar, nvar, neq) = a_eq.transpose();
        kkt.block(nvar, 0, neq, nvar) = a_eq;
        rhs.head(nvar) = -c;
        rhs.segment(nvar, neq) = b;
        int r = nvar + neq;
        for (int e = 0; e < nvar; ++e) {
            if (mask & (1u << e)) {
                kkt(r, e) = 1.0;
                kkt(e, r) = 1.0;
                ++r;
            }
        }

        Vector z = kkt.fullPivLu().solve(rhs);
        ++tried;
        double scale = std::max(1.0, rhs.lpNorm<Eigen::Infinity>());
        if ((kkt * z - rhs).lpNorm<Eigen::Infinity>() > 1e-8 * scale) continue;

        Vector x = z.head(nvar);
        if (x.minCoeff() < -1e-9) continue;

        double obj = 0.5 * p.reg * x.squaredNorm() + c.dot(x);
        if (obj < best_obj) {
            best_obj = obj;
            best_x = x;
            best_nu = z.segment(nvar, neq);
        }
    }

    if (!best_x.size())
        throw std::runtime_error("solve_reference: no feasible active set");

    FlowSolution sol;
    sol.flow = devectorize(best_x, m, n);
    sol.eq_duals = pad_eq_duals(best_nu, m, n);
    sol.ineq_duals = p.reg * best_x + c + apply_eq_t(best_nu, m, n);
    sol.objective = best_obj;
    sol.iterations = tried;
    sol.residual = kkt_residual(p, sol).lpNorm<Eigen::Infinity>();
    return sol;
}

Vector kkt_residual(const TransportProblem& p, const FlowSolution& sol) {
    const int m = p.suppliers(), n = p.demanders();
    if (sol.flow.rows() != m || sol.flow.cols() != n ||
        sol.ineq_duals.size() != m * n || sol.eq_duals.size() != m + n)
        throw std::invalid_argument("kkt_residual: solution shape mismatch");
    const int nvar = m * n, neq = m + n - 1;
    const Vector x = vectorize(sol.flow);
    const Vector nu = sol.eq_duals.head(neq);

    Vector out(nvar + nvar + neq);
    out.head(nvar) = p.reg * x + vectorize(p.cost) - sol.ineq_duals + apply_eq_t(nu, m, n);
    out.segment(nvar, nvar) = -sol.ineq_duals.cwiseProduct(x);
    out.tail(neq) = apply_eq(x, m, n) - reduced_rhs(p);
    return out;
}

std::string dump_problem(const TransportProblem& p) {
    std::ostringstream os;
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << ' ' << buf;
    };
    os << "m " << p.suppliers() << "\n";
    os << "n " << p.demanders() << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", p.reg);
    os << "reg " << buf << "\n";
    for (int i = 0; i < p.suppliers(); ++i) {
        os << "cost";
        for (int j = 0; j < p.demanders(); ++j) put(p.cost(i, j));
        os << "\n";
    }
    os << "supplies";
    for (int i = 0; i < p.suppliers(); ++i) put(p.supplies(i));
    os << "\ndemands";
    for (int j = 0; j < p.demanders(); ++j) put(p.demands(j));
    os << "\n";
    return os.str();
}

namespace {

[[noreturn]] void parse_fail(int line, const std::string& what) {
    throw std::invalid_argument("parse error at line " + std::to_string(line) +
                                ": " + what);
}

}  // namespace

TransportProblem parse_problem(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    int m = -1, n = -1;
    double reg = kDefaultReg;
    std::vector<Vector> cost_rows;
    Vector supplies, demands;

    auto read_values = [&](std::istringstream& ls, int expect) {
        Vector v(expect);
        for (int k = 0; k < expect; ++k)
            if (!(ls >> v(k))) parse_fail(lineno, "expected " + std::to_string(expect) + " numbers");
        double trailing;
        if (ls >> trailing) parse_fail(lineno, "too many numbers");
        return v;
    };

    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "m") {
            if (!(ls >> m) || m < 1) parse_fail(lineno, "bad supplier count");
        } else if (key == "n") {
            if (!(ls >> n) || n < 1) parse_fail(lineno, "bad demander count");
        } else if (key == "reg") {
            if (!(ls >> reg)) parse_fail(lineno, "bad reg value");
        } else if (key == "cost") {
            if (n < 1) parse_fail(lineno, "cost before n");
            cost_rows.push_back(read_values(ls, n));
        } else if (key == "supplies") {
            if (m < 1) parse_fail(lineno, "supplies before m");
            supplies = read_values(ls, m);
        } else if (key == "demands") {
            if (n < 1) parse_fail(lineno, "demands before n");
            demands = read_values(ls, n);
        } else {
            parse_fail(lineno, "unknown key '" + key + "'");
        }
    }
    if (m < 1 || n < 1) parse_fail(lineno, "missing m or n");
    if (static_cast<int>(cost_rows.size()) != m)
        parse_fail(lineno, "expected " + std::to_string(m) + " cost rows");
    if (supplies.size() != m) parse_fail(lineno, "missing supplies");
    if (demands.size() != n) parse_fail(lineno, "missing demands");

    Matrix cost(m, n);
    for (int i = 0; i < m; ++i) cost.row(i) = cost_rows[i].transpose();
    return assemble(std::move(cost), std::move(supplies), std::move(demands), reg);
}

TransportProblem load_problem(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open problem file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_problem(buf.str());
}

}  // namespace otmatch
