#include "otmatch/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace otmatch {

double baseline_distance(const FeatureSet& u, const FeatureSet& v, bool normalize_means) {
    if (u.channels != v.channels)
        throw std::invalid_argument("baseline_distance: channel mismatch");
    GlobalVector gu = gap(u, normalize_means);
    GlobalVector gv = gap(v, normalize_means);
    return 1.0 - gu.dot(gv);
}

double d_w(const Matrix& cost, const Matrix& flow) {
    if (cost.rows() != flow.rows() || cost.cols() != flow.cols())
        throw std::invalid_argument("d_w: cost/flow shape mismatch");
    return cost.cwiseProduct(flow).sum() / (double(cost.rows()) * cost.cols());
}

double d_w(const FeatureSet& u, const FeatureSet& v, const FlowSolution& flow) {
    if (flow.flow.rows() != u.regions() || flow.flow.cols() != v.regions())
        throw std::invalid_argument("d_w: flow does not match feature sets");
    return d_w(pairwise_cost(u, v), flow.flow);
}

AdjacencyMatrix adjacency(const FeatureSet& fs) {
    Matrix rows = fs.normalized().data;
    const int m = fs.regions();
    AdjacencyMatrix a;
    a.size = m;
    a.values = (rows * rows.transpose()) / (double(m) * m);
    return a;
}

Matrix omega(const Matrix& u_rows, const Matrix& v_rows) {
    if (u_rows.rows() != v_rows.rows())
        throw std::invalid_argument("omega: region count mismatch after resizing");
    if (u_rows.cols() != v_rows.cols())
        throw std::invalid_argument("omega: channel mismatch");
    return omega_from_dots(u_rows * v_rows.transpose());
}

Matrix omega_from_dots(const Matrix& dots) {
    if (dots.rows() != dots.cols())
        throw std::invalid_argument("omega_from_dots: square matrix required");
    const int m = static_cast<int>(dots.rows());
    Matrix r = dots.cwiseMax(0.0);
    Matrix out(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            out(i, j) = r(i, i) * r(j, j) * r(i, j) * r(j, i);
    return out;
}

namespace {

struct LatticeSample {
    int lo, hi;
    double frac;
};

// corner-aligned coordinate of output index k on an n-point lattice
LatticeSample lattice_coord(int k, int target, int n) {
    if (target == 1) return {0, n - 1, 0.5};  // all-corners map
    double t = double(k) * (n - 1) / (target - 1);
    int lo = static_cast<int>(std::floor(t));
    if (lo >= n - 1) lo = n - 2 >= 0 ? n - 2 : 0;
    int hi = lo + 1 < n ? lo + 1 : lo;
    double frac = n > 1 ? t - lo : 0.0;
    return {lo, hi, n > 1 ? frac : 0.0};
}

}  // namespace

AdjacencyMatrix resize_adjacency(const AdjacencyMatrix& a, int target) {
    if (target < 1) throw std::invalid_argument("resize_adjacency: target must be >= 1");
    const int n = a.size;
    if (target == n) return a;
    AdjacencyMatrix out;
    out.size = target;
    out.values.resize(target, target);
    const double rescale = (double(n) * n) / (double(target) * target);
    for (int k = 0; k < target; ++k) {
        LatticeSample r = lattice_coord(k, target, n);
        for (int l = 0; l < target; ++l) {
            LatticeSample c = lattice_coord(l, target, n);
            double top = (1.0 - c.frac) * a.values(r.lo, c.lo) + c.frac * a.values(r.lo, c.hi);
            double bot = (1.0 - c.frac) * a.values(r.hi, c.lo) + c.frac * a.values(r.hi, c.hi);
            out.values(k, l) = ((1.0 - r.frac) * top + r.frac * bot) * rescale;
        }
    }
    return out;
}

Matrix resize_feature_rows(const Matrix& rows, int target) {
    const int n = static_cast<int>(rows.rows());
    Matrix out(target, rows.cols());
    for (int k = 0; k < target; ++k) {
        LatticeSample s = lattice_coord(k, target, n);
        out.row(k) = (1.0 - s.frac) * rows.row(s.lo) + s.frac * rows.row(s.hi);
    }
    // resampled rows drift off the unit sphere; restore unit norm
    for (int k = 0; k < target; ++k) {
        double nm = out.row(k).norm();
        if (nm > 0.0)
            out.row(k) /= nm;
        else
            out.row(k) = canonical_unit_vector(static_cast<int>(rows.cols())).transpose();
    }
    return out;
}

namespace {

double d_g_impl(const FeatureSet& u, const FeatureSet& v, bool weighted) {
    if (u.channels != v.channels) throw std::invalid_argument("d_g: channel mismatch");
    const int m = u.regions();
    AdjacencyMatrix au = adjacency(u);
    AdjacencyMatrix av = resize_adjacency(adjacency(v), m);
    Matrix diff = (au.values - av.values).cwiseAbs();
    if (!weighted) return diff.sum();
    Matrix u_rows = u.normalized().data;
    Matrix v_rows = v.regions() == m ? v.normalized().data
                                     : resize_feature_rows(v.normalized().data, m);
    return omega(u_rows, v_rows).cwiseProduct(diff).sum();
}

// d normalize(z) / dz applied to a cotangent: (g - (g.y) y) / |z|
Eigen::RowVectorXd normalize_pullback(const Eigen::RowVectorXd& raw,
                                      const Eigen::RowVectorXd& unit,
                                      const Eigen::RowVectorXd& grad_unit) {
    double nm = raw.norm();
    if (nm <= 0.0) return Eigen::RowVectorXd::Zero(raw.size());
    return (grad_unit - grad_unit.dot(unit) * unit) / nm;
}

}  // namespace

double d_g(const FeatureSet& u, const FeatureSet& v) { return d_g_impl(u, v, true); }

double d_g_naive(const FeatureSet& u, const FeatureSet& v) { return d_g_impl(u, v, false); }

FeatureGrads d_g_gradient(const FeatureSet& u, const FeatureSet& v) {
    if (u.channels != v.channels)
        throw std::invalid_argument("d_g_gradient: channel mismatch");
    if (u.regions() != v.regions())
        throw std::invalid_argument("d_g_gradient: region counts must match");
    const int m = u.regions();
    const double inv_m2 = 1.0 / (double(m) * m);

    Matrix uh = u.normalized().data;
    Matrix vh = v.normalized().data;
    Matrix g = uh * vh.transpose();
    Matrix r = g.cwiseMax(0.0);
    Matrix au = (uh * uh.transpose()) * inv_m2;
    Matrix av = (vh * vh.transpose()) * inv_m2;
    Matrix delta = au - av;

    // weight on each adjacency difference, and loss sensitivity to omega
    Matrix w(m, m), e(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            double om = r(i, i) * r(j, j) * r(i, j) * r(j, i);
            double sgn = delta(i, j) > 0.0 ? 1.0 : (delta(i, j) < 0.0 ? -1.0 : 0.0);
            w(i, j) = om * sgn;
            e(i, j) = std::abs(delta(i, j));
        }
    }

    // adjacency path (w is symmetric)
    Matrix duh = (2.0 * inv_m2) * (w * uh);
    Matrix dvh = (-2.0 * inv_m2) * (w * vh);

    // omega path: accumulate into the clamped cross-dot matrix
    Matrix dr = Matrix::Zero(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            double ev = e(i, j);
            if (ev == 0.0) continue;
            dr(i, i) += ev * r(j, j) * r(i, j) * r(j, i);
            dr(j, j) += ev * r(i, i) * r(i, j) * r(j, i);
            dr(i, j) += ev * r(i, i) * r(j, j) * r(j, i);
            dr(j, i) += ev * r(i, i) * r(j, j) * r(i, j);
        }
    }
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            if (g(i, j) <= 0.0) dr(i, j) = 0.0;
    duh += dr * vh;
    dvh += dr.transpose() * uh;

    FeatureGrads out;
    out.du.resize(m, u.channels);
    out.dv.resize(m, v.channels);
    for (int i = 0; i < m; ++i) {
        out.du.row(i) = normalize_pullback(u.data.row(i), uh.row(i), duh.row(i));
        out.dv.row(i) = normalize_pullback(v.data.row(i), vh.row(i), dvh.row(i));
    }
    return out;
}

double triplet(double beta_pos, double beta_neg, double margin) {
    if (margin <= 0.0) throw std::invalid_argument("triplet: margin must be positive");
    return std::max(0.0, margin + beta_pos - beta_neg);
}

double total_loss(double region_loss, double struct_loss, const LossConfig& cfg) {
    return region_loss + cfg.alpha * struct_loss;
}

}  // namespace otmatch
