#include "otmatch/train.hpp"

#include "otmatch/diffgrad.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

namespace otmatch {

EmbeddingParams random_embedding(int c_in, int c_out, std::uint64_t seed,
                                 double learning_rate) {
    if (c_in < 1 || c_out < 2)
        throw std::invalid_argument("random_embedding: need c_in >= 1, c_out >= 2");
    std::mt19937_64 engine(mix_seed(seed, 0x656d6264ULL));
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(double(c_in)));
    EmbeddingParams params;
    params.weight.resize(c_in, c_out);
    for (int i = 0; i < c_in; ++i)
        for (int j = 0; j < c_out; ++j) params.weight(i, j) = gauss(engine);
    params.learning_rate = learning_rate;
    return params;
}

FeatureSet embed(const EmbeddingParams& params, const FeatureSet& fs) {
    if (fs.channels != params.weight.rows())
        throw std::invalid_argument("embed: channel mismatch with weight");
    FeatureSet out(fs.height, fs.width, static_cast<int>(params.weight.cols()),
                   fs.data * params.weight);
    return out.normalized();
}

namespace {

struct PairForward {
    TransportProblem problem;
    FlowSolution solution;
    double dw = 0.0;
};

PairForward forward_pair(const FeatureSet& u, const FeatureSet& v,
                         const TrainOptions& opts) {
    PairForward f;
    auto [supplies, demands] = build_marginals(u, v);
    f.problem =
        assemble(pairwise_cost(u, v), std::move(supplies), std::move(demands), opts.reg);
    f.solution = solve(f.problem, opts.solve_tolerance);
    f.dw = d_w(f.problem.cost, f.solution.flow);
    return f;
}

// gradient of d_w with the transport plan held fixed (direct cost term only)
FeatureGrads d_w_direct_gradient(const FeatureSet& u, const FeatureSet& v,
                                 const FlowSolution& sol) {
    const double inv_mn = 1.0 / (double(u.regions()) * v.regions());
    FeatureGrads g;
    g.du = -inv_mn * (sol.flow * v.data);
    g.dv = -inv_mn * (sol.flow.transpose() * u.data);
    return g;
}

// pull the gradient on the unit rows back through z -> z/|z| and onto W
void accumulate_weight_grad(const FeatureSet& raw, const Matrix& weight,
                            const FeatureSet& embedded, const Matrix& d_embedded,
                            Matrix& d_weight) {
    Matrix z = raw.data * weight;
    Matrix dz(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        double nm = z.row(i).norm();
        if (nm <= 0.0) {
            dz.row(i).setZero();
            continue;
        }
        const auto& y = embedded.data.row(i);
        dz.row(i) = (d_embedded.row(i) - d_embedded.row(i).dot(y) * y) / nm;
    }
    d_weight += raw.data.transpose() * dz;
}

}  // namespace

StepResult evaluate_loss(const EmbeddingParams& params, const Triplet& trip,
                         const TrainOptions& opts) {
    StepResult r;
    try {
        FeatureSet es = embed(params, trip.sketch);
        FeatureSet ep = embed(params, trip.photo_pos);
        FeatureSet en = embed(params, trip.photo_neg);
        PairForward pos = forward_pair(es, ep, opts);
        PairForward neg = forward_pair(es, en, opts);
        r.loss_region = triplet(pos.dw, neg.dw, opts.loss.margin_region);
        r.loss_struct = triplet(d_g(es, ep), d_g(es, en), opts.loss.margin_struct);
        r.loss_total = total_loss(r.loss_region, r.loss_struct, opts.loss);
    } catch (const ConvergenceError&) {
        r.skipped = true;
        r.loss_total = r.loss_region = r.loss_struct =
            std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

StepResult train_step(EmbeddingParams& params, const Triplet& trip,
                      const TrainOptions& opts) {
    StepResult r;
    FeatureSet es, ep, en;
    PairForward pos, neg;
    try {
        es = embed(params, trip.sketch);
        ep = embed(params, trip.photo_pos);
        en = embed(params, trip.photo_neg);
        pos = forward_pair(es, ep, opts);
        neg = forward_pair(es, en, opts);
    } catch (const ConvergenceError& e) {
        std::cerr << "train_step: transport solve failed (" << e.what()
                  << "); step skipped\n";
        r.skipped = true;
        r.loss_total = r.loss_region = r.loss_struct =
            std::numeric_limits<double>::quiet_NaN();
        return r;
    }

    r.loss_region = triplet(pos.dw, neg.dw, opts.loss.margin_region);
    double dg_pos = d_g(es, ep);
    double dg_neg = d_g(es, en);
    r.loss_struct = triplet(dg_pos, dg_neg, opts.loss.margin_struct);
    r.loss_total = total_loss(r.loss_region, r.loss_struct, opts.loss);

    Matrix d_es = Matrix::Zero(es.regions(), es.channels);
    Matrix d_ep = Matrix::Zero(ep.regions(), ep.channels);
    Matrix d_en = Matrix::Zero(en.regions(), en.channels);

    try {
        if (r.loss_region > 0.0) {
            FeatureGrads gp = opts.flow_gradient
                                  ? d_w_gradient(es, ep, pos.problem, pos.solution)
                                  : d_w_direct_gradient(es, ep, pos.solution);
            FeatureGrads gn = opts.flow_gradient
                                  ? d_w_gradient(es, en, neg.problem, neg.solution)
                                  : d_w_direct_gradient(es, en, neg.solution);
            d_es += gp.du - gn.du;
            d_ep += gp.dv;
            d_en -= gn.dv;
        }
        if (r.loss_struct > 0.0) {
            FeatureGrads gp = d_g_gradient(es, ep);
            FeatureGrads gn = d_g_gradient(es, en);
            d_es += opts.loss.alpha * (gp.du - gn.du);
            d_ep += opts.loss.alpha * gp.dv;
            d_en -= opts.loss.alpha * gn.dv;
        }
    } catch (const DegeneracyError& e) {
        std::cerr << "train_step: degenerate flow Jacobian (" << e.what()
                  << "); step skipped\n";
        r.skipped = true;
        return r;
    }

    Matrix d_weight = Matrix::Zero(params.weight.rows(), params.weight.cols());
    accumulate_weight_grad(trip.sketch, params.weight, es, d_es, d_weight);
    accumulate_weight_grad(trip.photo_pos, params.weight, ep, d_ep, d_weight);
    accumulate_weight_grad(trip.photo_neg, params.weight, en, d_en, d_weight);

    params.weight -= params.learning_rate * d_weight;
    ++params.step_count;
    return r;
}

std::vector<Triplet> make_synthetic_triplets(const SceneParams& params, int count,
                                             std::uint64_t seed) {
    if (count < 2) throw std::invalid_argument("make_synthetic_triplets: count < 2");
    std::mt19937_64 engine(mix_seed(seed, 0x74726970ULL));
    std::vector<FeatureSet> photos(count), sketches(count);
    for (int i = 0; i < count; ++i) {
        SceneSpec spec = random_scene_spec(params, engine);
        ScenePair pair = generate_pair(spec, mix_seed(seed, 0x7363ULL, i));
        photos[i] = std::move(pair.photo);
        sketches[i] = std::move(pair.sketch);
    }
    std::vector<Triplet> triplets(count);
    for (int i = 0; i < count; ++i) {
        triplets[i].sketch = sketches[i];
        triplets[i].photo_pos = photos[i];
        triplets[i].photo_neg = photos[(i + 1) % count];
    }
    return triplets;
}

TrainRunResult train_run(EmbeddingParams& params, const std::vector<Triplet>& triplets,
                         int steps, const TrainOptions& opts) {
    if (triplets.empty()) throw std::invalid_argument("train_run: no triplets");
    TrainRunResult result;
    auto mean_loss = [&] {
        double total = 0.0;
        int counted = 0;
        for (const Triplet& t : triplets) {
            StepResult r = evaluate_loss(params, t, opts);
            if (!r.skipped) {
                total += r.loss_total;
                ++counted;
            }
        }
        return counted > 0 ? total / counted : std::numeric_limits<double>::quiet_NaN();
    };
    result.initial_mean_loss = mean_loss();
    result.log.reserve(steps);
    for (int s = 0; s < steps; ++s) {
        StepResult r = train_step(params, triplets[s % triplets.size()], opts);
        result.log.push_back({params.step_count, r.loss_total, r.loss_region, r.loss_struct});
    }
    result.final_mean_loss = mean_loss();
    return result;
}

std::string training_log_csv(const std::vector<TrainLogRow>& rows) {
    std::ostringstream os;
    os << "step,loss_total,loss_region,loss_struct\n";
    char buf[128];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof buf, "%ld,%.6f,%.6f,%.6f\n", row.step, row.loss_total,
                      row.loss_region, row.loss_struct);
        os << buf;
    }
    return os.str();
}

}  // namespace otmatch
