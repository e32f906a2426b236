#include "otmatch/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace otmatch {

Metric parse_metric(const std::string& name) {
    if (name == "gap") return Metric::Gap;
    if (name == "ot") return Metric::Ot;
    if (name == "ot+adj") return Metric::OtAdj;
    throw std::invalid_argument("unknown metric '" + name + "' (gap | ot | ot+adj)");
}

std::string metric_name(Metric m) {
    switch (m) {
        case Metric::Gap: return "gap";
        case Metric::Ot: return "ot";
        case Metric::OtAdj: return "ot+adj";
    }
    throw std::invalid_argument("bad metric value");
}

void Gallery::add(std::string id, FeatureSet features) {
    features.validate();
    if (index_.count(id)) throw std::invalid_argument("Gallery: duplicate id " + id);
    if (!items_.empty() && items_.front().channels != features.channels)
        throw std::invalid_argument("Gallery: channel mismatch for " + id);
    index_[id] = static_cast<int>(items_.size());
    ids_.push_back(std::move(id));
    items_.push_back(std::move(features));
    prep_.push_back(nullptr);
}

int Gallery::position(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw std::invalid_argument("Gallery: unknown id " + id);
    return it->second;
}

int Gallery::channels() const {
    if (items_.empty()) throw std::invalid_argument("Gallery: empty");
    return items_.front().channels;
}

void Gallery::prepare() const {
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (prep_[i]) continue;
        auto p = std::make_unique<Prepared>();
        p->unit = items_[i].normalized();
        p->gap_dir = gap(items_[i], true);
        p->adjacency = adjacency(items_[i]).values;
        prep_[i] = std::move(p);
        ++prep_count_;
    }
}

namespace {

struct QueryPrep {
    FeatureSet unit;
    GlobalVector gap_dir;
    Matrix adjacency;
};

QueryPrep prep_query(const FeatureSet& query) {
    return {query.normalized(), gap(query, true), adjacency(query).values};
}

struct PairDistances {
    double gap = 0.0;
    double dw = 0.0;
    double dg = 0.0;
};

PairDistances evaluate_pair(const QueryPrep& q, const Gallery::Prepared& item,
                            const ScoringOptions& opts, bool need_ot, bool need_dg) {
    PairDistances out;
    out.gap = 1.0 - q.gap_dir.dot(item.gap_dir);
    if (!need_ot && !need_dg) return out;

    const int m = q.unit.regions(), n = item.unit.regions();
    Matrix dots = q.unit.data * item.unit.data.transpose();
    if (need_ot) {
        Matrix cost = Matrix::Ones(m, n) - dots;
        auto [supplies, demands] = build_marginals(q.unit, item.unit);
        TransportProblem p = assemble(cost, std::move(supplies), std::move(demands), opts.reg);
        FlowSolution sol = solve(p, opts.solve_tolerance);
        out.dw = d_w(p.cost, sol.flow);
    }
    if (need_dg) {
        if (m == n) {
            Matrix diff = (q.adjacency - item.adjacency).cwiseAbs();
            out.dg = omega_from_dots(dots).cwiseProduct(diff).sum();
        } else {
            out.dg = d_g(q.unit, item.unit);
        }
    }
    return out;
}

double metric_distance(const PairDistances& d, Metric metric, double alpha) {
    switch (metric) {
        case Metric::Gap: return d.gap;
        case Metric::Ot: return d.dw;
        case Metric::OtAdj: return d.dw + alpha * d.dg;
    }
    return 0.0;
}

}  // namespace

std::vector<ScoreEntry> score_gallery(const FeatureSet& query, const Gallery& gallery,
                                      Metric metric, const ScoringOptions& opts) {
    if (gallery.size() == 0) throw std::invalid_argument("score_gallery: empty gallery");
    if (gallery.channels() != query.channels)
        throw std::invalid_argument("score_gallery: channel mismatch");
    gallery.prepare();
    QueryPrep q = prep_query(query);
    const bool need_ot = metric != Metric::Gap;
    const bool need_dg = metric == Metric::OtAdj;

    std::vector<ScoreEntry> entries;
    entries.reserve(gallery.size());
    for (int i = 0; i < gallery.size(); ++i) {
        PairDistances d = evaluate_pair(q, gallery.prepared(i), opts, need_ot, need_dg);
        entries.push_back({gallery.id_of(i), metric_distance(d, metric, opts.alpha)});
    }
    std::stable_sort(entries.begin(), entries.end(),
                     [](const ScoreEntry& a, const ScoreEntry& b) {
                         return a.distance < b.distance;
                     });
    return entries;
}

int rank_of(const std::vector<ScoreEntry>& scored, const std::string& true_id) {
    for (std::size_t i = 0; i < scored.size(); ++i)
        if (scored[i].id == true_id) return static_cast<int>(i) + 1;
    throw std::invalid_argument("rank_of: id not present in scored list");
}

double acc_at_q(const std::vector<int>& true_ranks, int q) {
    if (q < 1) throw std::invalid_argument("acc_at_q: q must be >= 1");
    if (true_ranks.empty()) throw std::invalid_argument("acc_at_q: no queries");
    int hits = 0;
    for (int r : true_ranks)
        if (r <= q) ++hits;
    return static_cast<double>(hits) / true_ranks.size();
}

void ExperimentConfig::validate() const {
    if (gallery_size < 1 || num_queries < 1 || runs < 1)
        throw std::invalid_argument("experiment: sizes must be >= 1");
    if (num_queries > gallery_size)
        throw std::invalid_argument("experiment: more queries than gallery scenes");
    if (metrics.empty() || qs.empty() || p_masks.empty())
        throw std::invalid_argument("experiment: empty metric/q/p_mask list");
    for (double p : p_masks)
        if (p < 0.0 || p > 1.0) throw std::invalid_argument("experiment: p_mask outside [0,1]");
    for (int q : qs)
        if (q < 1) throw std::invalid_argument("experiment: q must be >= 1");
}

std::vector<RetrievalReport> run_experiment(const ExperimentConfig& config) {
    config.validate();
    const int n_metrics = static_cast<int>(config.metrics.size());
    const bool need_ot = std::any_of(config.metrics.begin(), config.metrics.end(),
                                     [](Metric m) { return m != Metric::Gap; });
    const bool need_dg = std::any_of(config.metrics.begin(), config.metrics.end(),
                                     [](Metric m) { return m == Metric::OtAdj; });
    ScoringOptions opts;
    opts.alpha = config.alpha;
    opts.reg = config.reg;

    // acc[metric][p_mask][q] over runs
    std::vector<std::vector<std::map<int, std::vector<double>>>> acc(
        n_metrics, std::vector<std::map<int, std::vector<double>>>(config.p_masks.size()));

    int threads = config.threads > 0
                      ? config.threads
                      : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

    for (int run = 0; run < config.runs; ++run) {
        std::mt19937_64 layout_engine(mix_seed(config.seed, 0x6c61796fULL, run));
        Gallery gallery;
        std::vector<FeatureSet> sketches;
        std::vector<SceneTruth> truths;
        sketches.reserve(config.gallery_size);
        for (int s = 0; s < config.gallery_size; ++s) {
            SceneSpec spec = random_scene_spec(config.scene, layout_engine);
            ScenePair pair = generate_pair(spec, mix_seed(config.seed, run, s));
            gallery.add("scene" + std::to_string(s), std::move(pair.photo));
            sketches.push_back(std::move(pair.sketch));
            truths.push_back(std::move(pair.truth));
        }
        gallery.prepare();

        for (std::size_t pi = 0; pi < config.p_masks.size(); ++pi) {
            const double p_mask = config.p_masks[pi];
            std::vector<FeatureSet> queries(config.num_queries);
            for (int qi = 0; qi < config.num_queries; ++qi) {
                if (p_mask > 0.0) {
                    auto [masked, record] =
                        mask_objects(sketches[qi], truths[qi], p_mask,
                                     mix_seed(config.seed, 0x6d736bULL + run, qi));
                    queries[qi] = std::move(masked);
                } else {
                    queries[qi] = sketches[qi];
                }
            }

            // ranks[query][metric]
            std::vector<std::vector<int>> ranks(config.num_queries,
                                                std::vector<int>(n_metrics));
            auto worker = [&](int first) {
                for (int qi = first; qi < config.num_queries; qi += threads) {
                    QueryPrep qp = prep_query(queries[qi]);
                    const int true_pos = qi;
                    std::vector<double> dist_true(n_metrics);
                    std::vector<std::vector<double>> dist(n_metrics);
                    for (auto& v : dist) v.resize(gallery.size());
                    for (int g = 0; g < gallery.size(); ++g) {
                        PairDistances d =
                            evaluate_pair(qp, gallery.prepared(g), opts, need_ot, need_dg);
                        for (int mi = 0; mi < n_metrics; ++mi)
                            dist[mi][g] = metric_distance(d, config.metrics[mi], opts.alpha);
                    }
                    for (int mi = 0; mi < n_metrics; ++mi) {
                        double dt = dist[mi][true_pos];
                        int rank = 1;
                        for (int g = 0; g < gallery.size(); ++g) {
                            if (g == true_pos) continue;
                            if (dist[mi][g] < dt || (dist[mi][g] == dt && g < true_pos))
                                ++rank;
                        }
                        ranks[qi][mi] = rank;
                    }
                }
            };
            std::vector<std::thread> pool;
            for (int t = 1; t < threads; ++t) pool.emplace_back(worker, t);
            worker(0);
            for (auto& t : pool) t.join();

            for (int mi = 0; mi < n_metrics; ++mi) {
                std::vector<int> metric_ranks(config.num_queries);
                for (int qi = 0; qi < config.num_queries; ++qi)
                    metric_ranks[qi] = ranks[qi][mi];
                for (int q : config.qs)
                    acc[mi][pi][q].push_back(acc_at_q(metric_ranks, q));
            }
        }
    }

    std::vector<RetrievalReport> reports;
    for (int mi = 0; mi < n_metrics; ++mi) {
        for (std::size_t pi = 0; pi < config.p_masks.size(); ++pi) {
            RetrievalReport rep;
            rep.metric = metric_name(config.metrics[mi]);
            rep.p_mask = config.p_masks[pi];
            rep.seed = config.seed;
            rep.runs = config.runs;
            rep.num_queries = config.num_queries;
            rep.qs = config.qs;
            for (int q : config.qs) {
                const std::vector<double>& vals = acc[mi][pi][q];
                double mean = 0.0;
                for (double v : vals) mean += v;
                mean /= vals.size();
                double var = 0.0;
                for (double v : vals) var += (v - mean) * (v - mean);
                var /= vals.size();
                rep.mean_acc[q] = mean;
                rep.std_acc[q] = std::sqrt(var);
            }
            reports.push_back(std::move(rep));
        }
    }
    return reports;
}

std::string report_csv(const std::vector<RetrievalReport>& reports) {
    std::ostringstream os;
    os << "metric,p_mask,q,mean_acc,std_acc,runs,num_queries,seed\n";
    char buf[128];
    for (const auto& rep : reports) {
        for (int q : rep.qs) {
            std::snprintf(buf, sizeof buf, "%s,%.2f,%d,%.6f,%.6f,%d,%d,%llu\n",
                          rep.metric.c_str(), rep.p_mask, q, rep.mean_acc.at(q),
                          rep.std_acc.at(q), rep.runs, rep.num_queries,
                          static_cast<unsigned long long>(rep.seed));
            os << buf;
        }
    }
    return os.str();
}

void write_report_csv(const std::string& path, const std::vector<RetrievalReport>& reports) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open report file " + path);
    os << report_csv(reports);
}

void save_gallery(const Gallery& gallery, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
    for (int i = 0; i < gallery.size(); ++i) {
        std::string filename = "item" + std::to_string(i) + ".pfs";
        write_pfs1((fs::path(dir) / filename).string(), gallery.features_of(i));
        manifest << gallery.id_of(i) << ' ' << filename << "\n";
    }
}

Gallery load_gallery(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw std::runtime_error("cannot open manifest in " + dir);
    Gallery gallery;
    std::string id, filename;
    while (manifest >> id >> filename)
        gallery.add(id, read_pfs1((fs::path(dir) / filename).string()));
    return gallery;
}

}  // namespace otmatch
