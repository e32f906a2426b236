#pragma once

#include "otmatch/metrics.hpp"
#include "otmatch/synth.hpp"

#include <atomic>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace otmatch {

enum class Metric { Gap, Ot, OtAdj };

Metric parse_metric(const std::string& name);  // gap | ot | ot+adj
std::string metric_name(Metric m);

/// Read-only photo collection. Scoring-side derived data (normalized rows,
/// pooled direction, adjacency) is computed once by prepare(); an
/// instrumentation counter records how many items were ever prepared so
/// tests can assert features are never re-derived per query.
class Gallery {
public:
    struct Prepared {
        FeatureSet unit;       // rows normalized
        GlobalVector gap_dir;  // normalized mean of raw rows
        Matrix adjacency;
    };

    Gallery() = default;
    Gallery(Gallery&& other) noexcept { *this = std::move(other); }
    Gallery& operator=(Gallery&& other) noexcept {
        ids_ = std::move(other.ids_);
        items_ = std::move(other.items_);
        index_ = std::move(other.index_);
        prep_ = std::move(other.prep_);
        prep_count_ = other.prep_count_.load();
        return *this;
    }

    void add(std::string id, FeatureSet features);
    int size() const { return static_cast<int>(items_.size()); }
    const std::string& id_of(int pos) const { return ids_[pos]; }
    const FeatureSet& features_of(int pos) const { return items_[pos]; }
    int position(const std::string& id) const;  // throws on unknown id
    int channels() const;

    void prepare() const;  // idempotent
    const Prepared& prepared(int pos) const { return *prep_[pos]; }
    long prep_count() const { return prep_count_.load(); }

private:
    std::vector<std::string> ids_;
    std::vector<FeatureSet> items_;
    std::map<std::string, int> index_;
    mutable std::vector<std::unique_ptr<Prepared>> prep_;
    mutable std::atomic<long> prep_count_{0};
};

struct ScoringOptions {
    double alpha = 0.01;  // weight of the structural term in ot+adj
    double reg = kDefaultReg;
    double solve_tolerance = kSolveTolerance;
};

struct ScoreEntry {
    std::string id;
    double distance;
};

/// Ascending by distance; ties keep gallery insertion order. Throws on an
/// empty gallery or channel mismatch.
std::vector<ScoreEntry> score_gallery(const FeatureSet& query, const Gallery& gallery,
                                      Metric metric, const ScoringOptions& opts = {});

/// 1-based rank of `true_id` in a scored list.
int rank_of(const std::vector<ScoreEntry>& scored, const std::string& true_id);

/// Fraction of queries whose true match ranked within the top q.
double acc_at_q(const std::vector<int>& true_ranks, int q);

struct RetrievalReport {
    std::string metric;
    double p_mask = 0.0;
    std::uint64_t seed = 0;
    int runs = 0;
    int num_queries = 0;
    std::vector<int> qs;
    std::map<int, double> mean_acc;
    std::map<int, double> std_acc;  // population formula over runs
};

struct ExperimentConfig {
    SceneParams scene;
    int gallery_size = 100;
    int num_queries = 100;
    int runs = 10;
    std::uint64_t seed = 0;
    std::vector<double> p_masks = {0.0, 0.3, 0.5};
    std::vector<int> qs = {1, 10};
    std::vector<Metric> metrics = {Metric::Gap, Metric::Ot, Metric::OtAdj};
    double alpha = 0.01;
    double reg = kDefaultReg;
    int threads = 0;  // 0 = hardware concurrency

    void validate() const;
};

/// Complete-vs-partial protocol: per run, generate scenes, gallery the
/// photos, mask the query sketches at each p_mask level, score every
/// metric, and aggregate Acc@q as mean +- std over runs. Deterministic
/// for a fixed seed.
std::vector<RetrievalReport> run_experiment(const ExperimentConfig& config);

/// CSV rows `metric,p_mask,q,mean_acc,std_acc,runs,num_queries,seed`.
std::string report_csv(const std::vector<RetrievalReport>& reports);
void write_report_csv(const std::string& path, const std::vector<RetrievalReport>& reports);

// Gallery persistence: a directory of PFS1 files plus `manifest.txt`
// lines of "<id> <filename>".
void save_gallery(const Gallery& gallery, const std::string& dir);
Gallery load_gallery(const std::string& dir);

}  // namespace otmatch
