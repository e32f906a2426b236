#pragma once

#include "otmatch/metrics.hpp"
#include "otmatch/synth.hpp"

#include <vector>

namespace otmatch {

/// Trainable per-cell linear map standing in for a learned encoder.
struct EmbeddingParams {
    Matrix weight;  // c_in x c_out, c_out >= 2
    double learning_rate = 1e-4;
    long step_count = 0;
};

EmbeddingParams random_embedding(int c_in, int c_out, std::uint64_t seed,
                                 double learning_rate = 1e-4);

/// Per-cell linear map followed by L2 row normalization.
FeatureSet embed(const EmbeddingParams& params, const FeatureSet& fs);

struct Triplet {
    FeatureSet sketch;
    FeatureSet photo_pos;
    FeatureSet photo_neg;
};

struct TrainOptions {
    LossConfig loss;
    double reg = kDefaultReg;
    // tight solves keep active/inactive flows well separated for the
    // implicit gradients
    double solve_tolerance = 1e-11;
    /// When off, the region-distance backward keeps only the direct
    /// cost-term gradient and drops everything that flows through the
    /// solved transport plan (regression guard for the implicit path).
    bool flow_gradient = true;
};

struct StepResult {
    double loss_total = 0.0;
    double loss_region = 0.0;
    double loss_struct = 0.0;
    bool skipped = false;  // solver failure: weights left unchanged
};

/// One plain gradient-descent step on the combined triplet loss,
/// backpropagating through the optimal flow and the structural distance.
/// Deterministic; solver degeneracy skips the update with a warning.
StepResult train_step(EmbeddingParams& params, const Triplet& trip,
                      const TrainOptions& opts = {});

/// Forward losses only; never updates.
StepResult evaluate_loss(const EmbeddingParams& params, const Triplet& trip,
                         const TrainOptions& opts = {});

/// Scene pairs turned into triplets: the negative photo is the next
/// scene's photo (cyclically).
std::vector<Triplet> make_synthetic_triplets(const SceneParams& params, int count,
                                             std::uint64_t seed);

struct TrainLogRow {
    long step = 0;
    double loss_total = 0.0;
    double loss_region = 0.0;
    double loss_struct = 0.0;
};

struct TrainRunResult {
    std::vector<TrainLogRow> log;
    double initial_mean_loss = 0.0;
    double final_mean_loss = 0.0;
};

/// Cycles through the triplets for `steps` updates; the mean loss over
/// the whole set is measured before and after.
TrainRunResult train_run(EmbeddingParams& params, const std::vector<Triplet>& triplets,
                         int steps, const TrainOptions& opts = {});

/// CSV rows `step,loss_total,loss_region,loss_struct`.
std::string training_log_csv(const std::vector<TrainLogRow>& rows);

}  // namespace otmatch
