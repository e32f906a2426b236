#pragma once

#include "otmatch/diffgrad.hpp"
#include "otmatch/transport.hpp"

namespace otmatch {

/// Intra-modal region self-similarity map: entry (i, j) is the cosine of
/// local features i and j scaled by 1/(m*m). Symmetric, entries in
/// [-1/m^2, 1/m^2], diagonal exactly 1/m^2.
struct AdjacencyMatrix {
    int size = 0;
    Matrix values;  // size x size
};

struct LossConfig {
    double margin_global = 0.3;
    double margin_region = 0.3;
    double margin_struct = 0.3;
    double alpha = 0.01;
};

/// Cosine distance of the two L2-normalized global average pools,
/// 1 - g_u . g_v, in [0, 2]. With `normalize_means` off the raw means are
/// dotted instead, which makes the value equal the average pairwise
/// cosine-cost over all region pairs.
double baseline_distance(const FeatureSet& u, const FeatureSet& v,
                         bool normalize_means = true);

/// Flow-weighted region distance: (1/mn) sum_{i,j} cost_{i,j} * flow_{i,j}.
double d_w(const FeatureSet& u, const FeatureSet& v, const FlowSolution& flow);

/// Same, against an already-computed cost matrix.
double d_w(const Matrix& cost, const Matrix& flow);

AdjacencyMatrix adjacency(const FeatureSet& fs);

/// Cross-modal correlation weights: entry (i, j) is the product of the
/// four ReLU-clamped dot products (u_i.v_i)(u_i.v_j)(u_j.v_i)(u_j.v_j).
/// Expects unit-norm rows and equal region counts (resize v first).
Matrix omega(const Matrix& u_rows, const Matrix& v_rows);

/// Same weights from an already-computed cross dot-product matrix.
Matrix omega_from_dots(const Matrix& dots);

/// Corner-aligned bilinear resample of an n x n adjacency onto an m x m
/// lattice, rescaled by (n*n)/(m*m) to keep the 1/(m*m) convention.
AdjacencyMatrix resize_adjacency(const AdjacencyMatrix& a, int target);

/// Corner-aligned linear resample of feature rows along the region axis,
/// rows re-normalized afterwards.
Matrix resize_feature_rows(const Matrix& rows, int target);

/// Structural distance: sum_{i,j} omega_{i,j} |A^u_{i,j} - A^v_{i,j}| with
/// A^v (and v's rows, for omega) resized to the sketch's region count.
double d_g(const FeatureSet& u, const FeatureSet& v);

/// Ablation variant with omega = 1 everywhere.
double d_g_naive(const FeatureSet& u, const FeatureSet& v);

/// Analytic gradient of d_g with respect to the feature rows as given
/// (chains through the internal row normalization). Only the equal
/// region-count case is supported; that is the case trained on.
FeatureGrads d_g_gradient(const FeatureSet& u, const FeatureSet& v);

/// Triplet hinge max(0, margin + beta_pos - beta_neg).
double triplet(double beta_pos, double beta_neg, double margin);

/// Combined loss Lr + alpha * Lg.
double total_loss(double region_loss, double struct_loss, const LossConfig& cfg);

}  // namespace otmatch
