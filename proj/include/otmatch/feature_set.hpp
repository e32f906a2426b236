#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

namespace otmatch {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A grid of localized feature vectors. `data` holds one feature per grid
/// cell, flattened row-major: cell (r, c) of the h x w grid is row r*w + c.
struct FeatureSet {
    int height = 0;
    int width = 0;
    int channels = 0;
    Matrix data;  // (height*width) x channels

    FeatureSet() = default;
    FeatureSet(int h, int w, int c);
    FeatureSet(int h, int w, int c, Matrix values);

    int regions() const { return height * width; }

    /// Throws std::invalid_argument if shape/finiteness invariants fail.
    void validate() const;

    /// Copy with every row scaled to unit Euclidean norm. Rows that are
    /// exactly zero map to the fixed unit vector (1, 0, ..., 0) so that
    /// empty regions stay representable without NaNs.
    FeatureSet normalized() const;
};

/// Grid cell -> flat row index (row-major).
inline int flat_index(const FeatureSet& fs, int row, int col) {
    return row * fs.width + col;
}

/// Flattened view of the grid: row i is the feature of cell
/// (i / width, i % width).
Matrix flatten(const FeatureSet& fs);

/// Rebuild a FeatureSet from flattened rows; inverse of flatten.
FeatureSet reshape(int h, int w, int c, const Matrix& rows);

using GlobalVector = Vector;

/// Global average pooling: the arithmetic mean of all local feature
/// vectors. With `normalize` set, the mean is rescaled to unit norm
/// (zero mean maps to the canonical unit vector).
GlobalVector gap(const FeatureSet& fs, bool normalize = false);

/// Cosine transport cost: entry (i, j) = 1 - u_i . v_j. For unit-norm
/// rows every entry lies in [0, 2]. Throws on channel mismatch.
Matrix pairwise_cost(const FeatureSet& u, const FeatureSet& v);

/// Unit vector used for rows that cannot be normalized.
Vector canonical_unit_vector(int channels);

// --- PFS1 container ---------------------------------------------------
//
// Layout: magic "PFS1", then h, w, c as little-endian uint32, then
// h*w*c little-endian float32 in (grid-row, grid-col, channel) order.

void write_pfs1(const std::string& path, const FeatureSet& fs);

/// Throws std::runtime_error on bad magic, truncated or oversized payload.
FeatureSet read_pfs1(const std::string& path);

}  // namespace otmatch
