#pragma once

#include "otmatch/feature_set.hpp"

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace otmatch {

// Synthetic scene features standing in for a CNN backbone. Object cells
// carry a per-class unit prototype; photo background cells carry a shared
// low-norm vector; sketch non-object cells are exact zeros before the
// Gaussian perturbation (empty paper). Channel 0 is reserved: every
// generated vector has a zero first coordinate, so normalized empty rows
// (the canonical unit vector) are exactly orthogonal to all content.

struct SceneObject {
    int class_id = 0;
    int row = 0;
    int col = 0;
    int radius = 0;  // Chebyshev footprint radius
};

struct SceneSpec {
    int height = 0;
    int width = 0;
    int channels = 0;
    int num_classes = 1;
    std::vector<SceneObject> objects;
    double noise_sigma = 0.0;
    double empty_fraction_target = 0.0;
    int max_jitter = 1;  // sketch centers move by up to this many cells

    void validate() const;
};

struct PlacedObject {
    int class_id = 0;
    int photo_row = 0, photo_col = 0;
    int sketch_row = 0, sketch_col = 0;
    std::vector<int> photo_cells;   // flat indices owned in the photo
    std::vector<int> sketch_cells;  // flat indices owned in the sketch
};

struct SceneTruth {
    std::vector<PlacedObject> objects;
    std::vector<bool> sketch_empty;  // per cell, recorded at generation
};

struct ScenePair {
    FeatureSet photo;
    FeatureSet sketch;
    SceneTruth truth;
};

struct MaskRecord {
    std::vector<int> masked_object_indices;  // sorted
    double p_mask = 0.0;
    std::uint64_t seed = 0;
};

/// Deterministic for (spec, seed). Overlapping footprints resolve by
/// later-object priority; the sketch's empty-cell count is trimmed or
/// grown to round(empty_fraction_target * h * w).
ScenePair generate_pair(const SceneSpec& spec, std::uint64_t seed);

/// Uniformly samples round(p_mask * K) of the K objects and zeroes their
/// sketch footprint cells.
std::pair<FeatureSet, MaskRecord> mask_objects(const FeatureSet& sketch,
                                               const SceneTruth& truth, double p_mask,
                                               std::uint64_t seed);

/// Re-applies a recorded mask; idempotent, never touches unmasked cells.
FeatureSet apply_mask(const FeatureSet& sketch, const SceneTruth& truth,
                      const MaskRecord& record);

/// Fraction of rows with norm below the threshold.
double measure_empty_fraction(const FeatureSet& fs, double norm_threshold = 0.5);

/// Class prototype: a fixed unit vector per (class_id, channels), shared
/// by every scene so that classes are comparable across a gallery.
Vector class_prototype(int class_id, int channels);

/// Shared background direction used for photo non-object cells.
Vector background_direction(int channels);

/// Base parameters for sampling random scenes.
struct SceneParams {
    int height = 5;
    int width = 5;
    int channels = 32;
    int num_classes = 6;
    int num_objects = 16;
    int radius = 0;
    double noise_sigma = 0.05;
    double empty_fraction_target = 0.36;
    int max_jitter = 1;
};

/// Random layout: distinct object cells, uniform classes.
SceneSpec random_scene_spec(const SceneParams& params, std::mt19937_64& engine);

// deterministic seed mixing (splitmix64 steps)
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(base, a), b);
}

}  // namespace otmatch
