#include "otmatch/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace otmatch {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void SceneSpec::validate() const {
    if (height < 1 || width < 1 || channels < 2)
        throw std::invalid_argument("SceneSpec: grid must be >= 1x1 with channels >= 2");
    if (num_classes < 1) throw std::invalid_argument("SceneSpec: num_classes < 1");
    if (noise_sigma < 0.0) throw std::invalid_argument("SceneSpec: negative noise_sigma");
    if (empty_fraction_target < 0.0 || empty_fraction_target > 1.0)
        throw std::invalid_argument("SceneSpec: empty_fraction_target outside [0,1]");
    if (max_jitter < 0) throw std::invalid_argument("SceneSpec: negative max_jitter");
    for (const auto& o : objects) {
        if (o.class_id < 0 || o.class_id >= num_classes)
            throw std::invalid_argument("SceneSpec: class_id out of range");
        if (o.row < 0 || o.row >= height || o.col < 0 || o.col >= width)
            throw std::invalid_argument("SceneSpec: object cell outside grid");
        if (o.radius < 0) throw std::invalid_argument("SceneSpec: negative radius");
    }
}

namespace {

// unit vector with zero first coordinate, deterministic in the seed
Vector seeded_direction(std::uint64_t seed, int channels) {
    std::mt19937_64 engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector v = Vector::Zero(channels);
    for (int i = 1; i < channels; ++i) v(i) = gauss(engine);
    double n = v.norm();
    if (n <= 0.0) {
        v(channels > 1 ? 1 : 0) = 1.0;
        return v;
    }
    return v / n;
}

constexpr std::uint64_t kPrototypeSalt = 0x70726f746fULL;
constexpr std::uint64_t kBackgroundSalt = 0x6261636bULL;
constexpr std::uint64_t kCommonSalt = 0x636f6d6dULL;
constexpr double kBackgroundScale = 0.25;

// Content directions share a common component, so any two of them meet at
// a cosine of about kSharedWeight^2. Encoder features behave this way,
// and the transport marginals (ReLU-floored dot products) rely on it:
// with fully orthogonal content, unrelated pairs lose almost all mass and
// the weighted distance degenerates.
constexpr double kSharedWeight = 0.7;

Vector content_direction(std::uint64_t salt, int channels) {
    Vector common = seeded_direction(mix_seed(kCommonSalt, static_cast<std::uint64_t>(channels)),
                                     channels);
    Vector raw = seeded_direction(salt, channels);
    raw -= raw.dot(common) * common;
    double n = raw.norm();
    if (n <= 0.0) return common;
    Vector v = kSharedWeight * common +
               std::sqrt(1.0 - kSharedWeight * kSharedWeight) * (raw / n);
    return v / v.norm();
}

std::vector<int> footprint_cells(int row, int col, int radius, int h, int w) {
    std::vector<int> cells;
    for (int r = std::max(0, row - radius); r <= std::min(h - 1, row + radius); ++r)
        for (int c = std::max(0, col - radius); c <= std::min(w - 1, col + radius); ++c)
            cells.push_back(r * w + c);
    return cells;
}

}  // namespace

Vector class_prototype(int class_id, int channels) {
    if (class_id < 0) throw std::invalid_argument("class_prototype: negative class");
    return content_direction(mix_seed(kPrototypeSalt, static_cast<std::uint64_t>(class_id),
                                      static_cast<std::uint64_t>(channels)),
                             channels);
}

Vector background_direction(int channels) {
    return content_direction(mix_seed(kBackgroundSalt, static_cast<std::uint64_t>(channels)),
                             channels);
}

ScenePair generate_pair(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int h = spec.height, w = spec.width, c = spec.channels;
    const int cells = h * w;
    const int num_objects = static_cast<int>(spec.objects.size());
    std::mt19937_64 engine(mix_seed(seed, 0x7363656eULL));
    std::normal_distribution<double> gauss(0.0, 1.0);

    // photo ownership, later objects overwrite earlier ones
    std::vector<int> photo_owner(cells, -1);
    for (int k = 0; k < num_objects; ++k)
        for (int cell : footprint_cells(spec.objects[k].row, spec.objects[k].col,
                                        spec.objects[k].radius, h, w))
            photo_owner[cell] = k;

    // jittered sketch centers
    std::vector<std::pair<int, int>> sketch_center(num_objects);
    std::uniform_int_distribution<int> jitter(-spec.max_jitter, spec.max_jitter);
    for (int k = 0; k < num_objects; ++k) {
        int dr = spec.max_jitter > 0 ? jitter(engine) : 0;
        int dc = spec.max_jitter > 0 ? jitter(engine) : 0;
        sketch_center[k] = {std::clamp(spec.objects[k].row + dr, 0, h - 1),
                            std::clamp(spec.objects[k].col + dc, 0, w - 1)};
    }
    std::vector<int> sketch_owner(cells, -1);
    for (int k = 0; k < num_objects; ++k)
        for (int cell : footprint_cells(sketch_center[k].first, sketch_center[k].second,
                                        spec.objects[k].radius, h, w))
            sketch_owner[cell] = k;

    // enforce the empty-cell budget on the sketch
    const int target_empty =
        static_cast<int>(std::lround(spec.empty_fraction_target * cells));
    const int object_budget = cells - target_empty;
    auto owned_count = [&] {
        return static_cast<int>(std::count_if(sketch_owner.begin(), sketch_owner.end(),
                                              [](int o) { return o >= 0; }));
    };
    int current = owned_count();
    if (current > object_budget) {
        // release cells in reverse scan order, centers last
        for (int pass = 0; pass < 2 && current > object_budget; ++pass) {
            for (int cell = cells - 1; cell >= 0 && current > object_budget; --cell) {
                int k = sketch_owner[cell];
                if (k < 0) continue;
                bool is_center =
                    cell == sketch_center[k].first * w + sketch_center[k].second;
                if (pass == 0 && is_center) continue;
                sketch_owner[cell] = -1;
                --current;
            }
        }
    } else if (current < object_budget && num_objects > 0) {
        // dilate object cells outward until the budget is met
        bool grew = true;
        while (current < object_budget && grew) {
            grew = false;
            std::vector<std::pair<int, int>> additions;  // (cell, owner)
            for (int cell = 0; cell < cells; ++cell) {
                if (sketch_owner[cell] >= 0) continue;
                int r = cell / w, cc = cell % w;
                int owner = -1;
                for (int dr = -1; dr <= 1 && owner < 0; ++dr)
                    for (int dc = -1; dc <= 1 && owner < 0; ++dc) {
                        if (dr == 0 && dc == 0) continue;
                        int rr = r + dr, c2 = cc + dc;
                        if (rr < 0 || rr >= h || c2 < 0 || c2 >= w) continue;
                        owner = sketch_owner[rr * w + c2];
                    }
                if (owner >= 0) additions.emplace_back(cell, owner);
            }
            for (const auto& [cell, owner] : additions) {
                if (current >= object_budget) break;
                sketch_owner[cell] = owner;
                ++current;
                grew = true;
            }
        }
    }

    ScenePair out;
    out.photo = FeatureSet(h, w, c);
    out.sketch = FeatureSet(h, w, c);
    const Vector background = kBackgroundScale * background_direction(c);
    for (int cell = 0; cell < cells; ++cell) {
        if (photo_owner[cell] >= 0)
            out.photo.data.row(cell) =
                class_prototype(spec.objects[photo_owner[cell]].class_id, c).transpose();
        else
            out.photo.data.row(cell) = background.transpose();
        if (sketch_owner[cell] >= 0)
            out.sketch.data.row(cell) =
                class_prototype(spec.objects[sketch_owner[cell]].class_id, c).transpose();
    }
    if (spec.noise_sigma > 0.0) {
        for (int cell = 0; cell < cells; ++cell)
            for (int ch = 1; ch < c; ++ch)
                out.sketch.data(cell, ch) += spec.noise_sigma * gauss(engine);
    }

    out.truth.objects.resize(num_objects);
    for (int k = 0; k < num_objects; ++k) {
        PlacedObject& po = out.truth.objects[k];
        po.class_id = spec.objects[k].class_id;
        po.photo_row = spec.objects[k].row;
        po.photo_col = spec.objects[k].col;
        po.sketch_row = sketch_center[k].first;
        po.sketch_col = sketch_center[k].second;
    }
    for (int cell = 0; cell < cells; ++cell) {
        if (photo_owner[cell] >= 0) out.truth.objects[photo_owner[cell]].photo_cells.push_back(cell);
        if (sketch_owner[cell] >= 0)
            out.truth.objects[sketch_owner[cell]].sketch_cells.push_back(cell);
    }
    out.truth.sketch_empty.resize(cells);
    for (int cell = 0; cell < cells; ++cell) out.truth.sketch_empty[cell] = sketch_owner[cell] < 0;
    return out;
}

std::pair<FeatureSet, MaskRecord> mask_objects(const FeatureSet& sketch,
                                               const SceneTruth& truth, double p_mask,
                                               std::uint64_t seed) {
    if (p_mask < 0.0 || p_mask > 1.0)
        throw std::invalid_argument("mask_objects: p_mask outside [0,1]");
    const int total = static_cast<int>(truth.objects.size());
    const int k = static_cast<int>(std::lround(p_mask * total));

    MaskRecord record;
    record.p_mask = p_mask;
    record.seed = seed;
    if (k > 0) {
        std::vector<int> order(total);
        for (int i = 0; i < total; ++i) order[i] = i;
        std::mt19937_64 engine(mix_seed(seed, 0x6d61736bULL));
        for (int i = 0; i < k; ++i) {
            std::uniform_int_distribution<int> pick(i, total - 1);
            std::swap(order[i], order[pick(engine)]);
        }
        record.masked_object_indices.assign(order.begin(), order.begin() + k);
        std::sort(record.masked_object_indices.begin(), record.masked_object_indices.end());
    }
    return {apply_mask(sketch, truth, record), record};
}

FeatureSet apply_mask(const FeatureSet& sketch, const SceneTruth& truth,
                      const MaskRecord& record) {
    FeatureSet out = sketch;
    for (int idx : record.masked_object_indices) {
        if (idx < 0 || idx >= static_cast<int>(truth.objects.size()))
            throw std::invalid_argument("apply_mask: object index out of range");
        for (int cell : truth.objects[idx].sketch_cells) out.data.row(cell).setZero();
    }
    return out;
}

double measure_empty_fraction(const FeatureSet& fs, double norm_threshold) {
    int empty = 0;
    for (Eigen::Index i = 0; i < fs.data.rows(); ++i)
        if (fs.data.row(i).norm() < norm_threshold) ++empty;
    return static_cast<double>(empty) / fs.regions();
}

SceneSpec random_scene_spec(const SceneParams& params, std::mt19937_64& engine) {
    const int cells = params.height * params.width;
    if (params.num_objects > cells)
        throw std::invalid_argument("random_scene_spec: more objects than cells");
    std::vector<int> order(cells);
    for (int i = 0; i < cells; ++i) order[i] = i;
    for (int i = 0; i < params.num_objects; ++i) {
        std::uniform_int_distribution<int> pick(i, cells - 1);
        std::swap(order[i], order[pick(engine)]);
    }
    std::uniform_int_distribution<int> pick_class(0, params.num_classes - 1);

    SceneSpec spec;
    spec.height = params.height;
    spec.width = params.width;
    spec.channels = params.channels;
    spec.num_classes = params.num_classes;
    spec.noise_sigma = params.noise_sigma;
    spec.empty_fraction_target = params.empty_fraction_target;
    spec.max_jitter = params.max_jitter;
    spec.objects.resize(params.num_objects);
    for (int k = 0; k < params.num_objects; ++k) {
        spec.objects[k].class_id = pick_class(engine);
        spec.objects[k].row = order[k] / params.width;
        spec.objects[k].col = order[k] % params.width;
        spec.objects[k].radius = params.radius;
    }
    return spec;
}

}  // namespace otmatch
