#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "lsf/errors.hpp"
#include "lsf/rng.hpp"
#include "lsf/tasks.hpp"

// Deterministic desk-scale dataset generators. Everything is a pure
// function of (spec, seed); splits are disjoint by construction.

namespace lsf {

// Gaussian class clusters in R^dim. separation/sigma >= 4 keeps the classes
// linearly separable to well above 95%.
struct BlobSpec {
    std::size_t num_classes = 12;
    std::size_t dim = 16;
    std::size_t samples_per_class = 100;
    double separation = 4.0;
    double sigma = 0.3;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes == 0 || dim == 0 || samples_per_class < 8) {
            throw ConfigError("blob spec: counts must be positive (>= 8 samples/class)");
        }
        if (separation <= 0.0 || sigma < 0.0) {
            throw ConfigError("blob spec: separation must be positive, sigma non-negative");
        }
    }
};

struct VectorDataset {
    struct Split {
        std::vector<std::vector<double>> x;
        std::vector<int> y;
    };
    std::size_t dim = 0;
    std::size_t num_classes = 0;
    Split train, val, test;
};

// Splits per class: 1/4 test; of the remaining pool, 20% validation.
inline VectorDataset gen_blobs(const BlobSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Rng center_rng = rng.fork(1);
    Rng sample_rng = rng.fork(2);

    std::vector<std::vector<double>> centers;
    const std::size_t max_attempts = 1000 * spec.num_classes;
    std::size_t attempts = 0;
    while (centers.size() < spec.num_classes) {
        if (++attempts > max_attempts) {
            throw ConfigError("gen_blobs: cannot place centers at the requested separation");
        }
        std::vector<double> c(spec.dim);
        for (double& v : c) v = center_rng.normal(0.0, 0.5 * spec.separation);
        bool ok = true;
        for (const auto& other : centers) {
            double sq = 0.0;
            for (std::size_t j = 0; j < spec.dim; ++j) {
                const double d = c[j] - other[j];
                sq += d * d;
            }
            if (std::sqrt(sq) < spec.separation) {
                ok = false;
                break;
            }
        }
        if (ok) centers.push_back(std::move(c));
    }

    VectorDataset out;
    out.dim = spec.dim;
    out.num_classes = spec.num_classes;
    const std::size_t test_n = spec.samples_per_class / 4;
    const std::size_t pool_n = spec.samples_per_class - test_n;
    const std::size_t val_n = pool_n / 5;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
            std::vector<double> x(spec.dim);
            for (std::size_t j = 0; j < spec.dim; ++j) {
                x[j] = centers[c][j] + sample_rng.normal(0.0, spec.sigma);
            }
            VectorDataset::Split* split = nullptr;
            if (s < test_n) {
                split = &out.test;
            } else if (s < test_n + val_n) {
                split = &out.val;
            } else {
                split = &out.train;
            }
            split->x.push_back(std::move(x));
            split->y.push_back(static_cast<int>(c));
        }
    }
    return out;
}

// Scenes of colored shapes on a dark background; pixel labels are exact by
// construction. Background id is 0, foreground classes are 1..num_classes.
struct ShapeSceneSpec {
    std::size_t image_size = 32;
    std::size_t num_classes = 6;
    std::size_t shapes_per_image = 3;
    std::size_t train_images = 200;
    std::size_t test_images = 80;
    std::size_t min_shape = 5;
    std::size_t max_shape = 9;
    double fg_noise = 0.02;
    double bg_noise = 0.015;
    std::uint64_t seed = 0;

    void validate() const {
        if (image_size < 8 || num_classes == 0 || train_images < 10 || test_images == 0) {
            throw ConfigError("shape spec: counts too small");
        }
        if (min_shape < 3 || max_shape < min_shape || max_shape >= image_size) {
            throw ConfigError("shape spec: shape size range invalid");
        }
        if (fg_noise < 0.0 || bg_noise < 0.0) {
            throw ConfigError("shape spec: noise must be non-negative");
        }
        if (shapes_per_image > num_classes) {
            throw ConfigError("shape spec: shapes per image exceeds class count");
        }
    }
};

struct ShapeScene {
    std::vector<double> pixels;              // [3×S×S] row-major CHW
    std::vector<int> labels;                 // [S×S], 0 = background
    std::vector<std::size_t> class_pixels;   // per class id, filled pixel count
};

struct SceneDataset {
    std::size_t image_size = 0;
    std::size_t num_classes = 0;  // foreground classes; background is id 0
    std::vector<ShapeScene> train, val, test;
};

namespace detail {

// Distinct, deterministic foreground color per class: evenly spaced hues
// at full saturation, alternating brightness for extra separation.
inline void class_color(int c, double rgb[3]) {
    const double hue = 6.0 * std::fmod(0.15 + static_cast<double>(c - 1) / 7.0, 1.0);
    const int sector = static_cast<int>(hue);
    const double f = hue - sector;
    const double v = (c % 2 == 0) ? 0.95 : 0.70;
    const double p = v * 0.15;
    const double q = v * (1.0 - 0.85 * f);
    const double t = v * (1.0 - 0.85 * (1.0 - f));
    switch (sector % 6) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

// Rasterize shape kind (cycling square/disc/triangle by class) into mask.
inline void rasterize(int class_id, std::size_t cx, std::size_t cy, std::size_t half,
                      std::size_t s, std::vector<bool>& mask) {
    const int kind = class_id % 3;
    const long icx = static_cast<long>(cx), icy = static_cast<long>(cy);
    const long r = static_cast<long>(half);
    for (long y = icy - r; y <= icy + r; ++y) {
        for (long x = icx - r; x <= icx + r; ++x) {
            if (y < 0 || x < 0 || y >= static_cast<long>(s) || x >= static_cast<long>(s)) {
                continue;
            }
            bool inside = false;
            if (kind == 0) {
                inside = true;  // square
            } else if (kind == 1) {
                inside = (x - icx) * (x - icx) + (y - icy) * (y - icy) <= r * r;  // disc
            } else {
                // upward triangle: rows widen from apex to base
                const long dy = y - (icy - r);
                inside = std::labs(x - icx) <= dy / 2;
            }
            if (inside) mask[static_cast<std::size_t>(y) * s + static_cast<std::size_t>(x)] = true;
        }
    }
}

inline ShapeScene make_scene(const ShapeSceneSpec& spec, Rng& rng) {
    const std::size_t s = spec.image_size;
    ShapeScene scene;
    scene.pixels.assign(3 * s * s, 0.0);
    scene.labels.assign(s * s, 0);
    scene.class_pixels.assign(spec.num_classes + 1, 0);

    // background: dim base + noise
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t p = 0; p < s * s; ++p) {
            scene.pixels[ch * s * s + p] = 0.06 + rng.normal(0.0, spec.bg_noise);
        }
    }

    // choose distinct classes for this scene
    std::vector<int> all_classes(spec.num_classes);
    for (std::size_t i = 0; i < spec.num_classes; ++i) all_classes[i] = static_cast<int>(i + 1);
    rng.shuffle(all_classes);
    all_classes.resize(spec.shapes_per_image);

    std::vector<bool> occupied(s * s, false);
    auto try_place = [&](int cls, std::size_t cx, std::size_t cy, std::size_t half) {
        std::vector<bool> mask(s * s, false);
        rasterize(cls, cx, cy, half, s, mask);
        for (std::size_t p = 0; p < s * s; ++p) {
            if (mask[p] && occupied[p]) return false;
        }
        double rgb[3];
        class_color(cls, rgb);
        for (std::size_t p = 0; p < s * s; ++p) {
            if (!mask[p]) continue;
            occupied[p] = true;
            scene.labels[p] = cls;
            ++scene.class_pixels[static_cast<std::size_t>(cls)];
            for (std::size_t ch = 0; ch < 3; ++ch) {
                scene.pixels[ch * s * s + p] = rgb[ch] + rng.normal(0.0, spec.fg_noise);
            }
        }
        return true;
    };
    for (int cls : all_classes) {
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            const std::size_t size = spec.min_shape + rng.index(spec.max_shape - spec.min_shape + 1);
            const std::size_t half = size / 2;
            const std::size_t cx = half + rng.index(s - 2 * half);
            const std::size_t cy = half + rng.index(s - 2 * half);
            placed = try_place(cls, cx, cy, half);
        }
        // dense scenes: deterministic scan at minimum size before giving up
        if (!placed) {
            const std::size_t half = spec.min_shape / 2;
            for (std::size_t cy = half; cy + half < s && !placed; ++cy) {
                for (std::size_t cx = half; cx + half < s && !placed; ++cx) {
                    placed = try_place(cls, cx, cy, half);
                }
            }
        }
        if (!placed) {
            throw PlacementError("gen_shapes: could not place a class-" +
                                 std::to_string(cls) + " shape without overlap");
        }
    }
    scene.class_pixels[0] = s * s;
    for (std::size_t c = 1; c <= spec.num_classes; ++c) scene.class_pixels[0] -= scene.class_pixels[c];
    return scene;
}

}  // namespace detail

// val split = 20% of the generated training pool.
inline SceneDataset gen_shapes(const ShapeSceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Rng train_rng = rng.fork(11);
    Rng test_rng = rng.fork(12);
    SceneDataset out;
    out.image_size = spec.image_size;
    out.num_classes = spec.num_classes;
    const std::size_t val_n = spec.train_images / 5;
    for (std::size_t i = 0; i < spec.train_images; ++i) {
        ShapeScene scene = detail::make_scene(spec, train_rng);
        if (i < val_n) {
            out.val.push_back(std::move(scene));
        } else {
            out.train.push_back(std::move(scene));
        }
    }
    for (std::size_t i = 0; i < spec.test_images; ++i) {
        out.test.push_back(detail::make_scene(spec, test_rng));
    }
    return out;
}

}  // namespace lsf
