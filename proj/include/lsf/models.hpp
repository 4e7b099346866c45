#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lsf/ops.hpp"
#include "lsf/rng.hpp"
#include "lsf/tasks.hpp"
#include "lsf/tensor.hpp"

namespace lsf {

// Architecture knobs for the desk-scale encoder/decoder bundle.
struct ModelConfig {
    TaskMode mode = TaskMode::classification;
    std::size_t input_dim = 16;          // vector length (classification) or channels
    std::vector<std::size_t> hidden = {64, 16};  // affine widths; last = feature dim d
    std::size_t stem_channels = 0;       // segmentation spatial stem; 0 disables it
    std::size_t stem_kernel = 3;
    std::size_t proj_kernel = 1;         // projection heads: 1 (channel-only) or 3

    std::size_t feature_dim() const { return hidden.back(); }

    void validate() const {
        if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
        if (hidden.empty()) throw ConfigError("model: at least one encoder layer");
        for (std::size_t hsz : hidden) {
            if (hsz == 0) throw ConfigError("model: zero-width layer");
        }
        if (feature_dim() < 4) {
            throw ConfigError("model: feature dim " + std::to_string(feature_dim()) +
                              " too small for the projection heads (need >= 4)");
        }
        if (stem_kernel != 1 && stem_kernel != 3) {
            throw ConfigError("model: stem kernel must be 1 or 3");
        }
        if (proj_kernel != 1 && proj_kernel != 3) {
            throw ConfigError("model: projection kernel must be 1 or 3");
        }
        if (proj_kernel == 3 && mode == TaskMode::classification) {
            throw ConfigError("model: 3x3 projection heads need spatial features");
        }
        if (stem_channels > 0 && mode == TaskMode::classification) {
            throw ConfigError("model: conv stem needs spatial input");
        }
    }
};

struct Layer {
    Tensor w, b;
};

struct Head {
    std::vector<int> classes;  // global class ids served by this head, in column order
    Tensor w, b;
};

namespace detail {

inline Tensor init_matrix(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::vector<double> v(in * out);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from_values({in, out}, std::move(v), true);
}

inline Tensor init_conv(std::size_t cout, std::size_t cin, std::size_t k, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * k * k));
    std::vector<double> v(cout * cin * k * k);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from_values({cout, cin, k, k}, std::move(v), true);
}

inline Tensor init_bias(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-0.05, 0.05);
    return Tensor::from_values({n}, std::move(v), true);
}

inline Tensor clone_tensor(const Tensor& t, bool requires_grad) {
    return Tensor::from_values(t.shape(),
                               std::vector<double>(t.values().begin(), t.values().end()),
                               requires_grad);
}

}  // namespace detail

// Encoder + per-class-group logit heads + the two auxiliary projection
// heads. Heads are only ever added, never removed; the projections feed
// the dispersion losses exclusively and are not on any decode path.
class ModelBundle {
public:
    ModelBundle() = default;

    ModelBundle(ModelConfig cfg, Rng rng) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::size_t in = cfg_.input_dim;
        if (cfg_.mode == TaskMode::segmentation && cfg_.stem_channels > 0) {
            stem = Layer{detail::init_conv(cfg_.stem_channels, in, cfg_.stem_kernel, rng),
                         detail::init_bias(cfg_.stem_channels, rng)};
            in = cfg_.stem_channels;
        }
        for (std::size_t width : cfg_.hidden) {
            encoder.push_back({detail::init_matrix(in, width, rng),
                               detail::init_bias(width, rng)});
            in = width;
        }
        const std::size_t d = cfg_.feature_dim();
        const std::size_t d2 = d / 2, d4 = d / 4;
        if (cfg_.proj_kernel == 1) {
            proj1 = Layer{detail::init_matrix(d, d2, rng), detail::init_bias(d2, rng)};
            proj2 = Layer{detail::init_matrix(d2, d4, rng), detail::init_bias(d4, rng)};
        } else {
            proj1 = Layer{detail::init_conv(d2, d, cfg_.proj_kernel, rng),
                          detail::init_bias(d2, rng)};
            proj2 = Layer{detail::init_conv(d4, d2, cfg_.proj_kernel, rng),
                          detail::init_bias(d4, rng)};
        }
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t feature_dim() const { return cfg_.feature_dim(); }

    // New heads start at zero so existing classes' logits keep their ranking
    // until the new group has actually been trained.
    void add_head(const std::vector<int>& classes, Rng rng) {
        if (classes.empty()) throw ConfigError("add_head: empty class group");
        (void)rng;
        const std::size_t d = cfg_.feature_dim();
        heads.push_back(
            {classes, Tensor::from_values({d, classes.size()},
                                          std::vector<double>(d * classes.size(), 0.0), true),
             Tensor::from_values({classes.size()},
                                 std::vector<double>(classes.size(), 0.0), true)});
    }

    std::size_t head_count() const { return heads.size(); }

    // Class id served by each logit column, in decode order.
    std::vector<int> logit_classes() const {
        std::vector<int> out;
        for (const Head& h : heads) out.insert(out.end(), h.classes.begin(), h.classes.end());
        return out;
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        if (stem) {
            out.emplace_back("stem.w", stem->w);
            out.emplace_back("stem.b", stem->b);
        }
        for (std::size_t i = 0; i < encoder.size(); ++i) {
            out.emplace_back("enc." + std::to_string(i) + ".w", encoder[i].w);
            out.emplace_back("enc." + std::to_string(i) + ".b", encoder[i].b);
        }
        out.emplace_back("proj1.w", proj1.w);
        out.emplace_back("proj1.b", proj1.b);
        out.emplace_back("proj2.w", proj2.w);
        out.emplace_back("proj2.b", proj2.b);
        for (std::size_t i = 0; i < heads.size(); ++i) {
            out.emplace_back("head." + std::to_string(i) + ".w", heads[i].w);
            out.emplace_back("head." + std::to_string(i) + ".b", heads[i].b);
        }
        return out;
    }

    ModelBundle clone(bool requires_grad) const {
        ModelBundle m;
        m.cfg_ = cfg_;
        if (stem) {
            m.stem = Layer{detail::clone_tensor(stem->w, requires_grad),
                           detail::clone_tensor(stem->b, requires_grad)};
        }
        for (const Layer& l : encoder) {
            m.encoder.push_back({detail::clone_tensor(l.w, requires_grad),
                                 detail::clone_tensor(l.b, requires_grad)});
        }
        m.proj1 = Layer{detail::clone_tensor(proj1.w, requires_grad),
                        detail::clone_tensor(proj1.b, requires_grad)};
        m.proj2 = Layer{detail::clone_tensor(proj2.w, requires_grad),
                        detail::clone_tensor(proj2.b, requires_grad)};
        for (const Head& h : heads) {
            m.heads.push_back({h.classes, detail::clone_tensor(h.w, requires_grad),
                               detail::clone_tensor(h.b, requires_grad)});
        }
        return m;
    }

    std::optional<Layer> stem;
    std::vector<Layer> encoder;
    Layer proj1, proj2;
    std::vector<Head> heads;

private:
    ModelConfig cfg_;
};

// Frozen deep copy of the previous-step model; parameters never require
// gradients, so later training cannot touch them.
struct TeacherSnapshot {
    ModelBundle bundle;
    bool frozen = true;
};

inline TeacherSnapshot freeze_snapshot(const ModelBundle& model) {
    return TeacherSnapshot{model.clone(false), true};
}

// Feature rows for one batch: row-major [N×d] where consecutive blocks of
// rows_per_image rows belong to one image (one row per sample in
// classification, one per pixel in segmentation).
struct EncodedBatch {
    Tensor rows;
    std::size_t images = 0;
    std::size_t rows_per_image = 1;
    std::size_t height = 0, width = 0;
};

namespace detail {

inline Tensor affine_stack(Graph& g, const ModelBundle& m, Tensor rows) {
    for (const Layer& l : m.encoder) {
        rows = relu(g, add_bias(g, matmul(g, rows, l.w), l.b));
    }
    return rows;
}

}  // namespace detail

// Classification encode: x is a [B×input_dim] batch.
inline EncodedBatch encode(Graph& g, const ModelBundle& m, const Tensor& x) {
    if (m.config().mode != TaskMode::classification) {
        throw ContractError("encode: vector input requires classification mode");
    }
    if (x.rank() != 2 || x.extent(1) != m.config().input_dim) {
        throw DimensionError("encode: expected [B x " +
                             std::to_string(m.config().input_dim) + "], got " +
                             shape_str(x.shape()));
    }
    EncodedBatch out;
    out.rows = detail::affine_stack(g, m, x);
    out.images = x.extent(0);
    out.rows_per_image = 1;
    return out;
}

// Segmentation encode: one [channels×H×W] tensor per image.
inline EncodedBatch encode(Graph& g, const ModelBundle& m, const std::vector<Tensor>& images) {
    if (m.config().mode != TaskMode::segmentation) {
        throw ContractError("encode: image input requires segmentation mode");
    }
    if (images.empty()) throw DegenerateBatchError("encode: empty image batch");
    const std::size_t h = images.front().extent(1), w = images.front().extent(2);
    std::vector<Tensor> per_image;
    per_image.reserve(images.size());
    for (const Tensor& img : images) {
        if (img.rank() != 3 || img.extent(0) != m.config().input_dim ||
            img.extent(1) != h || img.extent(2) != w) {
            throw DimensionError("encode: image shape " + shape_str(img.shape()));
        }
        if (m.stem) {
            Tensor fmap = relu(g, add_bias(g, conv2d(g, img, m.stem->w), m.stem->b));
            per_image.push_back(chw_to_rows(g, fmap));
        } else {
            per_image.push_back(chw_to_rows(g, img));
        }
    }
    EncodedBatch out;
    Tensor rows = per_image.size() == 1 ? per_image.front() : concat_rows(g, per_image);
    out.rows = detail::affine_stack(g, m, rows);
    out.images = images.size();
    out.rows_per_image = h * w;
    out.height = h;
    out.width = w;
    return out;
}

// Logits over every head ever created (deleted classes included).
inline Tensor decode_logits(Graph& g, const ModelBundle& m, const Tensor& rows) {
    if (m.heads.empty()) throw ContractError("decode_logits: model has no heads");
    if (rows.rank() != 2 || rows.extent(1) != m.feature_dim()) {
        throw DimensionError("decode_logits: feature dim mismatch, got " +
                             shape_str(rows.shape()));
    }
    std::vector<Tensor> parts;
    parts.reserve(m.heads.size());
    for (const Head& h : m.heads) {
        parts.push_back(add_bias(g, matmul(g, rows, h.w), h.b));
    }
    return parts.size() == 1 ? parts.front() : concat_cols(g, parts);
}

// F* = proj1(F), F** = proj2(F*). The outputs exist only for the dispersion
// loss and never reach decode_logits.
inline std::pair<Tensor, Tensor> project_spaces(Graph& g, const ModelBundle& m,
                                                const EncodedBatch& enc) {
    if (m.feature_dim() < 4) {
        throw ConfigError("project_spaces: feature dim must be >= 4");
    }
    if (m.config().proj_kernel == 1 || m.config().mode == TaskMode::classification) {
        Tensor fstar = add_bias(g, matmul(g, enc.rows, m.proj1.w), m.proj1.b);
        Tensor fss = add_bias(g, matmul(g, fstar, m.proj2.w), m.proj2.b);
        return {fstar, fss};
    }
    // Spatial projection: per image, rows -> map -> conv -> rows.
    auto conv_rows = [&](const Tensor& rows, const Layer& proj) {
        std::vector<Tensor> parts;
        for (std::size_t i = 0; i < enc.images; ++i) {
            Tensor slice = row_range(g, rows, i * enc.rows_per_image, enc.rows_per_image);
            Tensor fmap = rows_to_chw(g, slice, enc.height, enc.width);
            Tensor proj_map = add_bias(g, conv2d(g, fmap, proj.w), proj.b);
            parts.push_back(chw_to_rows(g, proj_map));
        }
        return parts.size() == 1 ? parts.front() : concat_rows(g, parts);
    };
    Tensor fstar = conv_rows(enc.rows, m.proj1);
    Tensor fss = conv_rows(fstar, m.proj2);
    return {fstar, fss};
}

// Numeric projection of a prototype vector through the heads (stages 1 or
// 2). Conv kernels act on a prototype as their tap-summed matrix, i.e. the
// interior response to a spatially constant field.
inline std::vector<double> project_prototype(const ModelBundle& m,
                                             std::span<const double> p, int stages) {
    auto apply = [&](std::span<const double> v, const Layer& proj) {
        std::vector<double> out;
        if (proj.w.rank() == 2) {
            const std::size_t in = proj.w.extent(0), outn = proj.w.extent(1);
            out.assign(outn, 0.0);
            for (std::size_t j = 0; j < outn; ++j) {
                double acc = proj.b[j];
                for (std::size_t i = 0; i < in; ++i) acc += v[i] * proj.w[i * outn + j];
                out[j] = acc;
            }
        } else {
            const std::size_t cout = proj.w.extent(0), cin = proj.w.extent(1),
                              k = proj.w.extent(2);
            out.assign(cout, 0.0);
            for (std::size_t j = 0; j < cout; ++j) {
                double acc = proj.b[j];
                for (std::size_t i = 0; i < cin; ++i) {
                    double taps = 0.0;
                    for (std::size_t u = 0; u < k * k; ++u) {
                        taps += proj.w[(j * cin + i) * k * k + u];
                    }
                    acc += v[i] * taps;
                }
                out[j] = acc;
            }
        }
        return out;
    };
    if (p.size() != m.feature_dim()) {
        throw DimensionError("project_prototype: prototype length mismatch");
    }
    std::vector<double> v = apply(p, m.proj1);
    if (stages >= 2) v = apply(v, m.proj2);
    return v;
}

// FNV-1a over the raw parameter bytes, in named_parameters order.
inline std::uint64_t parameter_hash(const ModelBundle& m) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* ptr, std::size_t len) {
        const unsigned char* b = static_cast<const unsigned char*>(ptr);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, t] : m.named_parameters()) {
        mix(name.data(), name.size());
        mix(t.values().data(), t.size() * sizeof(double));
    }
    return h;
}

}  // namespace lsf
