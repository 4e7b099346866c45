#pragma once

#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "lsf/errors.hpp"

namespace lsf {

// Plain (non-differentiable) view of one batch of feature rows: blocks of
// rows_per_image consecutive rows belong to one image; labels[i] is the
// class of row i (negative labels are ignored rows).
struct FeatureRowsView {
    std::span<const double> data;
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::size_t rows_per_image = 1;
    std::span<const int> labels;

    std::size_t images() const { return rows_per_image == 0 ? 0 : rows / rows_per_image; }

    std::span<const double> row(std::size_t r) const {
        return data.subspan(r * dim, dim);
    }

    void validate() const {
        if (rows == 0) throw DegenerateBatchError("feature batch is empty");
        if (data.size() != rows * dim || labels.size() != rows) {
            throw DimensionError("feature batch: rows/labels misaligned");
        }
        if (rows_per_image == 0 || rows % rows_per_image != 0) {
            throw DimensionError("feature batch: rows not a multiple of rows_per_image");
        }
    }
};

// In-batch prototype p̂_c: per image, the mean of class-c rows; then the
// mean over images. By default only images containing the class enter the
// outer mean; strict_eq1 divides by the full image count instead, with
// absent images contributing zero.
inline std::map<int, std::vector<double>> in_batch_prototypes(
    const FeatureRowsView& batch, const std::set<int>& classes, bool strict_eq1 = false) {
    batch.validate();
    std::map<int, std::vector<double>> out;
    std::map<int, std::size_t> containing;
    const std::size_t images = batch.images();
    std::vector<double> image_mean(batch.dim);
    for (std::size_t img = 0; img < images; ++img) {
        const std::size_t base = img * batch.rows_per_image;
        for (int c : classes) {
            std::fill(image_mean.begin(), image_mean.end(), 0.0);
            std::size_t count = 0;
            for (std::size_t r = base; r < base + batch.rows_per_image; ++r) {
                if (batch.labels[r] != c) continue;
                const auto row = batch.row(r);
                for (std::size_t j = 0; j < batch.dim; ++j) image_mean[j] += row[j];
                ++count;
            }
            if (count == 0) continue;
            auto [it, fresh] = out.try_emplace(c, std::vector<double>(batch.dim, 0.0));
            for (std::size_t j = 0; j < batch.dim; ++j) {
                it->second[j] += image_mean[j] / static_cast<double>(count);
            }
            ++containing[c];
        }
    }
    for (auto& [c, v] : out) {
        const double denom = strict_eq1 ? static_cast<double>(images)
                                        : static_cast<double>(containing[c]);
        for (double& x : v) x /= denom;
    }
    return out;
}

// Per-class global prototypes: running arithmetic mean over every batch in
// which the class appeared (t counts those batches, not training steps).
// Deleted classes are frozen so the dispersion loss keeps a fixed target.
class PrototypeStore {
public:
    explicit PrototypeStore(std::size_t dim) : dim_(dim) {
        if (dim == 0) throw ConfigError("prototype store: dim must be positive");
    }

    std::size_t dim() const { return dim_; }

    // p_c[0] = 0 for every class, so unknown ids read as the zero vector.
    std::vector<double> global(int c) const {
        auto it = global_.find(c);
        return it == global_.end() ? std::vector<double>(dim_, 0.0) : it->second;
    }

    std::size_t step_count(int c) const {
        auto it = counts_.find(c);
        return it == counts_.end() ? 0 : it->second;
    }

    bool known(int c) const { return counts_.count(c) > 0; }
    bool is_frozen(int c) const { return frozen_.count(c) > 0; }

    std::set<int> known_classes() const {
        std::set<int> s;
        for (const auto& [c, n] : counts_) s.insert(c);
        return s;
    }

    const std::set<int>& frozen_classes() const { return frozen_; }

    void update_global(const std::map<int, std::vector<double>>& batch_protos) {
        for (const auto& [c, v] : batch_protos) {
            if (v.size() != dim_) {
                throw DimensionError("prototype update: class " + std::to_string(c) +
                                     " vector has length " + std::to_string(v.size()));
            }
            if (frozen_.count(c)) {
                throw FrozenClassError("prototype update: class " + std::to_string(c) +
                                       " is frozen");
            }
            for (double x : v) {
                if (!std::isfinite(x)) {
                    throw NumericError("prototype update: non-finite component");
                }
            }
            const double t = static_cast<double>(++counts_[c]);
            auto& p = global_.try_emplace(c, std::vector<double>(dim_, 0.0)).first->second;
            for (std::size_t j = 0; j < dim_; ++j) {
                p[j] = ((t - 1.0) * p[j] + v[j]) / t;
            }
        }
    }

    void freeze(const std::set<int>& classes) {
        for (int c : classes) {
            if (!known(c)) {
                throw UnknownClassError("freeze: class " + std::to_string(c) +
                                        " has no prototype");
            }
        }
        frozen_.insert(classes.begin(), classes.end());
    }

    // Restart the running mean for a class (Eq. 2's t resets at task
    // boundaries so prototypes track the current step's features). The
    // stored vector stays readable until the first new update replaces it.
    void reset_count(int c) {
        if (frozen_.count(c)) {
            throw FrozenClassError("reset_count: class " + std::to_string(c) +
                                   " is frozen");
        }
        counts_[c] = 0;
    }

    // Checkpoint restore path.
    void set_state(int c, std::vector<double> p, std::size_t count, bool frozen) {
        if (p.size() != dim_) throw DimensionError("prototype set_state: length mismatch");
        global_[c] = std::move(p);
        counts_[c] = count;
        if (frozen) frozen_.insert(c);
    }

private:
    std::size_t dim_;
    std::map<int, std::vector<double>> global_;
    std::map<int, std::size_t> counts_;
    std::set<int> frozen_;
};

inline void freeze_deleted(PrototypeStore& store, const std::set<int>& deleted) {
    store.freeze(deleted);
}

}  // namespace lsf
