#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "lsf/errors.hpp"
#include "lsf/prototypes.hpp"

namespace lsf {

// Accuracy matrix a[l][p] for l >= p, split per task into the designated
// preserved and deleted class subsets. Steps and tasks are 0-based; the
// metric functions below take t as a 1-based count of completed steps.
class AccuracyHistory {
public:
    struct Entry {
        std::optional<double> preserved;
        std::optional<double> deleted;
    };

    void record(std::size_t step, std::size_t task, std::optional<double> preserved,
                std::optional<double> deleted) {
        if (task > step) throw ContractError("history: a[l][p] defined only for l >= p");
        for (const auto& v : {preserved, deleted}) {
            if (v && (*v < 0.0 || *v > 1.0)) {
                throw ContractError("history: accuracy outside [0,1]");
            }
        }
        if (steps_.size() <= step) steps_.resize(step + 1);
        if (steps_[step].size() <= task) steps_[step].resize(task + 1);
        steps_[step][task] = Entry{preserved, deleted};
    }

    std::size_t steps() const { return steps_.size(); }

    const Entry& at(std::size_t step, std::size_t task) const {
        if (step >= steps_.size() || task >= steps_[step].size()) {
            throw ContractError("history: entry not recorded");
        }
        return steps_[step][task];
    }

    bool has(std::size_t step, std::size_t task) const {
        return step < steps_.size() && task < steps_[step].size();
    }

private:
    std::vector<std::vector<Entry>> steps_;
};

// A_t: mean preserved-subset accuracy over tasks 1..t after step t. Tasks
// without a preserved subset are excluded from the mean.
inline double average_accuracy_A(const AccuracyHistory& h, std::size_t t) {
    if (t == 0) throw UndefinedMetricError("A: no completed steps");
    if (t > h.steps()) throw UndefinedMetricError("A: step not evaluated yet");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < t; ++p) {
        if (!h.has(t - 1, p)) continue;
        const auto& e = h.at(t - 1, p);
        if (e.preserved) {
            sum += *e.preserved;
            ++n;
        }
    }
    if (n == 0) throw UndefinedMetricError("A: no task has a preserved subset");
    return sum / static_cast<double>(n);
}

// F_t: mean over past tasks (their deleted subsets are in force) of the
// largest drop from peak to current deleted-subset accuracy.
inline double forgetting_F(const AccuracyHistory& h, std::size_t t) {
    if (t == 0) throw UndefinedMetricError("F: no completed steps");
    if (t > h.steps()) throw UndefinedMetricError("F: step not evaluated yet");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p + 1 < t; ++p) {
        std::optional<double> peak;
        std::optional<double> current;
        for (std::size_t l = p; l < t; ++l) {
            if (!h.has(l, p)) continue;
            const auto& e = h.at(l, p);
            if (!e.deleted) continue;
            peak = peak ? std::max(*peak, *e.deleted) : *e.deleted;
            if (l == t - 1) current = *e.deleted;
        }
        if (!peak || !current) continue;
        sum += *peak - *current;
        ++n;
    }
    if (n == 0) {
        throw UndefinedMetricError("F: no task with an active deleted subset");
    }
    return sum / static_cast<double>(n);
}

// LSFM: harmonic mean of A and F, with the 0/0 limit defined as 0. Equal
// arguments return exactly that value.
inline double lsfm_S(double a, double f) {
    if (a < 0.0 || f < 0.0) throw ContractError("S: A and F must be non-negative");
    if (a == f) return a;
    return 2.0 * a * f / (a + f);
}

// Numeric stand-in for the t-SNE panels: per class, the mean distance of
// its features to its prototype.
inline std::map<int, double> dispersion_stat(const FeatureRowsView& features,
                                             const std::map<int, std::vector<double>>& protos,
                                             const std::set<int>& classes) {
    features.validate();
    std::map<int, double> sums;
    std::map<int, std::size_t> counts;
    for (std::size_t r = 0; r < features.rows; ++r) {
        const int c = features.labels[r];
        if (c < 0 || !classes.count(c)) continue;
        auto it = protos.find(c);
        if (it == protos.end()) continue;
        const auto row = features.row(r);
        double sq = 0.0;
        for (std::size_t j = 0; j < features.dim; ++j) {
            const double d = row[j] - it->second[j];
            sq += d * d;
        }
        sums[c] += std::sqrt(sq);
        ++counts[c];
    }
    std::map<int, double> out;
    for (const auto& [c, s] : sums) out[c] = s / static_cast<double>(counts[c]);
    return out;
}

}  // namespace lsf
