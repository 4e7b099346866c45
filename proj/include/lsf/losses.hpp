#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "lsf/ops.hpp"
#include "lsf/prototypes.hpp"
#include "lsf/tasks.hpp"

// The seven training losses and their weighted total. All functions build
// graph nodes and return scalar tensors; cases with nothing to measure
// return an exact zero so disabled or empty terms never perturb the total.

namespace lsf {

enum class FeatureSpace { F, FStar, FStarStar };

struct LossWeights {
    double lambda_p = 0.001;
    double lambda_d = 0.001;
    double epsilon = 1e-6;
    bool enable_ce = true;
    bool enable_dis = true;
    bool enable_pc = true;
    bool enable_in_p = true;
    bool enable_ex_p = true;
    bool enable_in_d = true;
    bool enable_ex_d = true;
    std::set<FeatureSpace> feature_spaces = {FeatureSpace::F, FeatureSpace::FStar,
                                             FeatureSpace::FStarStar};
    // Eq. 6 lets the repelled class range over every present class; this
    // switch restricts it to non-deleted ones.
    bool ex_p_excludes_deleted = false;

    void validate() const {
        if (lambda_p < 0.0 || lambda_d < 0.0) {
            throw ConfigError("loss weights: lambda values must be non-negative");
        }
        if (epsilon <= 0.0) throw ConfigError("loss weights: epsilon must be positive");
    }
};

namespace detail {

inline Tensor proto_leaf(std::span<const double> p) {
    return Tensor::from_values({p.size()}, std::vector<double>(p.begin(), p.end()), false);
}

inline std::vector<std::size_t> rows_of_class(const std::vector<int>& labels, int c) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == c) out.push_back(i);
    }
    return out;
}

inline std::set<int> present_classes(const std::vector<int>& labels) {
    std::set<int> s;
    for (int l : labels) {
        if (l >= 0) s.insert(l);
    }
    return s;
}

inline Tensor zero_scalar() { return Tensor::scalar(0.0); }

}  // namespace detail

// Differentiable in-batch prototypes (two-level mean as in
// in_batch_prototypes); gradient flows back into the feature rows.
inline std::map<int, Tensor> batch_prototypes(Graph& g, const Tensor& rows,
                                              const std::vector<int>& labels,
                                              std::size_t rows_per_image,
                                              const std::set<int>& classes,
                                              bool strict_eq1 = false) {
    if (rows.rank() != 2 || rows.extent(0) != labels.size()) {
        throw DimensionError("batch_prototypes: rows/labels misaligned");
    }
    if (rows_per_image == 0 || labels.size() % rows_per_image != 0) {
        throw DimensionError("batch_prototypes: bad rows_per_image");
    }
    const std::size_t images = labels.size() / rows_per_image;
    std::map<int, std::vector<Tensor>> image_means;
    for (std::size_t img = 0; img < images; ++img) {
        for (int c : classes) {
            std::vector<std::size_t> idx;
            for (std::size_t r = img * rows_per_image; r < (img + 1) * rows_per_image; ++r) {
                if (labels[r] == c) idx.push_back(r);
            }
            if (!idx.empty()) image_means[c].push_back(mean_rows(g, rows, std::move(idx)));
        }
    }
    std::map<int, Tensor> out;
    for (auto& [c, means] : image_means) {
        const double denom = strict_eq1 ? static_cast<double>(images)
                                        : static_cast<double>(means.size());
        Tensor sum = means.size() == 1 ? means.front() : add_n(g, means);
        out.emplace(c, scale(g, sum, 1.0 / denom));
    }
    return out;
}

// Compaction of current + preserved classes around their global prototypes.
inline Tensor loss_in_p(Graph& g, const Tensor& rows, const std::vector<int>& labels,
                        const PrototypeStore& store, const ClassPartition& part) {
    std::vector<Tensor> terms;
    for (int c : detail::present_classes(labels)) {
        if (!part.current.count(c) && !part.preserved.count(c)) continue;
        terms.push_back(sum_row_distances(g, rows, detail::rows_of_class(labels, c),
                                          detail::proto_leaf(store.global(c))));
    }
    if (terms.empty()) return detail::zero_scalar();
    Tensor sum = terms.size() == 1 ? terms.front() : add_n(g, terms);
    return scale(g, sum, 1.0 / static_cast<double>(terms.size()));
}

// One embedding space's share of the dispersion loss: reciprocal distance
// of deleted-class features to that space's frozen prototype.
inline Tensor loss_in_d_space(Graph& g, const Tensor& rows, const std::vector<int>& labels,
                              const std::map<int, std::vector<double>>& space_protos,
                              const ClassPartition& part, double epsilon) {
    std::vector<Tensor> terms;
    for (int c : detail::present_classes(labels)) {
        if (!part.deleted.count(c)) continue;
        auto it = space_protos.find(c);
        if (it == space_protos.end()) {
            throw ContractError("loss_in_d_space: no prototype for deleted class " +
                                std::to_string(c));
        }
        terms.push_back(sum_row_reciprocal_distances(g, rows, detail::rows_of_class(labels, c),
                                                     detail::proto_leaf(it->second), epsilon));
    }
    if (terms.empty()) return detail::zero_scalar();
    Tensor sum = terms.size() == 1 ? terms.front() : add_n(g, terms);
    return scale(g, sum, 1.0 / static_cast<double>(terms.size()));
}

// Feature rows of one embedding space paired with the deleted-class
// prototypes mapped into that space.
struct DispersionSpace {
    Tensor rows;
    std::map<int, std::vector<double>> protos;
};

// Dispersion summed over the active embedding spaces.
inline Tensor loss_in_d_total(Graph& g, const std::vector<DispersionSpace>& spaces,
                              const std::vector<int>& labels, const ClassPartition& part,
                              double epsilon) {
    std::vector<Tensor> terms;
    for (const DispersionSpace& s : spaces) {
        terms.push_back(loss_in_d_space(g, s.rows, labels, s.protos, part, epsilon));
    }
    if (terms.empty()) return detail::zero_scalar();
    return terms.size() == 1 ? terms.front() : add_n(g, terms);
}

// Repulsion between in-batch prototypes of different present classes.
inline Tensor loss_ex_p(Graph& g, const std::map<int, Tensor>& batch_protos,
                        const ClassPartition& part, double epsilon,
                        bool exclude_deleted = false) {
    std::vector<int> anchors;
    std::vector<int> others;
    for (const auto& [c, p] : batch_protos) {
        if (part.current.count(c) || part.preserved.count(c)) anchors.push_back(c);
        if (!exclude_deleted || !part.deleted.count(c)) others.push_back(c);
    }
    if (anchors.empty() || batch_protos.size() < 2) return detail::zero_scalar();
    std::vector<Tensor> terms;
    for (int cj : anchors) {
        for (int ck : others) {
            if (ck == cj) continue;
            Tensor dist = l2_distance(g, batch_protos.at(cj), batch_protos.at(ck));
            terms.push_back(reciprocal_guarded(g, dist, epsilon));
        }
    }
    if (terms.empty()) return detail::zero_scalar();
    Tensor sum = terms.size() == 1 ? terms.front() : add_n(g, terms);
    return scale(g, sum, 1.0 / static_cast<double>(anchors.size()));
}

// Background fall: pull deleted-class features toward the background
// prototype. Segmentation only; classification has no background.
inline Tensor loss_ex_d(Graph& g, const Tensor& rows, const std::vector<int>& labels,
                        const PrototypeStore& store, const ClassPartition& part) {
    if (part.mode == TaskMode::classification) return detail::zero_scalar();
    if (!part.background) {
        throw ConfigError("loss_ex_d: segmentation mode without a background class");
    }
    std::set<int> present_deleted;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= 0 && part.deleted.count(labels[i])) {
            present_deleted.insert(labels[i]);
            idx.push_back(i);
        }
    }
    if (idx.empty()) return detail::zero_scalar();
    if (!store.known(*part.background)) {
        throw ConfigError("loss_ex_d: background prototype unavailable");
    }
    Tensor sum = sum_row_distances(g, rows, std::move(idx),
                                   detail::proto_leaf(store.global(*part.background)));
    return scale(g, sum, 1.0 / static_cast<double>(present_deleted.size()));
}

// Prototype consistency: keep in-batch prototypes near their global mean
// for every class learned before this step.
inline Tensor loss_pc(Graph& g, const std::map<int, Tensor>& batch_protos,
                      const PrototypeStore& store, const std::set<int>& learned_prev) {
    if (learned_prev.empty()) return detail::zero_scalar();
    std::vector<Tensor> terms;
    for (int c : learned_prev) {
        auto it = batch_protos.find(c);
        if (it == batch_protos.end()) continue;
        terms.push_back(l2_distance(g, it->second, detail::proto_leaf(store.global(c))));
    }
    if (terms.empty()) return detail::zero_scalar();
    Tensor sum = terms.size() == 1 ? terms.front() : add_n(g, terms);
    return scale(g, sum, 1.0 / static_cast<double>(learned_prev.size()));
}

// Preserved-only distillation: teacher softmax renormalized over the
// preserved classes, student log-softmax over every current head.
// active_rows may restrict which rows contribute (empty = all rows).
inline Tensor loss_dis(Graph& g, const Tensor& student_logits,
                       const std::vector<int>& student_classes,
                       std::span<const double> teacher_logits,
                       const std::vector<int>& teacher_classes,
                       const ClassPartition& part,
                       const std::vector<char>& active_rows = {}) {
    if (part.preserved.empty()) return detail::zero_scalar();
    if (student_logits.rank() != 2 ||
        student_logits.extent(1) != student_classes.size()) {
        throw DimensionError("loss_dis: student logits/classes misaligned");
    }
    const std::size_t n = student_logits.extent(0);
    const std::size_t tc = teacher_classes.size();
    if (teacher_logits.size() != n * tc) {
        throw DimensionError("loss_dis: teacher logits shape mismatch");
    }
    if (!active_rows.empty() && active_rows.size() != n) {
        throw DimensionError("loss_dis: active row mask length mismatch");
    }
    std::map<int, std::size_t> student_col, teacher_col;
    for (std::size_t j = 0; j < student_classes.size(); ++j) student_col[student_classes[j]] = j;
    for (std::size_t j = 0; j < tc; ++j) teacher_col[teacher_classes[j]] = j;
    for (int c : part.preserved) {
        if (!student_col.count(c) || !teacher_col.count(c)) {
            throw DimensionError("loss_dis: preserved class " + std::to_string(c) +
                                 " missing from a head");
        }
    }
    const std::size_t sc = student_classes.size();
    std::vector<double> weights(n * sc, 0.0);
    std::size_t live = 0;
    std::vector<double> tprob(tc);
    for (std::size_t i = 0; i < n; ++i) {
        if (!active_rows.empty() && !active_rows[i]) continue;
        ++live;
        double mx = teacher_logits[i * tc];
        for (std::size_t j = 1; j < tc; ++j) mx = std::max(mx, teacher_logits[i * tc + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < tc; ++j) {
            tprob[j] = std::exp(teacher_logits[i * tc + j] - mx);
            z += tprob[j];
        }
        double mass = 0.0;
        for (int c : part.preserved) mass += tprob[teacher_col[c]] / z;
        if (mass <= 0.0) continue;
        for (int c : part.preserved) {
            weights[i * sc + student_col[c]] = (tprob[teacher_col[c]] / z) / mass;
        }
    }
    if (live == 0) return detail::zero_scalar();
    Tensor logp = log_softmax_rows(g, student_logits);
    Tensor weighted = mul_const(g, logp, std::move(weights));
    return scale(g, sum_all(g, weighted), -1.0 / static_cast<double>(live));
}

struct LossTerms {
    Tensor ce = Tensor::scalar(0.0);
    Tensor dis = Tensor::scalar(0.0);
    Tensor pc = Tensor::scalar(0.0);
    Tensor in_p = Tensor::scalar(0.0);
    Tensor ex_p = Tensor::scalar(0.0);
    Tensor in_d = Tensor::scalar(0.0);
    Tensor ex_d = Tensor::scalar(0.0);
};

// L_tot = L_ce + L_dis + L_pc + λp·(L_in^p + L_ex^p) + λd·(L_in^d + L_ex^d).
// Disabled terms contribute an exact zero.
inline Tensor total_loss(Graph& g, const LossTerms& terms, const LossWeights& w) {
    w.validate();
    auto pick = [](bool on, const Tensor& t) { return on ? t : detail::zero_scalar(); };
    Tensor base = add(g, add(g, pick(w.enable_ce, terms.ce), pick(w.enable_dis, terms.dis)),
                      pick(w.enable_pc, terms.pc));
    Tensor keep = add(g, pick(w.enable_in_p, terms.in_p), pick(w.enable_ex_p, terms.ex_p));
    Tensor forget = add(g, pick(w.enable_in_d, terms.in_d), pick(w.enable_ex_d, terms.ex_d));
    return add(g, base, add(g, scale(g, keep, w.lambda_p), scale(g, forget, w.lambda_d)));
}

}  // namespace lsf
