#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lsf/data.hpp"
#include "lsf/losses.hpp"
#include "lsf/metrics.hpp"
#include "lsf/models.hpp"
#include "lsf/prototypes.hpp"
#include "lsf/rng.hpp"
#include "lsf/tasks.hpp"

namespace lsf {

struct TrainConfig {
    std::size_t epochs = 40;
    std::size_t batch_size = 16;
    double lr = 0.05;
    double later_lr_scale = 0.3;  // lr multiplier from the second task on
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 7;
    std::size_t codes_per_class = 8;  // K stand-in inputs per learned class
    double code_sigma = 0.05;
    std::size_t probe_limit = 256;  // per-subset sample cap for epoch probes
    std::size_t probe_scenes = 8;   // scene cap for segmentation probes
    bool strict_eq1 = false;

    void validate() const {
        if (epochs == 0 || batch_size == 0 || codes_per_class == 0) {
            throw ConfigError("train: epochs, batch size and codes must be positive");
        }
        if (lr <= 0.0 || later_lr_scale <= 0.0 || code_sigma < 0.0) {
            throw ConfigError("train: learning rates must be positive");
        }
        if (momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0) {
            throw ConfigError("train: momentum in [0,1), weight decay >= 0");
        }
    }
};

// Per-class stand-in inputs kept in place of raw past samples: one centroid
// base code plus seeded jitters. Immutable once a class is entered.
class ClassCodeStore {
public:
    bool has(int c) const { return codes_.count(c) > 0; }

    const std::vector<std::vector<double>>& of(int c) const {
        auto it = codes_.find(c);
        if (it == codes_.end()) {
            throw UnknownClassError("codes: class " + std::to_string(c) + " not stored");
        }
        return it->second;
    }

    void put(int c, std::vector<std::vector<double>> entries) {
        if (has(c)) throw ContractError("codes: class " + std::to_string(c) + " already stored");
        codes_.emplace(c, std::move(entries));
    }

    std::set<int> classes() const {
        std::set<int> s;
        for (const auto& [c, v] : codes_) s.insert(c);
        return s;
    }

private:
    std::map<int, std::vector<std::vector<double>>> codes_;
};

// Base code = centroid of the class's training inputs; K-1 seeded Gaussian
// jitters around it.
inline void make_class_codes(ClassCodeStore& store, const VectorDataset::Split& train,
                             const std::vector<int>& classes, std::size_t k, double sigma,
                             Rng rng) {
    for (int c : classes) {
        std::vector<double> base;
        std::size_t count = 0;
        for (std::size_t i = 0; i < train.y.size(); ++i) {
            if (train.y[i] != c) continue;
            if (base.empty()) base.assign(train.x[i].size(), 0.0);
            for (std::size_t j = 0; j < base.size(); ++j) base[j] += train.x[i][j];
            ++count;
        }
        if (count == 0) {
            throw DegenerateClassError("codes: class " + std::to_string(c) +
                                       " has no training samples");
        }
        for (double& v : base) v /= static_cast<double>(count);
        std::vector<std::vector<double>> entries;
        entries.push_back(base);
        for (std::size_t j = 1; j < k; ++j) {
            std::vector<double> jitter = base;
            for (double& v : jitter) v += rng.normal(0.0, sigma);
            entries.push_back(std::move(jitter));
        }
        store.put(c, std::move(entries));
    }
}

// Background pixels inherit the teacher's confident foreground prediction;
// everything else keeps its ground-truth label.
inline std::vector<int> build_pseudo_labels(const std::vector<int>& gt,
                                            const std::vector<int>& teacher_pred,
                                            const std::set<int>& learned_foreground,
                                            int background) {
    if (gt.size() != teacher_pred.size()) {
        throw DimensionError("pseudo labels: label maps differ in size");
    }
    std::vector<int> out = gt;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (gt[i] == background && learned_foreground.count(teacher_pred[i])) {
            out[i] = teacher_pred[i];
        }
    }
    return out;
}

struct EpochTrace {
    std::size_t step = 0;
    std::size_t epoch = 0;
    std::optional<double> preserved_probe;
    std::optional<double> deleted_probe;
    double mean_loss = 0.0;
};

struct StepSummary {
    std::size_t step = 0;
    double A = 0.0;
    std::optional<double> F;
    std::optional<double> S;
};

struct DispersionSnapshot {
    std::size_t step = 0;
    std::map<int, double> mean_distance;  // class -> mean feature distance to prototype
};

struct ResultsBundle {
    std::string config_echo;
    AccuracyHistory history;
    std::vector<EpochTrace> traces;
    std::vector<EpochTrace> step_start_probes;  // probe state before each step's first epoch
    std::vector<StepSummary> summary;
    std::vector<DispersionSnapshot> dispersion;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;  // informational only, not part of determinism
};

// Drives the task sequence: bookkeeping, pseudo-labels or code replay,
// prototype updates, the Eq. 10 objective, SGD, and evaluation. Strictly
// single-threaded and seed-deterministic.
class ContinualEngine {
public:
    ContinualEngine(TaskPlan plan, TrainConfig tcfg, ModelConfig mcfg, LossWeights weights,
                    VectorDataset data)
        : plan_(std::move(plan)),
          cfg_(tcfg),
          weights_(weights),
          vectors_(std::move(data)),
          rng_(tcfg.seed),
          model_(mcfg, init_rng()),
          store_(mcfg.feature_dim()) {
        init_common(mcfg, TaskMode::classification);
    }

    ContinualEngine(TaskPlan plan, TrainConfig tcfg, ModelConfig mcfg, LossWeights weights,
                    SceneDataset data)
        : plan_(std::move(plan)),
          cfg_(tcfg),
          weights_(weights),
          scenes_(std::move(data)),
          rng_(tcfg.seed),
          model_(mcfg, init_rng()),
          store_(mcfg.feature_dim()) {
        init_common(mcfg, TaskMode::segmentation);
    }

    const TaskPlan& plan() const { return plan_; }
    const ModelBundle& model() const { return model_; }
    const PrototypeStore& prototypes() const { return store_; }
    const ClassCodeStore& codes() const { return codes_; }
    const AccuracyHistory& history() const { return history_; }
    const std::vector<EpochTrace>& traces() const { return traces_; }
    const std::vector<EpochTrace>& step_start_probes() const { return step_start_probes_; }
    const std::vector<DispersionSnapshot>& dispersion() const { return dispersion_; }
    bool has_teacher() const { return teacher_.has_value(); }
    std::optional<int> background() const { return background_; }

    // Train sample indices visible while learning task t: only samples (or
    // scenes) carrying that task's classes. Past raw data is never touched.
    std::vector<std::size_t> task_train_indices(std::size_t task) const {
        std::set<int> current(plan_.classes_of(task).begin(), plan_.classes_of(task).end());
        std::vector<std::size_t> idx;
        if (mode_ == TaskMode::classification) {
            for (std::size_t i = 0; i < vectors_.train.y.size(); ++i) {
                if (current.count(vectors_.train.y[i])) idx.push_back(i);
            }
        } else {
            for (std::size_t i = 0; i < scenes_.train.size(); ++i) {
                for (int l : scenes_.train[i].labels) {
                    if (current.count(l)) {
                        idx.push_back(i);
                        break;
                    }
                }
            }
        }
        return idx;
    }

    void train_step_task(std::size_t task) {
        if (task != next_task_) {
            throw ContractError("train_step_task: tasks must run in order");
        }
        const ClassPartition part = plan_.partition_at(task, background_);
        if (task > 0) {
            teacher_ = freeze_snapshot(model_);
            std::set<int> newly;
            for (int c : part.deleted) {
                if (!store_.is_frozen(c)) newly.insert(c);
            }
            if (!newly.empty()) freeze_deleted(store_, newly);
            // Eq. 2's batch index restarts per step so live prototypes track
            // the current feature distribution rather than the full history.
            for (int c : store_.known_classes()) {
                if (!store_.is_frozen(c)) store_.reset_count(c);
            }
        }
        std::vector<int> head_classes = plan_.classes_of(task);
        if (task == 0 && background_) {
            head_classes.insert(head_classes.begin(), *background_);
        }
        Rng head_rng = rng_.fork(300 + task);
        model_.add_head(head_classes, head_rng);

        velocities_.assign(model_.named_parameters().size(), {});
        const double lr = task == 0 ? cfg_.lr : cfg_.lr * cfg_.later_lr_scale;

        Rng task_rng = rng_.fork(100 + task);
        std::vector<std::size_t> order = task_train_indices(task);
        if (order.empty()) throw DegenerateBatchError("task has no training data");

        EpochTrace start;
        start.step = task;
        start.epoch = 0;
        probe_accuracy(part, start);
        step_start_probes_.push_back(start);

        for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
            task_rng.shuffle(order);
            double loss_sum = 0.0;
            std::size_t batches = 0;
            for (std::size_t off = 0; off < order.size(); off += cfg_.batch_size) {
                const std::size_t end = std::min(order.size(), off + cfg_.batch_size);
                std::vector<std::size_t> batch(order.begin() + static_cast<long>(off),
                                               order.begin() + static_cast<long>(end));
                try {
                    loss_sum += run_batch(task, part, batch, lr);
                } catch (const NumericError& e) {
                    throw NumericError("task " + std::to_string(task) + " epoch " +
                                       std::to_string(epoch) + " batch " +
                                       std::to_string(batches) + ": " + e.what());
                }
                ++batches;
            }
            EpochTrace tr;
            tr.step = task;
            tr.epoch = epoch;
            tr.mean_loss = loss_sum / static_cast<double>(batches);
            probe_accuracy(part, tr);
            traces_.push_back(tr);
        }

        if (mode_ == TaskMode::classification) {
            make_class_codes(codes_, vectors_.train, plan_.classes_of(task),
                             cfg_.codes_per_class, cfg_.code_sigma, rng_.fork(200 + task));
        }
        ++next_task_;
    }

    // Evaluate a_{t,p} for every past task on the held-out test split and
    // snapshot dispersion statistics.
    void evaluate_step(std::size_t step) {
        for (std::size_t p = 0; p <= step; ++p) {
            const auto preserved = plan_.preserved_designated(p);
            const auto deleted = plan_.deleted_designated(p);
            history_.record(step, p, subset_accuracy(preserved), subset_accuracy(deleted));
        }
        DispersionSnapshot snap;
        snap.step = step;
        snap.mean_distance = test_dispersion(step);
        dispersion_.push_back(snap);
    }

    ResultsBundle run_sequence() {
        const auto start = std::chrono::steady_clock::now();
        plan_.validate();
        cfg_.validate();
        weights_.validate();
        for (std::size_t t = 0; t < plan_.tasks(); ++t) {
            train_step_task(t);
            evaluate_step(t);
        }
        ResultsBundle out;
        out.history = history_;
        out.traces = traces_;
        out.step_start_probes = step_start_probes_;
        out.dispersion = dispersion_;
        out.seed = cfg_.seed;
        for (std::size_t t = 0; t < plan_.tasks(); ++t) {
            StepSummary s;
            s.step = t;
            s.A = average_accuracy_A(history_, t + 1);
            try {
                s.F = forgetting_F(history_, t + 1);
                s.S = lsfm_S(s.A, *s.F);
            } catch (const UndefinedMetricError&) {
                // single task or no deletions yet: F and S reported absent
            }
            out.summary.push_back(s);
        }
        out.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return out;
    }

    // --- numeric evaluation helpers (frozen model, no training effects) ---

    // Classification: encode a plain sample matrix.
    std::vector<double> classify_features(const std::vector<std::vector<double>>& xs) const {
        Graph g;
        EncodedBatch enc = encode(g, model_, sample_matrix(xs));
        return {enc.rows.values().begin(), enc.rows.values().end()};
    }

    std::vector<int> classify(const std::vector<std::vector<double>>& xs) const {
        Graph g;
        EncodedBatch enc = encode(g, model_, sample_matrix(xs));
        Tensor logits = decode_logits(g, model_, enc.rows);
        return argmax_rows(logits, model_.logit_classes());
    }

    // Segmentation: per-pixel predicted class ids for one scene.
    std::vector<int> predict_scene(const ShapeScene& scene) const {
        return predict_scene_with(model_, scene);
    }

private:
    Rng init_rng() { return Rng(cfg_.seed).fork(1); }

    void init_common(const ModelConfig& mcfg, TaskMode expected) {
        if (plan_.mode != expected) {
            throw ConfigError("engine: dataset type does not match plan mode");
        }
        mcfg.validate();
        cfg_.validate();
        weights_.validate();
        plan_.validate();
        mode_ = plan_.mode;
        if (mode_ == TaskMode::segmentation) background_ = 0;
    }

    Tensor sample_matrix(const std::vector<std::vector<double>>& xs) const {
        if (xs.empty()) throw DegenerateBatchError("empty sample batch");
        const std::size_t d = xs.front().size();
        std::vector<double> flat;
        flat.reserve(xs.size() * d);
        for (const auto& x : xs) {
            if (x.size() != d) throw DimensionError("sample matrix: ragged rows");
            flat.insert(flat.end(), x.begin(), x.end());
        }
        return Tensor::from_values({xs.size(), d}, std::move(flat), false);
    }

    static std::vector<int> argmax_rows(const Tensor& logits, const std::vector<int>& classes) {
        const std::size_t n = logits.extent(0), c = logits.extent(1);
        std::vector<int> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j) {
                if (logits[i * c + j] > logits[i * c + best]) best = j;
            }
            out[i] = classes[best];
        }
        return out;
    }

    std::vector<int> predict_scene_with(const ModelBundle& m, const ShapeScene& scene) const {
        Graph g;
        Tensor img = Tensor::from_values({3, scenes_.image_size, scenes_.image_size},
                                         scene.pixels, false);
        EncodedBatch enc = encode(g, m, std::vector<Tensor>{img});
        Tensor logits = decode_logits(g, m, enc.rows);
        return argmax_rows(logits, m.logit_classes());
    }

    // ----- batch assembly -----

    struct BatchData {
        EncodedBatch enc;
        std::vector<int> proto_labels;  // per row; -1 ignored
        std::vector<int> ce_targets;    // per row, column index or -1
        std::vector<char> distill_rows;
        std::vector<double> teacher_logits;  // empty when no teacher
        std::vector<int> teacher_classes;
    };

    double run_batch(std::size_t task, const ClassPartition& part,
                     const std::vector<std::size_t>& batch, double lr) {
        Graph g;
        BatchData data = mode_ == TaskMode::classification
                             ? build_classification_batch(g, part, batch)
                             : build_segmentation_batch(g, task, part, batch);

        LossTerms terms;
        Tensor logits = decode_logits(g, model_, data.enc.rows);
        if (weights_.enable_ce) {
            terms.ce = softmax_cross_entropy(g, logits, data.ce_targets, -1);
        }
        if (weights_.enable_dis && teacher_ && !part.preserved.empty()) {
            // the background head carries past knowledge too, so it counts
            // among the preserved classes for distillation
            ClassPartition dis_part = part;
            if (background_) {
                dis_part.current.erase(*background_);
                dis_part.preserved.insert(*background_);
            }
            terms.dis = loss_dis(g, logits, model_.logit_classes(), data.teacher_logits,
                                 data.teacher_classes, dis_part, data.distill_rows);
        }

        std::set<int> proto_classes = part.current;
        proto_classes.insert(part.preserved.begin(), part.preserved.end());
        proto_classes.insert(part.deleted.begin(), part.deleted.end());
        const bool need_batch_protos = weights_.enable_pc || weights_.enable_ex_p;
        std::map<int, Tensor> protos_diff;
        if (need_batch_protos) {
            protos_diff = batch_prototypes(g, data.enc.rows, data.proto_labels,
                                           data.enc.rows_per_image, proto_classes,
                                           cfg_.strict_eq1);
        }
        if (weights_.enable_pc) {
            // segmentation keeps the literal S_{t-1}: pixel rows are diverse,
            // so anchoring a deleted class's batch mean still lets individual
            // features scatter around it. Classification replays a class as a
            // handful of near-identical code rows, where the same anchor
            // would cancel the dispersion loss outright, so only live
            // prototypes take part there.
            const std::set<int> pc_classes = mode_ == TaskMode::segmentation
                                                 ? part.learned_before()
                                                 : part.preserved;
            terms.pc = loss_pc(g, protos_diff, store_, pc_classes);
        }
        if (weights_.enable_in_p) {
            terms.in_p = loss_in_p(g, data.enc.rows, data.proto_labels, store_, part);
        }
        if (weights_.enable_ex_p) {
            terms.ex_p = loss_ex_p(g, protos_diff, part, weights_.epsilon,
                                   weights_.ex_p_excludes_deleted);
        }
        if (weights_.enable_in_d && !part.deleted.empty()) {
            terms.in_d = dispersion_loss(g, data, part);
        }
        if (weights_.enable_ex_d) {
            terms.ex_d = loss_ex_d(g, data.enc.rows, data.proto_labels, store_, part);
        }
        Tensor total = total_loss(g, terms, weights_);
        g.backward(total);
        sgd_step(lr);

        // running-mean prototype update for current + preserved classes; the
        // background prototype is tracked alongside them to supply p_b
        std::set<int> update_classes = part.current;
        update_classes.insert(part.preserved.begin(), part.preserved.end());
        if (background_) update_classes.insert(*background_);
        FeatureRowsView view{data.enc.rows.values(), data.enc.rows.extent(0),
                             data.enc.rows.extent(1), data.enc.rows_per_image,
                             data.proto_labels};
        store_.update_global(in_batch_prototypes(view, update_classes, cfg_.strict_eq1));
        return total.scalar_value();
    }

    std::map<int, std::size_t> column_map() const {
        std::map<int, std::size_t> m;
        const auto classes = model_.logit_classes();
        for (std::size_t j = 0; j < classes.size(); ++j) m[classes[j]] = j;
        return m;
    }

    BatchData build_classification_batch(Graph& g, const ClassPartition& part,
                                         const std::vector<std::size_t>& batch) {
        BatchData out;
        const auto col_of = column_map();
        std::vector<std::vector<double>> rows;
        for (std::size_t i : batch) {
            rows.push_back(vectors_.train.x[i]);
            const int label = vectors_.train.y[i];
            out.proto_labels.push_back(label);
            out.ce_targets.push_back(static_cast<int>(col_of.at(label)));
            out.distill_rows.push_back(0);
        }
        // old-class knowledge is carried by the stored codes: preserved-class
        // code rows anchor the distillation, current images train on CE only
        for (int c : codes_.classes()) {
            for (const auto& code : codes_.of(c)) {
                rows.push_back(code);
                out.proto_labels.push_back(c);
                out.ce_targets.push_back(-1);
                out.distill_rows.push_back(part.deleted.count(c) ? 0 : 1);
            }
        }
        Tensor x = sample_matrix(rows);
        out.enc = encode(g, model_, x);
        if (teacher_) {
            Graph tg;
            EncodedBatch tenc = encode(tg, teacher_->bundle, x);
            Tensor tlogits = decode_logits(tg, teacher_->bundle, tenc.rows);
            out.teacher_logits.assign(tlogits.values().begin(), tlogits.values().end());
            out.teacher_classes = teacher_->bundle.logit_classes();
        }
        return out;
    }

    BatchData build_segmentation_batch(Graph& g, std::size_t task, const ClassPartition& part,
                                       const std::vector<std::size_t>& batch) {
        BatchData out;
        const auto col_of = column_map();
        const std::set<int> current(plan_.classes_of(task).begin(),
                                    plan_.classes_of(task).end());
        std::set<int> learned_fg;
        for (int c : part.learned_before()) learned_fg.insert(c);

        std::vector<Tensor> images;
        std::vector<int> all_pseudo;
        for (std::size_t idx : batch) {
            const ShapeScene& scene = scenes_.train[idx];
            images.push_back(Tensor::from_values(
                {3, scenes_.image_size, scenes_.image_size}, scene.pixels, false));
            // overlapped setup: only current classes stay labeled
            std::vector<int> view(scene.labels.size());
            for (std::size_t p = 0; p < view.size(); ++p) {
                view[p] = current.count(scene.labels[p]) ? scene.labels[p] : 0;
            }
            std::vector<int> pseudo = view;
            if (teacher_) {
                pseudo = build_pseudo_labels(view, predict_scene_with(teacher_->bundle, scene),
                                             learned_fg, *background_);
            }
            all_pseudo.insert(all_pseudo.end(), pseudo.begin(), pseudo.end());
        }
        out.enc = encode(g, model_, images);
        out.proto_labels = all_pseudo;
        out.ce_targets.resize(all_pseudo.size());
        out.distill_rows.resize(all_pseudo.size());
        for (std::size_t i = 0; i < all_pseudo.size(); ++i) {
            const bool is_deleted = part.deleted.count(all_pseudo[i]) > 0;
            const bool is_current = current.count(all_pseudo[i]) > 0;
            // deleted-class pixels feed the dispersion and background-fall
            // losses only; current-class pixels train by cross-entropy and
            // the remaining pixels carry the teacher's knowledge
            out.ce_targets[i] = is_deleted ? -1 : static_cast<int>(col_of.at(all_pseudo[i]));
            out.distill_rows[i] = (is_deleted || is_current) ? 0 : 1;
        }
        if (teacher_) {
            Graph tg;
            std::vector<Tensor> timages;
            for (std::size_t idx : batch) {
                timages.push_back(Tensor::from_values(
                    {3, scenes_.image_size, scenes_.image_size}, scenes_.train[idx].pixels,
                    false));
            }
            EncodedBatch tenc = encode(tg, teacher_->bundle, timages);
            Tensor tlogits = decode_logits(tg, teacher_->bundle, tenc.rows);
            out.teacher_logits.assign(tlogits.values().begin(), tlogits.values().end());
            out.teacher_classes = teacher_->bundle.logit_classes();
        }
        return out;
    }

    Tensor dispersion_loss(Graph& g, const BatchData& data, const ClassPartition& part) {
        std::vector<DispersionSpace> spaces;
        std::optional<std::pair<Tensor, Tensor>> projected;
        auto frozen_protos = [&](int stages) {
            std::map<int, std::vector<double>> protos;
            for (int c : part.deleted) {
                std::vector<double> p = store_.global(c);
                protos[c] = stages == 0 ? p : project_prototype(model_, p, stages);
            }
            return protos;
        };
        for (FeatureSpace space : weights_.feature_spaces) {
            if (space == FeatureSpace::F) {
                spaces.push_back({data.enc.rows, frozen_protos(0)});
            } else {
                if (!projected) projected = project_spaces(g, model_, data.enc);
                if (space == FeatureSpace::FStar) {
                    spaces.push_back({projected->first, frozen_protos(1)});
                } else {
                    spaces.push_back({projected->second, frozen_protos(2)});
                }
            }
        }
        return loss_in_d_total(g, spaces, data.proto_labels, part, weights_.epsilon);
    }

    void sgd_step(double lr) {
        const auto params = model_.named_parameters();
        if (velocities_.size() != params.size()) velocities_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor p = params[i].second;
            if (!p.has_grad()) continue;
            auto& vel = velocities_[i];
            if (vel.size() != p.size()) vel.assign(p.size(), 0.0);
            auto vals = p.mutable_values();
            const auto grad = p.grad();
            for (std::size_t j = 0; j < vals.size(); ++j) {
                const double step = grad[j] + cfg_.weight_decay * vals[j];
                vel[j] = cfg_.momentum * vel[j] - lr * step;
                vals[j] += vel[j];
            }
            p.clear_grad();
        }
    }

    // ----- probes and evaluation -----

    void probe_accuracy(const ClassPartition& part, EpochTrace& tr) {
        if (mode_ == TaskMode::classification) {
            tr.preserved_probe = probe_classification(part.preserved);
            tr.deleted_probe = probe_classification(part.deleted);
        } else {
            tr.preserved_probe = probe_segmentation(part.preserved);
            tr.deleted_probe = probe_segmentation(part.deleted);
        }
    }

    std::optional<double> probe_classification(const std::set<int>& classes) {
        if (classes.empty()) return std::nullopt;
        std::vector<std::vector<double>> xs;
        std::vector<int> ys;
        for (std::size_t i = 0; i < vectors_.val.y.size() && xs.size() < cfg_.probe_limit;
             ++i) {
            if (classes.count(vectors_.val.y[i])) {
                xs.push_back(vectors_.val.x[i]);
                ys.push_back(vectors_.val.y[i]);
            }
        }
        if (xs.empty()) return std::nullopt;
        const auto pred = classify(xs);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < ys.size(); ++i) hits += pred[i] == ys[i];
        return static_cast<double>(hits) / static_cast<double>(ys.size());
    }

    std::optional<double> probe_segmentation(const std::set<int>& classes) {
        if (classes.empty()) return std::nullopt;
        std::size_t hits = 0, total = 0;
        const std::size_t n = std::min(cfg_.probe_scenes, scenes_.val.size());
        for (std::size_t i = 0; i < n; ++i) {
            const ShapeScene& scene = scenes_.val[i];
            const auto pred = predict_scene(scene);
            for (std::size_t p = 0; p < scene.labels.size(); ++p) {
                if (!classes.count(scene.labels[p])) continue;
                ++total;
                hits += pred[p] == scene.labels[p];
            }
        }
        if (total == 0) return std::nullopt;
        return static_cast<double>(hits) / static_cast<double>(total);
    }

    // Test accuracy over a class subset; classification counts samples,
    // segmentation averages per-class pixel recall over the subset.
    std::optional<double> subset_accuracy(const std::vector<int>& subset) {
        if (subset.empty()) return std::nullopt;
        const std::set<int> wanted(subset.begin(), subset.end());
        if (mode_ == TaskMode::classification) {
            std::vector<std::vector<double>> xs;
            std::vector<int> ys;
            for (std::size_t i = 0; i < vectors_.test.y.size(); ++i) {
                if (wanted.count(vectors_.test.y[i])) {
                    xs.push_back(vectors_.test.x[i]);
                    ys.push_back(vectors_.test.y[i]);
                }
            }
            if (xs.empty()) return std::nullopt;
            const auto pred = classify(xs);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < ys.size(); ++i) hits += pred[i] == ys[i];
            return static_cast<double>(hits) / static_cast<double>(ys.size());
        }
        std::map<int, std::size_t> correct, total;
        for (const ShapeScene& scene : scenes_.test) {
            bool relevant = false;
            for (int l : scene.labels) {
                if (wanted.count(l)) {
                    relevant = true;
                    break;
                }
            }
            if (!relevant) continue;
            const auto pred = predict_scene(scene);
            for (std::size_t p = 0; p < scene.labels.size(); ++p) {
                if (!wanted.count(scene.labels[p])) continue;
                ++total[scene.labels[p]];
                correct[scene.labels[p]] += pred[p] == scene.labels[p];
            }
        }
        if (total.empty()) return std::nullopt;
        double sum = 0.0;
        for (const auto& [c, n] : total) {
            sum += static_cast<double>(correct[c]) / static_cast<double>(n);
        }
        return sum / static_cast<double>(total.size());
    }

    std::map<int, double> test_dispersion(std::size_t step) {
        const std::set<int> learned = plan_.learned_through(step);
        std::map<int, std::vector<double>> protos;
        for (int c : learned) protos[c] = store_.global(c);
        if (mode_ == TaskMode::classification) {
            std::vector<std::vector<double>> xs;
            std::vector<int> ys;
            std::map<int, std::size_t> per_class;
            for (std::size_t i = 0; i < vectors_.test.y.size(); ++i) {
                const int y = vectors_.test.y[i];
                if (!learned.count(y) || per_class[y] >= 50) continue;
                xs.push_back(vectors_.test.x[i]);
                ys.push_back(y);
                ++per_class[y];
            }
            if (xs.empty()) return {};
            const auto feats = classify_features(xs);
            FeatureRowsView view{feats, ys.size(), model_.feature_dim(), 1, ys};
            return dispersion_stat(view, protos, learned);
        }
        std::map<int, double> sums;
        std::map<int, std::size_t> counts;
        const std::size_t n = std::min<std::size_t>(scenes_.test.size(), 12);
        for (std::size_t i = 0; i < n; ++i) {
            const ShapeScene& scene = scenes_.test[i];
            Graph g;
            Tensor img = Tensor::from_values({3, scenes_.image_size, scenes_.image_size},
                                             scene.pixels, false);
            EncodedBatch enc = encode(g, model_, std::vector<Tensor>{img});
            FeatureRowsView view{enc.rows.values(), scene.labels.size(),
                                 model_.feature_dim(), scene.labels.size(), scene.labels};
            for (const auto& [c, d] : dispersion_stat(view, protos, learned)) {
                std::size_t cls_rows = 0;
                for (int l : scene.labels) cls_rows += l == c;
                sums[c] += d * static_cast<double>(cls_rows);
                counts[c] += cls_rows;
            }
        }
        std::map<int, double> out;
        for (const auto& [c, s] : sums) out[c] = s / static_cast<double>(counts[c]);
        return out;
    }

    TaskPlan plan_;
    TrainConfig cfg_;
    LossWeights weights_;
    VectorDataset vectors_;
    SceneDataset scenes_;
    Rng rng_;
    ModelBundle model_;
    PrototypeStore store_;
    ClassCodeStore codes_;
    std::optional<TeacherSnapshot> teacher_;
    std::optional<int> background_;
    TaskMode mode_ = TaskMode::classification;
    std::size_t next_task_ = 0;
    std::vector<std::vector<double>> velocities_;
    AccuracyHistory history_;
    std::vector<EpochTrace> traces_;
    std::vector<EpochTrace> step_start_probes_;
    std::vector<DispersionSnapshot> dispersion_;
};

// Convenience wrapper matching the spec's run_sequence operation.
inline ResultsBundle run_sequence(TaskPlan plan, TrainConfig tcfg, ModelConfig mcfg,
                                  LossWeights weights, VectorDataset data) {
    ContinualEngine engine(std::move(plan), tcfg, mcfg, weights, std::move(data));
    return engine.run_sequence();
}

inline ResultsBundle run_sequence(TaskPlan plan, TrainConfig tcfg, ModelConfig mcfg,
                                  LossWeights weights, SceneDataset data) {
    ContinualEngine engine(std::move(plan), tcfg, mcfg, weights, std::move(data));
    return engine.run_sequence();
}

}  // namespace lsf
