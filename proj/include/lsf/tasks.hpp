#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lsf/errors.hpp"

namespace lsf {

enum class TaskMode { classification, segmentation };

inline std::string task_mode_name(TaskMode m) {
    return m == TaskMode::classification ? "classification" : "segmentation";
}

// Class bookkeeping for one training step: the classes being learned now,
// the past classes to keep, and the past classes to forget. The three sets
// are pairwise disjoint and preserved ∪ deleted covers everything learned
// before this step.
struct ClassPartition {
    std::set<int> current;
    std::set<int> preserved;
    std::set<int> deleted;
    std::optional<int> background;
    TaskMode mode = TaskMode::classification;

    std::set<int> learned_before() const {
        std::set<int> s = preserved;
        s.insert(deleted.begin(), deleted.end());
        return s;
    }

    bool is_deleted(int c) const { return deleted.count(c) > 0; }

    void validate() const {
        for (int c : current) {
            if (preserved.count(c) || deleted.count(c)) {
                throw ConfigError("partition: class " + std::to_string(c) +
                                  " appears in more than one set");
            }
        }
        for (int c : preserved) {
            if (deleted.count(c)) {
                throw ConfigError("partition: class " + std::to_string(c) +
                                  " both preserved and deleted");
            }
        }
    }
};

// Ordered task sequence. Within each task the leading ceil(fraction * n)
// classes are designated for deletion once the task is past; the rest are
// designated for preservation.
struct TaskPlan {
    std::vector<std::vector<int>> task_classes;
    double deletion_fraction = 0.30;
    TaskMode mode = TaskMode::classification;

    std::size_t tasks() const { return task_classes.size(); }

    const std::vector<int>& classes_of(std::size_t t) const {
        if (t >= task_classes.size()) throw ContractError("task index out of range");
        return task_classes[t];
    }

    std::size_t deleted_count(std::size_t t) const {
        const double n = static_cast<double>(classes_of(t).size());
        return static_cast<std::size_t>(std::ceil(deletion_fraction * n));
    }

    std::vector<int> deleted_designated(std::size_t t) const {
        const auto& cls = classes_of(t);
        return {cls.begin(), cls.begin() + static_cast<long>(deleted_count(t))};
    }

    std::vector<int> preserved_designated(std::size_t t) const {
        const auto& cls = classes_of(t);
        return {cls.begin() + static_cast<long>(deleted_count(t)), cls.end()};
    }

    // Deletion set in force while training step `step`: the designated
    // classes of every earlier task.
    std::set<int> deletion_set_at(std::size_t step) const {
        std::set<int> s;
        for (std::size_t t = 0; t < step && t < tasks(); ++t) {
            const auto del = deleted_designated(t);
            s.insert(del.begin(), del.end());
        }
        return s;
    }

    std::set<int> learned_through(std::size_t step) const {
        std::set<int> s;
        for (std::size_t t = 0; t <= step && t < tasks(); ++t) {
            s.insert(task_classes[t].begin(), task_classes[t].end());
        }
        return s;
    }

    // The background id never joins the class sets: it supplies p_b and is
    // tracked by the prototype store, but the contrastive losses range over
    // task classes only.
    ClassPartition partition_at(std::size_t step,
                                std::optional<int> background = std::nullopt) const {
        ClassPartition p;
        p.mode = mode;
        p.background = background;
        p.current.insert(task_classes.at(step).begin(), task_classes.at(step).end());
        p.deleted = deletion_set_at(step);
        if (step > 0) {
            for (int c : learned_through(step - 1)) {
                if (!p.deleted.count(c)) p.preserved.insert(c);
            }
        }
        p.validate();
        return p;
    }

    void validate() const {
        if (task_classes.empty()) throw ConfigError("plan: no tasks");
        if (!(deletion_fraction > 0.0 && deletion_fraction < 1.0)) {
            throw ConfigError("plan: deletion fraction must lie in (0,1)");
        }
        std::set<int> seen;
        for (const auto& cls : task_classes) {
            if (cls.empty()) throw ConfigError("plan: empty task class list");
            for (int c : cls) {
                if (!seen.insert(c).second) {
                    throw ConfigError("plan: class " + std::to_string(c) +
                                      " appears in two tasks");
                }
            }
        }
    }
};

// Partition `classes` into consecutive groups of the given sizes.
inline TaskPlan split_tasks(const std::vector<int>& classes,
                            const std::vector<std::size_t>& sizes,
                            double deletion_fraction, TaskMode mode) {
    if (!(deletion_fraction > 0.0 && deletion_fraction < 1.0)) {
        throw ConfigError("split_tasks: deletion fraction must lie in (0,1)");
    }
    std::size_t total = 0;
    for (std::size_t s : sizes) total += s;
    if (sizes.empty() || total != classes.size()) {
        throw ConfigError("split_tasks: task sizes must cover all classes");
    }
    TaskPlan plan;
    plan.deletion_fraction = deletion_fraction;
    plan.mode = mode;
    std::size_t off = 0;
    for (std::size_t s : sizes) {
        plan.task_classes.emplace_back(classes.begin() + static_cast<long>(off),
                                       classes.begin() + static_cast<long>(off + s));
        off += s;
    }
    plan.validate();
    return plan;
}

// Equal-sized split into `tasks` groups; class count must divide evenly.
inline TaskPlan split_tasks(const std::vector<int>& classes, std::size_t tasks,
                            double deletion_fraction, TaskMode mode) {
    if (tasks == 0 || classes.size() % tasks != 0) {
        throw ConfigError("split_tasks: " + std::to_string(tasks) +
                          " tasks do not evenly divide " + std::to_string(classes.size()) +
                          " classes");
    }
    return split_tasks(classes, std::vector<std::size_t>(tasks, classes.size() / tasks),
                       deletion_fraction, mode);
}

}  // namespace lsf
