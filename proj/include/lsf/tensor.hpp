#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lsf/errors.hpp"

namespace lsf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

struct TensorRec {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::optional<std::vector<double>> grad;
};

}  // namespace detail

// Dense row-major tensor of 64-bit reals. Value-semantic handle; the
// underlying buffer is shared, and operation outputs are never written to
// again once created. Rank-0 (empty shape) holds a single scalar.
class Tensor {
public:
    Tensor() : rec_(std::make_shared<detail::TensorRec>()) {
        rec_->data.assign(1, 0.0);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.rec_->shape = std::move(shape);
        t.rec_->data.assign(shape_numel(t.rec_->shape), 0.0);
        t.rec_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_values(Shape shape, std::vector<double> values,
                              bool requires_grad = false) {
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("tensor: " + shape_str(shape) + " cannot hold " +
                                 std::to_string(values.size()) + " values");
        }
        Tensor t;
        t.rec_->shape = std::move(shape);
        t.rec_->data = std::move(values);
        t.rec_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_values({}, {v}, requires_grad);
    }

    const Shape& shape() const { return rec_->shape; }
    std::size_t rank() const { return rec_->shape.size(); }
    std::size_t size() const { return rec_->data.size(); }
    std::size_t extent(std::size_t dim) const { return rec_->shape.at(dim); }
    bool is_scalar() const { return rec_->data.size() == 1; }

    std::span<const double> values() const { return rec_->data; }
    double operator[](std::size_t i) const { return rec_->data[i]; }

    double scalar_value() const {
        if (!is_scalar()) {
            throw ContractError("scalar_value: tensor has " +
                                std::to_string(size()) + " elements");
        }
        return rec_->data[0];
    }

    bool requires_grad() const { return rec_->requires_grad; }
    bool has_grad() const { return rec_->grad.has_value(); }

    std::span<const double> grad() const {
        if (!rec_->grad) throw ContractError("grad: no gradient populated");
        return *rec_->grad;
    }

    void clear_grad() { rec_->grad.reset(); }

    // Mutable access for the optimizer; training owns the only writer.
    std::span<double> mutable_values() { return rec_->data; }

    // Handle identity (same underlying buffer).
    bool same_as(const Tensor& other) const { return rec_ == other.rec_; }
    const void* id() const { return rec_.get(); }

    detail::TensorRec& rec() const { return *rec_; }

private:
    std::shared_ptr<detail::TensorRec> rec_;
};

// Append-only tape of operation records. Node order is a topological order
// by construction: an op's inputs always exist before its output. One
// Graph instance is built and differentiated by a single thread.
class Graph {
public:
    struct Node {
        const char* op;
        std::vector<Tensor> inputs;
        Tensor output;
        // Reads output grad, accumulates into each requires_grad input.
        std::function<void(Node&)> backprop;
    };

    std::size_t size() const { return nodes_.size(); }
    const Node& node(std::size_t i) const { return nodes_[i]; }

    Tensor record(const char* op, std::vector<Tensor> inputs, Shape out_shape,
                  std::vector<double> out_data,
                  std::function<void(Node&)> backprop) {
        bool needs = false;
        for (const Tensor& t : inputs) needs = needs || t.requires_grad();
        Tensor out = Tensor::from_values(std::move(out_shape), std::move(out_data), needs);
        check_finite(op, out.values());
        nodes_.push_back(Node{op, std::move(inputs), out, std::move(backprop)});
        return out;
    }

    static void check_finite(const char* op, std::span<const double> vals) {
        for (double v : vals) {
            if (!std::isfinite(v)) {
                throw NumericError(std::string(op) + ": non-finite value produced");
            }
        }
    }

    static void accumulate(const Tensor& t, std::span<const double> delta) {
        auto& rec = t.rec();
        if (!rec.requires_grad) return;
        if (!rec.grad) rec.grad.emplace(rec.data.size(), 0.0);
        auto& g = *rec.grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
    }

    // Reverse accumulation from a scalar loss. Populates grad on every
    // requires_grad tensor reachable from the loss; a loss with no history
    // in this graph (plain leaf) populates at most its own grad.
    void backward(const Tensor& loss) {
        if (!loss.is_scalar()) {
            throw ContractError("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
        }
        if (loss.requires_grad()) {
            auto& rec = loss.rec();
            if (!rec.grad) rec.grad.emplace(1, 0.0);
            (*rec.grad)[0] += 1.0;
        }
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            auto& out = n.output.rec();
            if (!out.requires_grad || !out.grad) continue;
            for (double g : *out.grad) {
                if (!std::isfinite(g)) {
                    throw NumericError("backward: non-finite gradient at node " +
                                       std::to_string(i) + " (" + n.op + ")");
                }
            }
            n.backprop(n);
        }
    }

private:
    std::vector<Node> nodes_;
};

}  // namespace lsf
