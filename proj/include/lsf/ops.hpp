#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "lsf/tensor.hpp"

// Differentiable operations recorded on a Graph. The set is exactly what the
// feature losses and the small encoder/decoder models require; there is no
// general broadcasting.

namespace lsf {

namespace detail {

inline void require(bool cond, const char* op, const std::string& msg) {
    if (!cond) throw DimensionError(std::string(op) + ": " + msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and reduction ops
// ---------------------------------------------------------------------------

inline Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
    detail::require(a.shape() == b.shape(), "add",
                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return g.record("add", {a, b}, a.shape(), std::move(out), [](Graph::Node& nd) {
        const auto& gout = *nd.output.rec().grad;
        Graph::accumulate(nd.inputs[0], gout);
        Graph::accumulate(nd.inputs[1], gout);
    });
}

inline Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
    detail::require(a.shape() == b.shape(), "sub",
                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return g.record("sub", {a, b}, a.shape(), std::move(out), [](Graph::Node& nd) {
        const auto& gout = *nd.output.rec().grad;
        Graph::accumulate(nd.inputs[0], gout);
        if (nd.inputs[1].requires_grad()) {
            std::vector<double> neg(gout.size());
            for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -gout[i];
            Graph::accumulate(nd.inputs[1], neg);
        }
    });
}

inline Tensor scale(Graph& g, const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a[i];
    return g.record("scale", {a}, a.shape(), std::move(out), [s](Graph::Node& nd) {
        const auto& gout = *nd.output.rec().grad;
        if (!nd.inputs[0].requires_grad()) return;
        std::vector<double> d(gout.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = s * gout[i];
        Graph::accumulate(nd.inputs[0], d);
    });
}

// Sum of same-shape tensors.
inline Tensor add_n(Graph& g, std::vector<Tensor> parts) {
    if (parts.empty()) throw ContractError("add_n: empty operand list");
    const Shape shape = parts.front().shape();
    for (const Tensor& p : parts) {
        detail::require(p.shape() == shape, "add_n", "shape mismatch");
    }
    std::vector<double> out(parts.front().size(), 0.0);
    for (const Tensor& p : parts) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
    }
    return g.record("add_n", std::move(parts), shape, std::move(out), [](Graph::Node& nd) {
        const auto& gout = *nd.output.rec().grad;
        for (Tensor& p : nd.inputs) Graph::accumulate(p, gout);
    });
}

inline Tensor relu(Graph& g, const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return g.record("relu", {a}, a.shape(), std::move(out), [](Graph::Node& nd) {
        if (!nd.inputs[0].requires_grad()) return;
        const auto& gout = *nd.output.rec().grad;
        const Tensor& x = nd.inputs[0];
        std::vector<double> d(gout.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = x[i] > 0.0 ? gout[i] : 0.0;
        Graph::accumulate(x, d);
    });
}

// Elementwise product with a constant weight array (no gradient to weights).
inline Tensor mul_const(Graph& g, const Tensor& a, std::vector<double> w) {
    detail::require(a.size() == w.size(), "mul_const", "weight length mismatch");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * w[i];
    return g.record("mul_const", {a}, a.shape(), std::move(out),
                    [w = std::move(w)](Graph::Node& nd) {
                        if (!nd.inputs[0].requires_grad()) return;
                        const auto& gout = *nd.output.rec().grad;
                        std::vector<double> d(gout.size());
                        for (std::size_t i = 0; i < d.size(); ++i) d[i] = gout[i] * w[i];
                        Graph::accumulate(nd.inputs[0], d);
                    });
}

inline Tensor sum_all(Graph& g, const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return g.record("sum_all", {a}, {}, {s}, [](Graph::Node& nd) {
        if (!nd.inputs[0].requires_grad()) return;
        const double go = (*nd.output.rec().grad)[0];
        std::vector<double> d(nd.inputs[0].size(), go);
        Graph::accumulate(nd.inputs[0], d);
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
    detail::require(a.rank() == 2 && b.rank() == 2, "matmul", "operands must be rank-2");
    detail::require(a.extent(1) == b.extent(0), "matmul",
                    "inner extents " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double x = a[i * k + l];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * b[l * n + j];
        }
    }
    return g.record("matmul", {a, b}, {m, n}, std::move(out), [m, k, n](Graph::Node& nd) {
        const auto& gout = *nd.output.rec().grad;
        const Tensor& A = nd.inputs[0];
        const Tensor& B = nd.inputs[1];
        if (A.requires_grad()) {
            std::vector<double> da(m * k, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double go = gout[i * n + j];
                    for (std::size_t l = 0; l < k; ++l) da[i * k + l] += go * B[l * n + j];
                }
            }
            Graph::accumulate(A, da);
        }
        if (B.requires_grad()) {
            std::vector<double> db(k * n, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t l = 0; l < k; ++l) {
                    const double x = A[i * k + l];
                    for (std::size_t j = 0; j < n; ++j) db[l * n + j] += x * gout[i * n + j];
                }
            }
            Graph::accumulate(B, db);
        }
    });
}

// Bias broadcast: rank-2 [N×d] + [d] over rows, rank-3 [C×H×W] + [C] over
// channels.
inline Tensor add_bias(Graph& g, const Tensor& a, const Tensor& b) {
    detail::require(b.rank() == 1, "add_bias", "bias must be rank-1");
    std::vector<double> out(a.values().begin(), a.values().end());
    if (a.rank() == 2) {
        const std::size_t n = a.extent(0), d = a.extent(1);
        detail::require(d == b.extent(0), "add_bias", "bias length vs columns");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out[i * d + j] += b[j];
    } else if (a.rank() == 3) {
        const std::size_t c = a.extent(0), hw = a.extent(1) * a.extent(2);
        detail::require(c == b.extent(0), "add_bias", "bias length vs channels");
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] += b[ch];
    } else {
        throw DimensionError("add_bias: operand must be rank-2 or rank-3");
    }
    return g.record("add_bias", {a, b}, a.shape(), std::move(out), [](Graph::Node& nd) {
        const auto& gout = *nd.output.rec().grad;
        const Tensor& x = nd.inputs[0];
        const Tensor& bias = nd.inputs[1];
        Graph::accumulate(x, gout);
        if (!bias.requires_grad()) return;
        std::vector<double> db(bias.size(), 0.0);
        if (x.rank() == 2) {
            const std::size_t n = x.extent(0), d = x.extent(1);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) db[j] += gout[i * d + j];
        } else {
            const std::size_t c = x.extent(0), hw = x.extent(1) * x.extent(2);
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t p = 0; p < hw; ++p) db[ch] += gout[ch * hw + p];
        }
        Graph::accumulate(bias, db);
    });
}

// Cross-correlation, stride 1, zero padding (k-1)/2, kernel 1 or 3.
// x [C×H×W], w [C'×C×k×k] -> [C'×H×W].
inline Tensor conv2d(Graph& g, const Tensor& x, const Tensor& w) {
    detail::require(x.rank() == 3 && w.rank() == 4, "conv2d", "x rank-3, w rank-4");
    const std::size_t cin = x.extent(0), h = x.extent(1), wd = x.extent(2);
    const std::size_t cout = w.extent(0), k = w.extent(2);
    if (k != 1 && k != 3) {
        throw UnsupportedOpError("conv2d: kernel size " + std::to_string(k) +
                                 " not supported (1 or 3)");
    }
    detail::require(w.extent(1) == cin, "conv2d", "channel counts differ");
    detail::require(w.extent(3) == k, "conv2d", "kernel must be square");
    const long pad = static_cast<long>(k - 1) / 2;
    std::vector<double> out(cout * h * wd, 0.0);
    for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < wd; ++j) {
                double acc = 0.0;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    for (std::size_t u = 0; u < k; ++u) {
                        const long ii = static_cast<long>(i) + static_cast<long>(u) - pad;
                        if (ii < 0 || ii >= static_cast<long>(h)) continue;
                        for (std::size_t v = 0; v < k; ++v) {
                            const long jj = static_cast<long>(j) + static_cast<long>(v) - pad;
                            if (jj < 0 || jj >= static_cast<long>(wd)) continue;
                            acc += x[(ci * h + ii) * wd + jj] *
                                   w[((co * cin + ci) * k + u) * k + v];
                        }
                    }
                }
                out[(co * h + i) * wd + j] = acc;
            }
        }
    }
    return g.record("conv2d", {x, w}, {cout, h, wd}, std::move(out),
                    [cin, h, wd, cout, k, pad](Graph::Node& nd) {
        const auto& gout = *nd.output.rec().grad;
        const Tensor& xin = nd.inputs[0];
        const Tensor& ker = nd.inputs[1];
        std::vector<double> dx(xin.requires_grad() ? xin.size() : 0, 0.0);
        std::vector<double> dw(ker.requires_grad() ? ker.size() : 0, 0.0);
        for (std::size_t co = 0; co < cout; ++co) {
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < wd; ++j) {
                    const double go = gout[(co * h + i) * wd + j];
                    if (go == 0.0) continue;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        for (std::size_t u = 0; u < k; ++u) {
                            const long ii = static_cast<long>(i) + static_cast<long>(u) - pad;
                            if (ii < 0 || ii >= static_cast<long>(h)) continue;
                            for (std::size_t v = 0; v < k; ++v) {
                                const long jj = static_cast<long>(j) + static_cast<long>(v) - pad;
                                if (jj < 0 || jj >= static_cast<long>(wd)) continue;
                                const std::size_t xi = (ci * h + ii) * wd + jj;
                                const std::size_t wi = ((co * cin + ci) * k + u) * k + v;
                                if (!dx.empty()) dx[xi] += go * ker[wi];
                                if (!dw.empty()) dw[wi] += go * xin[xi];
                            }
                        }
                    }
                }
            }
        }
        if (!dx.empty()) Graph::accumulate(xin, dx);
        if (!dw.empty()) Graph::accumulate(ker, dw);
    });
}

// ---------------------------------------------------------------------------
// layout ops
// ---------------------------------------------------------------------------

// [C×H×W] -> [(H·W)×C]; row r = pixel (r / W, r % W).
inline Tensor chw_to_rows(Graph& g, const Tensor& x) {
    detail::require(x.rank() == 3, "chw_to_rows", "expected rank-3");
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::size_t n = h * w;
    std::vector<double> out(n * c);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < n; ++p) out[p * c + ch] = x[ch * n + p];
    return g.record("chw_to_rows", {x}, {n, c}, std::move(out), [c, n](Graph::Node& nd) {
        if (!nd.inputs[0].requires_grad()) return;
        const auto& gout = *nd.output.rec().grad;
        std::vector<double> d(c * n);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < n; ++p) d[ch * n + p] = gout[p * c + ch];
        Graph::accumulate(nd.inputs[0], d);
    });
}

// [(H·W)×C] -> [C×H×W]; inverse of chw_to_rows.
inline Tensor rows_to_chw(Graph& g, const Tensor& x, std::size_t h, std::size_t w) {
    detail::require(x.rank() == 2, "rows_to_chw", "expected rank-2");
    detail::require(x.extent(0) == h * w, "rows_to_chw", "rows != H*W");
    const std::size_t c = x.extent(1), n = h * w;
    std::vector<double> out(c * n);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) out[ch * n + p] = x[p * c + ch];
    return g.record("rows_to_chw", {x}, {c, h, w}, std::move(out), [c, n](Graph::Node& nd) {
        if (!nd.inputs[0].requires_grad()) return;
        const auto& gout = *nd.output.rec().grad;
        std::vector<double> d(n * c);
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) d[p * c + ch] = gout[ch * n + p];
        Graph::accumulate(nd.inputs[0], d);
    });
}

// Stack [n_i×d] parts vertically.
inline Tensor concat_rows(Graph& g, std::vector<Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty part list");
    const std::size_t d = parts.front().extent(1);
    std::size_t n = 0;
    for (const Tensor& p : parts) {
        detail::require(p.rank() == 2 && p.extent(1) == d, "concat_rows", "column mismatch");
        n += p.extent(0);
    }
    std::vector<double> out;
    out.reserve(n * d);
    for (const Tensor& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return g.record("concat_rows", std::move(parts), {n, d}, std::move(out),
                    [](Graph::Node& nd) {
                        const auto& gout = *nd.output.rec().grad;
                        std::size_t off = 0;
                        for (Tensor& p : nd.inputs) {
                            const std::size_t len = p.size();
                            if (p.requires_grad()) {
                                std::vector<double> d(gout.begin() + off, gout.begin() + off + len);
                                Graph::accumulate(p, d);
                            }
                            off += len;
                        }
                    });
}

// Contiguous row slice [begin, begin+count) of a rank-2 tensor.
inline Tensor row_range(Graph& g, const Tensor& x, std::size_t begin, std::size_t count) {
    detail::require(x.rank() == 2, "row_range", "expected rank-2");
    const std::size_t n = x.extent(0), d = x.extent(1);
    detail::require(begin + count <= n && count > 0, "row_range", "slice out of range");
    std::vector<double> out(x.values().begin() + static_cast<long>(begin * d),
                            x.values().begin() + static_cast<long>((begin + count) * d));
    return g.record("row_range", {x}, {count, d}, std::move(out),
                    [begin, count, d](Graph::Node& nd) {
                        if (!nd.inputs[0].requires_grad()) return;
                        const auto& gout = *nd.output.rec().grad;
                        std::vector<double> dd(nd.inputs[0].size(), 0.0);
                        for (std::size_t i = 0; i < count * d; ++i) dd[begin * d + i] = gout[i];
                        Graph::accumulate(nd.inputs[0], dd);
                    });
}

// Stack [N×c_i] parts side by side.
inline Tensor concat_cols(Graph& g, std::vector<Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty part list");
    const std::size_t n = parts.front().extent(0);
    std::size_t c = 0;
    for (const Tensor& p : parts) {
        detail::require(p.rank() == 2 && p.extent(0) == n, "concat_cols", "row mismatch");
        c += p.extent(1);
    }
    std::vector<double> out(n * c);
    std::size_t col = 0;
    for (const Tensor& p : parts) {
        const std::size_t pc = p.extent(1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < pc; ++j) out[i * c + col + j] = p[i * pc + j];
        col += pc;
    }
    return g.record("concat_cols", std::move(parts), {n, c}, std::move(out),
                    [n, c](Graph::Node& nd) {
                        const auto& gout = *nd.output.rec().grad;
                        std::size_t col = 0;
                        for (Tensor& p : nd.inputs) {
                            const std::size_t pc = p.extent(1);
                            if (p.requires_grad()) {
                                std::vector<double> d(n * pc);
                                for (std::size_t i = 0; i < n; ++i)
                                    for (std::size_t j = 0; j < pc; ++j)
                                        d[i * pc + j] = gout[i * c + col + j];
                                Graph::accumulate(p, d);
                            }
                            col += pc;
                        }
                    });
}

// ---------------------------------------------------------------------------
// classification losses
// ---------------------------------------------------------------------------

inline Tensor log_softmax_rows(Graph& g, const Tensor& x) {
    detail::require(x.rank() == 2, "log_softmax_rows", "expected rank-2");
    const std::size_t n = x.extent(0), c = x.extent(1);
    std::vector<double> out(n * c);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = x[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[i * c + j]);
        double lse = 0.0;
        for (std::size_t j = 0; j < c; ++j) lse += std::exp(x[i * c + j] - mx);
        lse = std::log(lse);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] - mx - lse;
    }
    return g.record("log_softmax_rows", {x}, {n, c}, std::move(out),
                    [n, c](Graph::Node& nd) {
                        if (!nd.inputs[0].requires_grad()) return;
                        const auto& gout = *nd.output.rec().grad;
                        const auto lp = nd.output.values();
                        std::vector<double> d(n * c);
                        for (std::size_t i = 0; i < n; ++i) {
                            double rowsum = 0.0;
                            for (std::size_t j = 0; j < c; ++j) rowsum += gout[i * c + j];
                            for (std::size_t j = 0; j < c; ++j) {
                                d[i * c + j] = gout[i * c + j] - std::exp(lp[i * c + j]) * rowsum;
                            }
                        }
                        Graph::accumulate(nd.inputs[0], d);
                    });
}

// Mean over non-ignored rows of -log softmax(logits)[target].
inline Tensor softmax_cross_entropy(Graph& g, const Tensor& logits,
                                    const std::vector<int>& targets,
                                    std::optional<int> ignore_index = std::nullopt) {
    detail::require(logits.rank() == 2, "softmax_cross_entropy", "logits must be rank-2");
    const std::size_t n = logits.extent(0), c = logits.extent(1);
    detail::require(targets.size() == n, "softmax_cross_entropy", "one target per row");
    std::vector<double> logp(n * c);
    std::size_t live = 0;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int t = targets[i];
        const bool skip = ignore_index && t == *ignore_index;
        if (!skip && (t < 0 || static_cast<std::size_t>(t) >= c)) {
            throw DimensionError("softmax_cross_entropy: target " + std::to_string(t) +
                                 " outside [0," + std::to_string(c) + ")");
        }
        double mx = logits[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits[i * c + j]);
        double lse = 0.0;
        for (std::size_t j = 0; j < c; ++j) lse += std::exp(logits[i * c + j] - mx);
        lse = std::log(lse);
        for (std::size_t j = 0; j < c; ++j) logp[i * c + j] = logits[i * c + j] - mx - lse;
        if (!skip) {
            loss -= logp[i * c + t];
            ++live;
        }
    }
    if (live == 0) throw DegenerateBatchError("softmax_cross_entropy: every row ignored");
    loss /= static_cast<double>(live);
    return g.record("softmax_cross_entropy", {logits}, {}, {loss},
                    [n, c, targets, ignore_index, live, logp = std::move(logp)](Graph::Node& nd) {
                        if (!nd.inputs[0].requires_grad()) return;
                        const double go = (*nd.output.rec().grad)[0];
                        std::vector<double> d(n * c, 0.0);
                        const double inv = go / static_cast<double>(live);
                        for (std::size_t i = 0; i < n; ++i) {
                            const int t = targets[i];
                            if (ignore_index && t == *ignore_index) continue;
                            for (std::size_t j = 0; j < c; ++j) {
                                d[i * c + j] = inv * std::exp(logp[i * c + j]);
                            }
                            d[i * c + t] -= inv;
                        }
                        Graph::accumulate(nd.inputs[0], d);
                    });
}

// ---------------------------------------------------------------------------
// distance ops
// ---------------------------------------------------------------------------

// Euclidean distance between two same-shape tensors; subgradient 0 at f = p.
inline Tensor l2_distance(Graph& g, const Tensor& f, const Tensor& p) {
    detail::require(f.shape() == p.shape(), "l2_distance",
                    shape_str(f.shape()) + " vs " + shape_str(p.shape()));
    double sq = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double d = f[i] - p[i];
        sq += d * d;
    }
    const double r = std::sqrt(sq);
    return g.record("l2_distance", {f, p}, {}, {r}, [r](Graph::Node& nd) {
        const double go = (*nd.output.rec().grad)[0];
        const Tensor& a = nd.inputs[0];
        const Tensor& b = nd.inputs[1];
        std::vector<double> d(a.size(), 0.0);
        if (r != 0.0) {
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = go * (a[i] - b[i]) / r;
        }
        if (a.requires_grad()) Graph::accumulate(a, d);
        if (b.requires_grad()) {
            for (double& v : d) v = -v;
            Graph::accumulate(b, d);
        }
    });
}

// 1 / (x + eps) for a non-negative scalar x; bounded above by 1/eps.
inline Tensor reciprocal_guarded(Graph& g, const Tensor& x, double eps) {
    if (!x.is_scalar()) throw ContractError("reciprocal_guarded: scalar input required");
    if (eps <= 0.0) throw ConfigError("reciprocal_guarded: epsilon must be positive");
    const double denom = x.scalar_value() + eps;
    if (denom <= 0.0) throw ContractError("reciprocal_guarded: non-positive denominator");
    return g.record("reciprocal_guarded", {x}, {}, {1.0 / denom}, [denom](Graph::Node& nd) {
        if (!nd.inputs[0].requires_grad()) return;
        const double go = (*nd.output.rec().grad)[0];
        std::vector<double> d{-go / (denom * denom)};
        Graph::accumulate(nd.inputs[0], d);
    });
}

// ---------------------------------------------------------------------------
// fused row-subset ops (the losses address features by label mask)
// ---------------------------------------------------------------------------

// Mean of the selected rows of F [N×d] -> [d].
inline Tensor mean_rows(Graph& g, const Tensor& f, std::vector<std::size_t> rows) {
    detail::require(f.rank() == 2, "mean_rows", "expected rank-2");
    if (rows.empty()) throw DegenerateBatchError("mean_rows: empty row selection");
    const std::size_t n = f.extent(0), d = f.extent(1);
    for (std::size_t r : rows) detail::require(r < n, "mean_rows", "row index out of range");
    std::vector<double> out(d, 0.0);
    for (std::size_t r : rows)
        for (std::size_t j = 0; j < d; ++j) out[j] += f[r * d + j];
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (double& v : out) v *= inv;
    return g.record("mean_rows", {f}, {d}, std::move(out),
                    [d, inv, rows = std::move(rows)](Graph::Node& nd) {
                        if (!nd.inputs[0].requires_grad()) return;
                        const auto& gout = *nd.output.rec().grad;
                        std::vector<double> dd(nd.inputs[0].size(), 0.0);
                        for (std::size_t r : rows)
                            for (std::size_t j = 0; j < d; ++j) dd[r * d + j] += inv * gout[j];
                        Graph::accumulate(nd.inputs[0], dd);
                    });
}

// Sum over selected rows of ||F_r - p||; subgradient 0 where F_r = p.
inline Tensor sum_row_distances(Graph& g, const Tensor& f, std::vector<std::size_t> rows,
                                const Tensor& p) {
    detail::require(f.rank() == 2, "sum_row_distances", "expected rank-2");
    const std::size_t n = f.extent(0), d = f.extent(1);
    detail::require(p.size() == d, "sum_row_distances", "prototype length mismatch");
    double total = 0.0;
    for (std::size_t r : rows) {
        detail::require(r < n, "sum_row_distances", "row index out of range");
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = f[r * d + j] - p[j];
            sq += diff * diff;
        }
        total += std::sqrt(sq);
    }
    return g.record("sum_row_distances", {f, p}, {}, {total},
                    [d, rows = std::move(rows)](Graph::Node& nd) {
                        const double go = (*nd.output.rec().grad)[0];
                        const Tensor& fin = nd.inputs[0];
                        const Tensor& pin = nd.inputs[1];
                        std::vector<double> df(fin.requires_grad() ? fin.size() : 0, 0.0);
                        std::vector<double> dp(pin.requires_grad() ? pin.size() : 0, 0.0);
                        for (std::size_t r : rows) {
                            double sq = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                                const double diff = fin[r * d + j] - pin[j];
                                sq += diff * diff;
                            }
                            const double dist = std::sqrt(sq);
                            if (dist == 0.0) continue;
                            for (std::size_t j = 0; j < d; ++j) {
                                const double gcomp = go * (fin[r * d + j] - pin[j]) / dist;
                                if (!df.empty()) df[r * d + j] += gcomp;
                                if (!dp.empty()) dp[j] -= gcomp;
                            }
                        }
                        if (!df.empty()) Graph::accumulate(fin, df);
                        if (!dp.empty()) Graph::accumulate(pin, dp);
                    });
}

// Sum over selected rows of 1 / (||F_r - p|| + eps).
inline Tensor sum_row_reciprocal_distances(Graph& g, const Tensor& f,
                                           std::vector<std::size_t> rows, const Tensor& p,
                                           double eps) {
    detail::require(f.rank() == 2, "sum_row_reciprocal_distances", "expected rank-2");
    if (eps <= 0.0) throw ConfigError("sum_row_reciprocal_distances: epsilon must be positive");
    const std::size_t n = f.extent(0), d = f.extent(1);
    detail::require(p.size() == d, "sum_row_reciprocal_distances", "prototype length mismatch");
    double total = 0.0;
    for (std::size_t r : rows) {
        detail::require(r < n, "sum_row_reciprocal_distances", "row index out of range");
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = f[r * d + j] - p[j];
            sq += diff * diff;
        }
        total += 1.0 / (std::sqrt(sq) + eps);
    }
    return g.record("sum_row_reciprocal_distances", {f, p}, {}, {total},
                    [d, eps, rows = std::move(rows)](Graph::Node& nd) {
                        const double go = (*nd.output.rec().grad)[0];
                        const Tensor& fin = nd.inputs[0];
                        const Tensor& pin = nd.inputs[1];
                        std::vector<double> df(fin.requires_grad() ? fin.size() : 0, 0.0);
                        std::vector<double> dp(pin.requires_grad() ? pin.size() : 0, 0.0);
                        for (std::size_t r : rows) {
                            double sq = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                                const double diff = fin[r * d + j] - pin[j];
                                sq += diff * diff;
                            }
                            const double dist = std::sqrt(sq);
                            if (dist == 0.0) continue;
                            const double guard = dist + eps;
                            const double coef = -go / (guard * guard * dist);
                            for (std::size_t j = 0; j < d; ++j) {
                                const double gcomp = coef * (fin[r * d + j] - pin[j]);
                                if (!df.empty()) df[r * d + j] += gcomp;
                                if (!dp.empty()) dp[j] -= gcomp;
                            }
                        }
                        if (!df.empty()) Graph::accumulate(fin, df);
                        if (!dp.empty()) Graph::accumulate(pin, dp);
                    });
}

}  // namespace lsf
