// Copyright 2026 The flownqs Authors
// SPDX-License-Identifier: Apache-2.0

/**
 * @file autodiff.hpp
 * @brief Reverse-mode automatic differentiation over dense f64 tensors.
 *
 * A Tape records primitive operations in execution order; backward() replays
 * them in reverse and accumulates exact gradients. Tensors are row-major and
 * at most rank 2 (scalars are 1x1). Everything is deterministic: identical
 * graphs with identical inputs give bitwise-identical values and gradients.
 */

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flownqs/sparse.hpp"

namespace flownqs::ad {

struct Tensor {
    std::vector<std::size_t> shape;  // {rows} or {rows, cols}
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : shape{rows, cols}, data(rows * cols, fill) {}

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data[0] = v;
        return t;
    }
    static Tensor zeros_like(const Tensor& o) { return Tensor(o.rows(), o.cols()); }

    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const {
        if (shape.size() >= 2) return shape[1];
        return shape.empty() ? 0 : 1;
    }
    std::size_t size() const { return data.size(); }
    bool is_scalar() const { return size() == 1; }
    double item() const {
        if (!is_scalar()) throw std::invalid_argument("Tensor::item: not a scalar");
        return data[0];
    }
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(" << rows() << "x" << cols() << ")";
        return os.str();
    }
};

/// Handle to a node on a Tape.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using CArrMap = Eigen::Map<const Eigen::ArrayXd>;

inline CMatMap mat(const Tensor& t) { return CMatMap(t.data.data(), t.rows(), t.cols()); }
inline MatMap mat(Tensor& t) { return MatMap(t.data.data(), t.rows(), t.cols()); }
inline CArrMap arr(const Tensor& t) { return CArrMap(t.data.data(), t.size()); }
inline ArrMap arr(Tensor& t) { return ArrMap(t.data.data(), t.size()); }

namespace detail {
[[noreturn]] inline void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}
[[noreturn]] inline void shape_error(const char* op, const Tensor& a) {
    throw std::invalid_argument(std::string(op) + ": bad shape " + a.shape_str());
}
}  // namespace detail

class Tape {
    enum class Op {
        kLeaf,
        kConstant,
        kMatMul,
        kAdd,       // same shape, or b is a (1,c) row broadcast over (r,c)
        kSub,
        kMul,
        kDiv,
        kAddScalar,
        kMulScalar,
        kRelu,
        kTanh,
        kExp,
        kLog,
        kAbs,
        kSum,
        kMean,
        kRowSum,      // (r,c) -> (r,1)
        kSegmentSum,  // (g*s,c) -> (g,c), consecutive blocks of s rows
        kExpandRows,  // (g,c) -> (g*s,c), each row repeated s times
        kSliceCols,   // columns [i0, i1)
        kConcatCols,
        kSpmv,  // constant symmetric sparse matrix times (k,1) vector
    };

    struct Node {
        Op op;
        std::size_t a = 0, b = 0;  // input node ids
        double c = 0.0;            // scalar operand
        std::size_t i0 = 0, i1 = 0;
        const SymmetricSparse* sp = nullptr;
        Tensor val;
        bool needs_grad = false;
    };

public:
    Var leaf(Tensor v) { return push({Op::kLeaf, 0, 0, 0.0, 0, 0, nullptr, std::move(v), true}); }
    Var constant(Tensor v) {
        return push({Op::kConstant, 0, 0, 0.0, 0, 0, nullptr, std::move(v), false});
    }
    Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    Var matmul(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.cols() != tb.rows()) detail::shape_error("matmul", ta, tb);
        Tensor out(ta.rows(), tb.cols());
        mat(out).noalias() = mat(ta) * mat(tb);
        return push_binary(Op::kMatMul, a, b, std::move(out));
    }

    Var add(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        Tensor out(ta.rows(), ta.cols());
        if (ta.rows() == tb.rows() && ta.cols() == tb.cols()) {
            arr(out) = arr(ta) + arr(tb);
        } else if (tb.rows() == 1 && tb.cols() == ta.cols()) {
            mat(out) = mat(ta).rowwise() + mat(tb).row(0);
        } else {
            detail::shape_error("add", ta, tb);
        }
        return push_binary(Op::kAdd, a, b, std::move(out));
    }

    Var sub(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rows() != tb.rows() || ta.cols() != tb.cols()) detail::shape_error("sub", ta, tb);
        Tensor out(ta.rows(), ta.cols());
        arr(out) = arr(ta) - arr(tb);
        return push_binary(Op::kSub, a, b, std::move(out));
    }

    Var mul(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rows() != tb.rows() || ta.cols() != tb.cols()) detail::shape_error("mul", ta, tb);
        Tensor out(ta.rows(), ta.cols());
        arr(out) = arr(ta) * arr(tb);
        return push_binary(Op::kMul, a, b, std::move(out));
    }

    Var div(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rows() != tb.rows() || ta.cols() != tb.cols()) detail::shape_error("div", ta, tb);
        Tensor out(ta.rows(), ta.cols());
        arr(out) = arr(ta) / arr(tb);
        return push_binary(Op::kDiv, a, b, std::move(out));
    }

    Var add_scalar(Var a, double c) {
        Tensor out = val(a);
        arr(out) += c;
        Node n{Op::kAddScalar, a.id, 0, c, 0, 0, nullptr, std::move(out), false};
        return push_unary(std::move(n), a);
    }

    Var mul_scalar(Var a, double c) {
        Tensor out = val(a);
        arr(out) *= c;
        Node n{Op::kMulScalar, a.id, 0, c, 0, 0, nullptr, std::move(out), false};
        return push_unary(std::move(n), a);
    }

    Var relu(Var a) {
        Tensor out = val(a);
        arr(out) = arr(out).max(0.0);
        return push_unary({Op::kRelu, a.id, 0, 0, 0, 0, nullptr, std::move(out), false}, a);
    }

    Var tanh(Var a) {
        Tensor out = val(a);
        arr(out) = arr(out).tanh();
        return push_unary({Op::kTanh, a.id, 0, 0, 0, 0, nullptr, std::move(out), false}, a);
    }

    Var exp(Var a) {
        Tensor out = val(a);
        arr(out) = arr(out).exp();
        return push_unary({Op::kExp, a.id, 0, 0, 0, 0, nullptr, std::move(out), false}, a);
    }

    Var log(Var a) {
        const Tensor& ta = val(a);
        for (double x : ta.data) {
            if (!(x > 0.0))
                throw std::invalid_argument("log: nonpositive input " + std::to_string(x));
        }
        Tensor out = ta;
        arr(out) = arr(out).log();
        return push_unary({Op::kLog, a.id, 0, 0, 0, 0, nullptr, std::move(out), false}, a);
    }

    Var abs(Var a) {
        Tensor out = val(a);
        arr(out) = arr(out).abs();
        return push_unary({Op::kAbs, a.id, 0, 0, 0, 0, nullptr, std::move(out), false}, a);
    }

    Var sum(Var a) {
        Tensor out = Tensor::scalar(arr(val(a)).sum());
        return push_unary({Op::kSum, a.id, 0, 0, 0, 0, nullptr, std::move(out), false}, a);
    }

    Var mean(Var a) {
        Tensor out = Tensor::scalar(arr(val(a)).mean());
        return push_unary({Op::kMean, a.id, 0, 0, 0, 0, nullptr, std::move(out), false}, a);
    }

    Var row_sum(Var a) {
        const Tensor& ta = val(a);
        Tensor out(ta.rows(), 1);
        Eigen::Map<Eigen::VectorXd>(out.data.data(), out.rows()) = mat(ta).rowwise().sum();
        return push_unary({Op::kRowSum, a.id, 0, 0, 0, 0, nullptr, std::move(out), false}, a);
    }

    Var segment_sum(Var a, std::size_t group) {
        const Tensor& ta = val(a);
        if (group == 0 || ta.rows() % group != 0) detail::shape_error("segment_sum", ta);
        std::size_t g = ta.rows() / group;
        Tensor out(g, ta.cols());
        for (std::size_t i = 0; i < g; ++i)
            mat(out).row(i) = mat(ta).middleRows(i * group, group).colwise().sum();
        return push_unary({Op::kSegmentSum, a.id, 0, 0, group, 0, nullptr, std::move(out), false},
                          a);
    }

    Var expand_rows(Var a, std::size_t rep) {
        const Tensor& ta = val(a);
        if (rep == 0) detail::shape_error("expand_rows", ta);
        Tensor out(ta.rows() * rep, ta.cols());
        for (std::size_t i = 0; i < ta.rows(); ++i)
            for (std::size_t r = 0; r < rep; ++r) mat(out).row(i * rep + r) = mat(ta).row(i);
        return push_unary({Op::kExpandRows, a.id, 0, 0, rep, 0, nullptr, std::move(out), false}, a);
    }

    Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
        const Tensor& ta = val(a);
        if (c0 >= c1 || c1 > ta.cols()) detail::shape_error("slice_cols", ta);
        Tensor out(ta.rows(), c1 - c0);
        mat(out) = mat(ta).middleCols(c0, c1 - c0);
        return push_unary({Op::kSliceCols, a.id, 0, 0, c0, c1, nullptr, std::move(out), false}, a);
    }

    Var concat_cols(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rows() != tb.rows()) detail::shape_error("concat_cols", ta, tb);
        Tensor out(ta.rows(), ta.cols() + tb.cols());
        mat(out).leftCols(ta.cols()) = mat(ta);
        mat(out).rightCols(tb.cols()) = mat(tb);
        return push_binary(Op::kConcatCols, a, b, std::move(out));
    }

    /// h is held by reference and must outlive the tape.
    Var spmv(const SymmetricSparse& h, Var x) {
        const Tensor& tx = val(x);
        if (tx.cols() != 1 || tx.rows() != h.dim) detail::shape_error("spmv", tx);
        Tensor out(h.dim, 1);
        h.apply(tx.data.data(), out.data.data());
        return push_unary({Op::kSpmv, x.id, 0, 0, 0, 0, &h, std::move(out), false}, x);
    }

    const Tensor& val(Var v) const { return nodes_.at(v.id).val; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a scalar root. Returns one gradient slot per node;
    /// empty slots mean zero (node unreachable from the root or grad-free).
    std::vector<Tensor> backward(Var root) const {
        const Tensor& rv = val(root);
        if (!rv.is_scalar())
            throw std::invalid_argument("backward: root must be scalar, got " + rv.shape_str());
        std::vector<Tensor> grads(nodes_.size());
        grads[root.id] = Tensor::scalar(1.0);
        for (std::size_t idx = root.id + 1; idx-- > 0;) {
            const Node& n = nodes_[idx];
            if (!n.needs_grad || grads[idx].data.empty()) continue;
            step_backward(n, grads[idx], grads);
        }
        return grads;
    }

    /// Gradient of a leaf after backward(); zeros if the leaf was unreachable.
    Tensor grad(const std::vector<Tensor>& grads, Var v) const {
        if (!grads[v.id].data.empty()) return grads[v.id];
        return Tensor::zeros_like(val(v));
    }

private:
    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }
    Var push_unary(Node n, Var a) {
        n.needs_grad = nodes_[a.id].needs_grad;
        return push(std::move(n));
    }
    Var push_binary(Op op, Var a, Var b, Tensor out) {
        Node n{op, a.id, b.id, 0.0, 0, 0, nullptr, std::move(out), false};
        n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
        return push(std::move(n));
    }

    void accumulate(std::vector<Tensor>& grads, std::size_t id, const Tensor& delta) const {
        if (!nodes_[id].needs_grad) return;
        if (grads[id].data.empty()) {
            grads[id] = delta;
        } else {
            arr(grads[id]) += arr(delta);
        }
    }

    void step_backward(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const {
        const Tensor& va = nodes_[n.a].val;
        switch (n.op) {
            case Op::kLeaf:
            case Op::kConstant:
                break;
            case Op::kMatMul: {
                const Tensor& vb = nodes_[n.b].val;
                if (nodes_[n.a].needs_grad) {
                    Tensor da(va.rows(), va.cols());
                    mat(da).noalias() = mat(g) * mat(vb).transpose();
                    accumulate(grads, n.a, da);
                }
                if (nodes_[n.b].needs_grad) {
                    Tensor db(vb.rows(), vb.cols());
                    mat(db).noalias() = mat(va).transpose() * mat(g);
                    accumulate(grads, n.b, db);
                }
                break;
            }
            case Op::kAdd: {
                const Tensor& vb = nodes_[n.b].val;
                accumulate(grads, n.a, g);
                if (nodes_[n.b].needs_grad) {
                    if (vb.rows() == g.rows()) {
                        accumulate(grads, n.b, g);
                    } else {  // row broadcast: reduce over rows
                        Tensor db(1, vb.cols());
                        mat(db).row(0) = mat(g).colwise().sum();
                        accumulate(grads, n.b, db);
                    }
                }
                break;
            }
            case Op::kSub: {
                accumulate(grads, n.a, g);
                if (nodes_[n.b].needs_grad) {
                    Tensor db = g;
                    arr(db) = -arr(db);
                    accumulate(grads, n.b, db);
                }
                break;
            }
            case Op::kMul: {
                const Tensor& vb = nodes_[n.b].val;
                if (nodes_[n.a].needs_grad) {
                    Tensor da = g;
                    arr(da) *= arr(vb);
                    accumulate(grads, n.a, da);
                }
                if (nodes_[n.b].needs_grad) {
                    Tensor db = g;
                    arr(db) *= arr(va);
                    accumulate(grads, n.b, db);
                }
                break;
            }
            case Op::kDiv: {
                const Tensor& vb = nodes_[n.b].val;
                if (nodes_[n.a].needs_grad) {
                    Tensor da = g;
                    arr(da) /= arr(vb);
                    accumulate(grads, n.a, da);
                }
                if (nodes_[n.b].needs_grad) {
                    Tensor db = g;
                    arr(db) = -arr(g) * arr(va) / (arr(vb) * arr(vb));
                    accumulate(grads, n.b, db);
                }
                break;
            }
            case Op::kAddScalar:
                accumulate(grads, n.a, g);
                break;
            case Op::kMulScalar: {
                Tensor da = g;
                arr(da) *= n.c;
                accumulate(grads, n.a, da);
                break;
            }
            case Op::kRelu: {
                Tensor da = g;
                arr(da) *= (arr(va) > 0.0).cast<double>();
                accumulate(grads, n.a, da);
                break;
            }
            case Op::kTanh: {
                Tensor da = g;
                arr(da) *= 1.0 - arr(n.val) * arr(n.val);
                accumulate(grads, n.a, da);
                break;
            }
            case Op::kExp: {
                Tensor da = g;
                arr(da) *= arr(n.val);
                accumulate(grads, n.a, da);
                break;
            }
            case Op::kLog: {
                Tensor da = g;
                arr(da) /= arr(va);
                accumulate(grads, n.a, da);
                break;
            }
            case Op::kAbs: {
                Tensor da = g;
                arr(da) *= arr(va).sign();
                accumulate(grads, n.a, da);
                break;
            }
            case Op::kSum: {
                Tensor da(va.rows(), va.cols(), g.item());
                accumulate(grads, n.a, da);
                break;
            }
            case Op::kMean: {
                Tensor da(va.rows(), va.cols(), g.item() / static_cast<double>(va.size()));
                accumulate(grads, n.a, da);
                break;
            }
            case Op::kRowSum: {
                Tensor da(va.rows(), va.cols());
                for (std::size_t i = 0; i < va.rows(); ++i)
                    mat(da).row(i).setConstant(g.at(i, 0));
                accumulate(grads, n.a, da);
                break;
            }
            case Op::kSegmentSum: {
                Tensor da(va.rows(), va.cols());
                for (std::size_t i = 0; i < va.rows(); ++i)
                    mat(da).row(i) = mat(g).row(i / n.i0);
                accumulate(grads, n.a, da);
                break;
            }
            case Op::kExpandRows: {
                Tensor da(va.rows(), va.cols());
                for (std::size_t i = 0; i < va.rows(); ++i)
                    mat(da).row(i) = mat(g).middleRows(i * n.i0, n.i0).colwise().sum();
                accumulate(grads, n.a, da);
                break;
            }
            case Op::kSliceCols: {
                Tensor da(va.rows(), va.cols());
                mat(da).middleCols(n.i0, n.i1 - n.i0) = mat(g);
                accumulate(grads, n.a, da);
                break;
            }
            case Op::kConcatCols: {
                const Tensor& vb = nodes_[n.b].val;
                if (nodes_[n.a].needs_grad) {
                    Tensor da(va.rows(), va.cols());
                    mat(da) = mat(g).leftCols(va.cols());
                    accumulate(grads, n.a, da);
                }
                if (nodes_[n.b].needs_grad) {
                    Tensor db(vb.rows(), vb.cols());
                    mat(db) = mat(g).rightCols(vb.cols());
                    accumulate(grads, n.b, db);
                }
                break;
            }
            case Op::kSpmv: {
                // Symmetric matrix: gradient is H g.
                Tensor da(va.rows(), 1);
                n.sp->apply(g.data.data(), da.data.data());
                accumulate(grads, n.a, da);
                break;
            }
        }
    }

    std::vector<Node> nodes_;
};

/// Global L2 norm over a gradient collection.
inline double global_norm(const std::vector<Tensor>& grads) {
    double sq = 0.0;
    for (const Tensor& g : grads)
        for (double x : g.data) sq += x * x;
    return std::sqrt(sq);
}

/// Scales all gradients by threshold/norm when the global L2 norm exceeds
/// the threshold; otherwise leaves them untouched.
inline void clip_gradient_norm(std::vector<Tensor>& grads, double threshold) {
    if (!(threshold > 0.0)) throw std::invalid_argument("clip_gradient_norm: threshold must be > 0");
    double norm = global_norm(grads);
    if (norm > threshold) {
        double scale = threshold / norm;
        for (Tensor& g : grads) arr(g) *= scale;
    }
}

struct AdamState {
    std::vector<Tensor> m, v;
    long step = 0;
};

/// One Adam update with bias correction. State is created lazily on the
/// first call and must keep the same parameter shapes afterwards.
inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                      AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: params/grads count mismatch");
    if (state.step == 0 && state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.push_back(Tensor::zeros_like(*p));
            state.v.push_back(Tensor::zeros_like(*p));
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state/params count mismatch");
    state.step += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->size() != grads[i].size())
            detail::shape_error("adam_step", *params[i], grads[i]);
        auto p = arr(*params[i]);
        auto g = arr(grads[i]);
        auto m = arr(state.m[i]);
        auto v = arr(state.v[i]);
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
    }
}

inline void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                      AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
    std::vector<Tensor*> ptrs;
    ptrs.reserve(params.size());
    for (Tensor& p : params) ptrs.push_back(&p);
    adam_step(ptrs, grads, state, lr, beta1, beta2, eps);
}

}  // namespace flownqs::ad
