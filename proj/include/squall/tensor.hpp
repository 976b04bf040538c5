// Copyright (c) 2026 The Squall Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense double tensors with tape-based reverse-mode differentiation.
// The graph is rebuilt on every forward pass; tensors already on the tape
// are never mutated in place.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "squall/rng.hpp"

namespace squall {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    Shape shape;
    std::vector<double> v;   // values, row-major
    std::vector<double> g;   // gradient, allocated lazily
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> back;  // pushes grad into parents

    std::vector<double>& grad_buf() {
        if (g.size() != v.size()) g.assign(v.size(), 0.0);
        return g;
    }
};

/// Thread-local switch: with grads disabled no tape is recorded.
inline bool& grad_mode() {
    thread_local bool on = true;
    return on;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : n_(std::move(n)) {}

    static Tensor from(Shape shape, std::vector<double> data,
                       bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) +
                                        " does not match data length " +
                                        std::to_string(data.size()));
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->v = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> d(static_cast<std::size_t>(shape_numel(shape)), 0.0);
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        std::vector<double> d(static_cast<std::size_t>(shape_numel(shape)), value);
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from({}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(n_->v.size()); }
    bool requires_grad() const { return n_->requires_grad; }

    const std::vector<double>& data() const { return n_->v; }
    std::vector<double>& mutable_data() { return n_->v; }
    const std::vector<double>& grad() const { return n_->g; }

    double item() const {
        if (n_->v.size() != 1)
            throw std::invalid_argument("item(): tensor is not scalar, shape " +
                                        shape_str(n_->shape));
        return n_->v[0];
    }

    void zero_grad() { n_->g.assign(n_->v.size(), 0.0); }

    NodePtr node() const { return n_; }

private:
    NodePtr n_;
};

namespace detail {

inline NodePtr make_node(Shape shape, std::size_t n, bool rg) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->v.resize(n);
    node->requires_grad = rg && grad_mode();
    return node;
}

inline bool track(std::initializer_list<Tensor> parents) {
    if (!grad_mode()) return false;
    for (const auto& p : parents)
        if (p.node()->requires_grad) return true;
    return false;
}

inline void attach(const NodePtr& node, std::initializer_list<Tensor> parents,
                   std::function<void(TensorNode&)> back) {
    if (!node->requires_grad) return;
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->back = std::move(back);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// broadcasting helpers
// ---------------------------------------------------------------------------

namespace detail {

// Align shapes from trailing dims; missing or 1-sized dims broadcast.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument(std::string(op) + ": shapes " +
                                        shape_str(a) + " and " + shape_str(b) +
                                        " are not broadcastable");
        out[r - 1 - i] = std::max(da, db);
    }
    return out;
}

inline std::vector<std::int64_t> broadcast_strides(const Shape& s,
                                                   const Shape& out) {
    const std::size_t r = out.size();
    std::vector<std::int64_t> st(r, 0);
    std::int64_t stride = 1;
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t oi = r - 1 - i;
        std::int64_t d = i < s.size() ? s[s.size() - 1 - i] : 1;
        st[oi] = (d == 1) ? 0 : stride;
        stride *= d;
    }
    return st;
}

template <class F>
inline void broadcast_loop(const Shape& out, const std::vector<std::int64_t>& sa,
                           const std::vector<std::int64_t>& sb, F&& f) {
    const std::size_t r = out.size();
    std::int64_t n = shape_numel(out);
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t lin = 0; lin < n; ++lin) {
        f(lin, ia, ib);
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < out[d]) {
                ia += sa[d];
                ib += sb[d];
                break;
            }
            idx[d] = 0;
            ia -= sa[d] * (out[d] - 1);
            ib -= sb[d] * (out[d] - 1);
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops
// ---------------------------------------------------------------------------

namespace detail {

// fwd(a,b) -> value; da(a,b,gy) and db(a,b,gy) -> parent grad contributions
template <class Fwd, class Da, class Db>
inline Tensor binary_op(const char* name, const Tensor& a, const Tensor& b,
                        Fwd fwd, Da da, Db db) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    Shape out = broadcast_shape(sa, sb, name);
    const bool rg = track({a, b});
    auto node = make_node(out, static_cast<std::size_t>(shape_numel(out)), rg);

    if (sa == sb) {  // fast path, no stride walk
        const auto& av = a.data();
        const auto& bv = b.data();
        for (std::size_t i = 0; i < av.size(); ++i)
            node->v[i] = fwd(av[i], bv[i]);
        attach(node, {a, b}, [fwd, da, db](TensorNode& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                auto& ga = pa.grad_buf();
                for (std::size_t i = 0; i < ga.size(); ++i)
                    ga[i] += da(pa.v[i], pb.v[i], self.g[i]);
            }
            if (pb.requires_grad) {
                auto& gb = pb.grad_buf();
                for (std::size_t i = 0; i < gb.size(); ++i)
                    gb[i] += db(pa.v[i], pb.v[i], self.g[i]);
            }
        });
        (void)da; (void)db;
        return Tensor(node);
    }

    auto sta = broadcast_strides(sa, out);
    auto stb = broadcast_strides(sb, out);
    const auto& av = a.data();
    const auto& bv = b.data();
    broadcast_loop(out, sta, stb,
                   [&](std::int64_t lin, std::int64_t ia, std::int64_t ib) {
                       node->v[static_cast<std::size_t>(lin)] = fwd(av[ia], bv[ib]);
                   });
    attach(node, {a, b}, [fwd, da, db, out, sta, stb](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const bool na = pa.requires_grad;
        const bool nb = pb.requires_grad;
        if (na) pa.grad_buf();
        if (nb) pb.grad_buf();
        broadcast_loop(out, sta, stb,
                       [&](std::int64_t lin, std::int64_t ia, std::int64_t ib) {
                           double gy = self.g[static_cast<std::size_t>(lin)];
                           if (na) pa.g[ia] += da(pa.v[ia], pb.v[ib], gy);
                           if (nb) pb.g[ib] += db(pa.v[ia], pb.v[ib], gy);
                       });
    });
    return Tensor(node);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g) { return g; },
        [](double, double, double g) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g) { return g; },
        [](double, double, double g) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double g) { return g * y; },
        [](double x, double, double g) { return g * x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double g) { return g / y; },
        [](double x, double y, double g) { return -g * x / (y * y); });
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

template <class Fwd, class Dx>
inline Tensor unary_op(const Tensor& a, Fwd fwd, Dx dx) {
    const bool rg = track({a});
    auto node = make_node(a.shape(), a.data().size(), rg);
    const auto& av = a.data();
    for (std::size_t i = 0; i < av.size(); ++i) node->v[i] = fwd(av[i]);
    attach(node, {a}, [fwd, dx](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gp = p.grad_buf();
        for (std::size_t i = 0; i < gp.size(); ++i)
            gp[i] += dx(p.v[i], self.v[i], self.g[i]);
    });
    return Tensor(node);
}

}  // namespace detail

inline Tensor neg(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return -x; },
        [](double, double, double g) { return -g; });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::exp(x); },
        [](double, double y, double g) { return g * y; });
}

inline Tensor log(const Tensor& a) {
    for (double x : a.data())
        if (x <= 0.0)
            throw std::domain_error("log: nonpositive input " + std::to_string(x));
    return detail::unary_op(
        a, [](double x) { return std::log(x); },
        [](double x, double, double g) { return g / x; });
}

inline Tensor sqrt(const Tensor& a) {
    for (double x : a.data())
        if (x < 0.0)
            throw std::domain_error("sqrt: negative input " + std::to_string(x));
    return detail::unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y, double g) { return y > 0 ? g * 0.5 / y : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a,
        [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                     : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y, double g) { return g * y * (1.0 - y); });
}

inline Tensor softplus(const Tensor& a) {
    return detail::unary_op(
        a,
        [](double x) { return x > 30 ? x : std::log1p(std::exp(x)); },
        [](double x, double, double g) {
            double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                              : std::exp(x) / (1.0 + std::exp(x));
            return g * s;
        });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::tanh(x); },
        [](double, double y, double g) { return g * (1.0 - y * y); });
}

/// x * sigmoid(x); the activation used by the denoiser conv blocks.
inline Tensor silu(const Tensor& a) {
    return detail::unary_op(
        a,
        [](double x) {
            double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                              : std::exp(x) / (1.0 + std::exp(x));
            return x * s;
        },
        [](double x, double, double g) {
            double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                              : std::exp(x) / (1.0 + std::exp(x));
            return g * (s + x * s * (1.0 - s));
        });
}

/// Clamp with zero gradient outside [lo, hi].
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    return detail::unary_op(
        a,
        [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
        [lo, hi](double x, double, double g) {
            return (x < lo || x > hi) ? 0.0 : g;
        });
}

// scalar convenience
inline Tensor add_scalar(const Tensor& a, double c) {
    return detail::unary_op(
        a, [c](double x) { return x + c; },
        [](double, double, double g) { return g; });
}
inline Tensor mul_scalar(const Tensor& a, double c) {
    return detail::unary_op(
        a, [c](double x) { return x * c; },
        [c](double, double, double g) { return g * c; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator-(double c, const Tensor& a) { return add_scalar(neg(a), c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator/(const Tensor& a, double c) { return mul_scalar(a, 1.0 / c); }
inline Tensor operator/(double c, const Tensor& a) {
    return detail::unary_op(
        a, [c](double x) { return c / x; },
        [c](double x, double, double g) { return -g * c / (x * x); });
}
inline Tensor operator-(const Tensor& a) { return neg(a); }

/// Identity with the tape cut: gradients do not flow into `a`.
inline Tensor detach(const Tensor& a) {
    return Tensor::from(a.shape(), a.data(), false);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    const bool rg = detail::track({a});
    auto node = detail::make_node({}, 1, rg);
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    node->v[0] = acc;
    detail::attach(node, {a}, [](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gp = p.grad_buf();
        for (auto& g : gp) g += self.g[0];
    });
    return Tensor(node);
}

inline Tensor mean(const Tensor& a) {
    return sum(a) * (1.0 / static_cast<double>(a.numel()));
}

inline Tensor logsumexp(const Tensor& a) {
    const bool rg = detail::track({a});
    auto node = detail::make_node({}, 1, rg);
    const auto& av = a.data();
    double m = *std::max_element(av.begin(), av.end());
    double acc = 0.0;
    for (double x : av) acc += std::exp(x - m);
    node->v[0] = m + std::log(acc);
    detail::attach(node, {a}, [](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gp = p.grad_buf();
        const double lse = self.v[0];
        for (std::size_t i = 0; i < gp.size(); ++i)
            gp[i] += self.g[0] * std::exp(p.v[i] - lse);
    });
    return Tensor(node);
}

/// Row sums of a 2-D tensor: (R,C) -> (R) for axis=1, (C) for axis=0.
inline Tensor sum_axis(const Tensor& a, int axis) {
    if (a.shape().size() != 2) throw std::invalid_argument("sum_axis: need 2-D");
    const std::int64_t R = a.shape()[0], C = a.shape()[1];
    const bool rg = detail::track({a});
    const std::int64_t n = axis == 1 ? R : C;
    auto node = detail::make_node({n}, static_cast<std::size_t>(n), rg);
    const auto& av = a.data();
    std::fill(node->v.begin(), node->v.end(), 0.0);
    for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t c = 0; c < C; ++c)
            node->v[static_cast<std::size_t>(axis == 1 ? r : c)] +=
                av[static_cast<std::size_t>(r * C + c)];
    detail::attach(node, {a}, [R, C, axis](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gp = p.grad_buf();
        for (std::int64_t r = 0; r < R; ++r)
            for (std::int64_t c = 0; c < C; ++c)
                gp[static_cast<std::size_t>(r * C + c)] +=
                    self.g[static_cast<std::size_t>(axis == 1 ? r : c)];
    });
    return Tensor(node);
}

inline Tensor mean_axis(const Tensor& a, int axis) {
    const double n = static_cast<double>(a.shape()[axis == 1 ? 1 : 0]);
    return sum_axis(a, axis) * (1.0 / n);
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw std::invalid_argument("matmul: need 2-D operands, got " +
                                    shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    const std::int64_t M = a.shape()[0], K = a.shape()[1];
    const std::int64_t K2 = b.shape()[0], N = b.shape()[1];
    if (K != K2)
        throw std::invalid_argument("matmul: inner dims differ, " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    const bool rg = detail::track({a, b});
    auto node = detail::make_node({M, N}, static_cast<std::size_t>(M * N), rg);
    const double* av = a.data().data();
    const double* bv = b.data().data();
    double* ov = node->v.data();
    std::fill(node->v.begin(), node->v.end(), 0.0);
    for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t k = 0; k < K; ++k) {
            const double aik = av[i * K + k];
            const double* brow = bv + k * N;
            double* orow = ov + i * N;
            for (std::int64_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
        }
    detail::attach(node, {a, b}, [M, K, N](TensorNode& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const double* gy = self.g.data();
        if (pa.requires_grad) {  // dA = G * B^T
            double* ga = pa.grad_buf().data();
            const double* bv = pb.v.data();
            for (std::int64_t i = 0; i < M; ++i)
                for (std::int64_t k = 0; k < K; ++k) {
                    const double* grow = gy + i * N;
                    const double* brow = bv + k * N;
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
                    ga[i * K + k] += acc;
                }
        }
        if (pb.requires_grad) {  // dB = A^T * G
            double* gb = pb.grad_buf().data();
            const double* av = pa.v.data();
            for (std::int64_t i = 0; i < M; ++i)
                for (std::int64_t k = 0; k < K; ++k) {
                    const double aik = av[i * K + k];
                    const double* grow = gy + i * N;
                    double* gbrow = gb + k * N;
                    for (std::int64_t j = 0; j < N; ++j) gbrow[j] += aik * grow[j];
                }
        }
    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " +
                                    shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    const bool rg = detail::track({a});
    auto node = detail::make_node(std::move(shape), a.data().size(), rg);
    node->v = a.data();
    detail::attach(node, {a}, [](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gp = p.grad_buf();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.g[i];
    });
    return Tensor(node);
}

inline Tensor transpose2d(const Tensor& a) {
    if (a.shape().size() != 2) throw std::invalid_argument("transpose2d: need 2-D");
    const std::int64_t R = a.shape()[0], C = a.shape()[1];
    const bool rg = detail::track({a});
    auto node = detail::make_node({C, R}, a.data().size(), rg);
    const auto& av = a.data();
    for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t c = 0; c < C; ++c)
            node->v[static_cast<std::size_t>(c * R + r)] =
                av[static_cast<std::size_t>(r * C + c)];
    detail::attach(node, {a}, [R, C](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gp = p.grad_buf();
        for (std::int64_t r = 0; r < R; ++r)
            for (std::int64_t c = 0; c < C; ++c)
                gp[static_cast<std::size_t>(r * C + c)] +=
                    self.g[static_cast<std::size_t>(c * R + r)];
    });
    return Tensor(node);
}

/// Slice along one axis: indices [start, start+len).
inline Tensor slice(const Tensor& a, int axis, std::int64_t start,
                    std::int64_t len) {
    const Shape& s = a.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw std::invalid_argument("slice: bad axis");
    if (start < 0 || start + len > s[axis])
        throw std::invalid_argument("slice: range out of bounds");
    Shape out = s;
    out[axis] = len;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const bool rg = detail::track({a});
    auto node = detail::make_node(out, static_cast<std::size_t>(outer * len * inner), rg);
    const auto& av = a.data();
    const std::int64_t D = s[axis];
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy(av.begin() + (o * D + start) * inner,
                  av.begin() + (o * D + start + len) * inner,
                  node->v.begin() + o * len * inner);
    detail::attach(node, {a}, [outer, inner, D, start, len](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gp = p.grad_buf();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < len * inner; ++i)
                gp[static_cast<std::size_t>((o * D + start) * inner + i)] +=
                    self.g[static_cast<std::size_t>(o * len * inner + i)];
    });
    return Tensor(node);
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    Shape out = s0;
    std::int64_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size())
            throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (static_cast<int>(i) != axis && s[i] != s0[i])
                throw std::invalid_argument("concat: shape mismatch " +
                                            shape_str(s) + " vs " + shape_str(s0));
        total += s[axis];
    }
    out[axis] = total;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

    bool rg = false;
    if (grad_mode())
        for (const auto& p : parts)
            if (p.node()->requires_grad) rg = true;
    auto node = detail::make_node(out, static_cast<std::size_t>(shape_numel(out)), rg);

    std::vector<std::int64_t> lens;
    lens.reserve(parts.size());
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t d = p.shape()[axis];
        const auto& pv = p.data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(pv.begin() + o * d * inner, pv.begin() + (o + 1) * d * inner,
                      node->v.begin() + (o * total + off) * inner);
        lens.push_back(d);
        off += d;
    }
    if (node->requires_grad) {
        for (const auto& p : parts) node->parents.push_back(p.node());
        node->back = [outer, inner, total, lens](TensorNode& self) {
            std::int64_t off = 0;
            for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                auto& p = *self.parents[pi];
                const std::int64_t d = lens[pi];
                if (p.requires_grad) {
                    auto& gp = p.grad_buf();
                    for (std::int64_t o = 0; o < outer; ++o)
                        for (std::int64_t i = 0; i < d * inner; ++i)
                            gp[static_cast<std::size_t>(o * d * inner + i)] +=
                                self.g[static_cast<std::size_t>(
                                    (o * total + off) * inner + i)];
                }
                off += d;
            }
        };
    }
    return Tensor(node);
}

/// Gather rows of a (J,C) matrix: out[i] = a[idx[i]].
inline Tensor index_select_rows(const Tensor& a,
                                const std::vector<std::int64_t>& idx) {
    if (a.shape().size() != 2)
        throw std::invalid_argument("index_select_rows: need 2-D");
    const std::int64_t C = a.shape()[1];
    const std::int64_t R = static_cast<std::int64_t>(idx.size());
    const bool rg = detail::track({a});
    auto node = detail::make_node({R, C}, static_cast<std::size_t>(R * C), rg);
    const auto& av = a.data();
    for (std::int64_t i = 0; i < R; ++i)
        std::copy(av.begin() + idx[i] * C, av.begin() + (idx[i] + 1) * C,
                  node->v.begin() + i * C);
    detail::attach(node, {a}, [idx, C, R](TensorNode& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& gp = p.grad_buf();
        for (std::int64_t i = 0; i < R; ++i)
            for (std::int64_t c = 0; c < C; ++c)
                gp[static_cast<std::size_t>(idx[i] * C + c)] +=
                    self.g[static_cast<std::size_t>(i * C + c)];
    });
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls until zero_grad().
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, shape " +
                                    shape_str(loss.shape()));
    if (!loss.node()->requires_grad) return;

    // iterative topological order (post-order DFS)
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second)
                stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad_buf()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->back && !n->g.empty()) n->back(*n);
    }
}

// ---------------------------------------------------------------------------
// finite differences (testing oracle)
// ---------------------------------------------------------------------------

/// Central differences of a scalar function at x; the independent gradient
/// oracle used throughout the test suites.
inline std::vector<double> finite_diff(
    const std::function<double(const Tensor&)>& f, const Tensor& x,
    double h = 1e-5) {
    if (h <= 0) throw std::invalid_argument("finite_diff: h must be positive");
    std::vector<double> g(x.data().size());
    std::vector<double> base = x.data();
    for (std::size_t i = 0; i < base.size(); ++i) {
        std::vector<double> hi = base, lo = base;
        hi[i] += h;
        lo[i] -= h;
        double fp = f(Tensor::from(x.shape(), hi));
        double fm = f(Tensor::from(x.shape(), lo));
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// ---------------------------------------------------------------------------
// initialization helpers
// ---------------------------------------------------------------------------

inline Tensor uniform_init(Shape shape, double lo, double hi, Rng& rng,
                           bool requires_grad = true) {
    std::vector<double> d(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : d) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(d), requires_grad);
}

inline Tensor normal_init(Shape shape, double stddev, Rng& rng,
                          bool requires_grad = false) {
    std::vector<double> d(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : d) x = stddev * rng.normal();
    return Tensor::from(std::move(shape), std::move(d), requires_grad);
}

}  // namespace squall
