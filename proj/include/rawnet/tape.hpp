#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "rawnet/error.hpp"
#include "rawnet/tensor.hpp"

namespace rawnet {

struct NodeId {
    uint32_t i = 0;
};

namespace detail {

// C[m,n] += A[m,p] * B[p,n]
template <typename T>
inline void mm_nn(const T* A, const T* B, T* C, size_t m, size_t p, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* a = A + i * p;
        T* c = C + i * n;
        for (size_t q = 0; q < p; ++q) {
            const T av = a[q];
            const T* b = B + q * n;
            for (size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[m,n] += A[m,p] * B^T  where B is stored [n,p]
template <typename T>
inline void mm_nt(const T* A, const T* B, T* C, size_t m, size_t p, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* a = A + i * p;
        for (size_t j = 0; j < n; ++j) {
            const T* b = B + j * p;
            T acc = T(0);
            for (size_t q = 0; q < p; ++q) acc += a[q] * b[q];
            C[i * n + j] += acc;
        }
    }
}

// C[m,n] += A^T * B  where A is stored [p,m] and B is stored [p,n]
template <typename T>
inline void mm_tn(const T* A, const T* B, T* C, size_t m, size_t p, size_t n) {
    for (size_t q = 0; q < p; ++q) {
        const T* a = A + q * m;
        const T* b = B + q * n;
        for (size_t i = 0; i < m; ++i) {
            const T av = a[i];
            T* c = C + i * n;
            for (size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

template <typename T>
inline T stable_sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

} // namespace detail

// Reverse-mode tape. A graph is built forward (parents always have smaller
// ids than children); backward() walks the record in reverse and accumulates
// gradients. One tape per forward pass; a tape instance is single-threaded,
// distinct tapes may live on distinct threads.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf holding a copy of `v`. If `grad_sink` is non-null, backward()
    // additionally accumulates the leaf gradient into it.
    NodeId leaf(const Tensor<T>& v, Tensor<T>* grad_sink = nullptr, bool requires_grad = true) {
        if (grad_sink && grad_sink->shape != v.shape)
            throw ShapeError("gradient sink shape " + shape_str(grad_sink->shape) +
                             " does not match leaf " + shape_str(v.shape));
        check_finite(v, "leaf");
        return push(Tensor<T>(v), requires_grad, grad_sink, nullptr);
    }

    NodeId constant(Tensor<T> v) { return push(std::move(v), false, nullptr, nullptr); }

    const Tensor<T>& value(NodeId n) const { return nodes_[n.i].value; }

    // Accumulated gradient of a node over all backward() calls so far;
    // materialized as zeros on first access.
    const Tensor<T>& grad(NodeId n) {
        Node& nd = nodes_[n.i];
        if (nd.grad.empty()) nd.grad = Tensor<T>::zeros(nd.value.shape);
        return nd.grad;
    }

    bool wants_grad(NodeId n) const { return nodes_[n.i].requires_grad; }
    size_t size() const { return nodes_.size(); }

    // ---- elementwise ----

    NodeId add(NodeId a, NodeId b) { return binary(BinKind::add, a, b); }
    NodeId sub(NodeId a, NodeId b) { return binary(BinKind::sub, a, b); }
    NodeId mul(NodeId a, NodeId b) { return binary(BinKind::mul, a, b); }
    NodeId div(NodeId a, NodeId b) { return binary(BinKind::div, a, b); }

    // Elementwise min of two same-shaped tensors; ties route gradient to `a`.
    NodeId minimum(NodeId a, NodeId b) {
        const Tensor<T>& A = value(a);
        const Tensor<T>& B = value(b);
        if (A.shape != B.shape)
            throw ShapeError("minimum: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
        Tensor<T> out = Tensor<T>::zeros(A.shape);
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = std::min(A.data[i], B.data[i]);
        check_finite(out, "minimum");
        return push(std::move(out), wants_grad(a) || wants_grad(b), nullptr,
                    [a, b](Tape& tp, NodeId self) {
                        const Tensor<T>& g = tp.out_grad(self);
                        const Tensor<T>& A = tp.value(a);
                        const Tensor<T>& B = tp.value(b);
                        const bool wa = tp.wants_grad(a), wb = tp.wants_grad(b);
                        Tensor<T>* da = wa ? &tp.scratch_grad(a) : nullptr;
                        Tensor<T>* db = wb ? &tp.scratch_grad(b) : nullptr;
                        for (size_t i = 0; i < g.numel(); ++i) {
                            if (A.data[i] <= B.data[i]) {
                                if (wa) da->data[i] += g.data[i];
                            } else if (wb) {
                                db->data[i] += g.data[i];
                            }
                        }
                    });
    }

    NodeId sigmoid(NodeId x) {
        return unary(
            x, "sigmoid", [](T v) { return detail::stable_sigmoid(v); },
            [](T /*xv*/, T yv) { return yv * (T(1) - yv); });
    }

    NodeId tanh_(NodeId x) {
        return unary(
            x, "tanh", [](T v) { return std::tanh(v); },
            [](T /*xv*/, T yv) { return T(1) - yv * yv; });
    }

    NodeId leaky_relu(NodeId x, T slope) {
        return unary(
            x, "leaky_relu", [slope](T v) { return v > T(0) ? v : slope * v; },
            [slope](T xv, T /*yv*/) { return xv > T(0) ? T(1) : slope; });
    }

    NodeId log_(NodeId x) {
        const Tensor<T>& X = value(x);
        for (T v : X.data)
            if (!(v > T(0))) throw DomainError("log of non-positive value");
        return unary(
            x, "log", [](T v) { return std::log(v); }, [](T xv, T) { return T(1) / xv; });
    }

    NodeId exp_(NodeId x) {
        return unary(
            x, "exp", [](T v) { return std::exp(v); }, [](T, T yv) { return yv; });
    }

    NodeId abs_(NodeId x) {
        return unary(
            x, "abs", [](T v) { return std::abs(v); },
            [](T xv, T) { return xv > T(0) ? T(1) : (xv < T(0) ? T(-1) : T(0)); });
    }

    NodeId add_scalar(NodeId x, T c) {
        return unary(
            x, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T(1); });
    }

    NodeId mul_scalar(NodeId x, T c) {
        return unary(
            x, "mul_scalar", [c](T v) { return v * c; }, [c](T, T) { return c; });
    }

    // min(x, c); ties route gradient to x.
    NodeId min_scalar(NodeId x, T c) {
        return unary(
            x, "min_scalar", [c](T v) { return std::min(v, c); },
            [c](T xv, T) { return xv <= c ? T(1) : T(0); });
    }

    // ---- linear algebra ----

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor<T>& A = value(a);
        const Tensor<T>& B = value(b);
        if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
            throw ShapeError("matmul: " + shape_str(A.shape) + " x " + shape_str(B.shape));
        const size_t m = A.shape[0], p = A.shape[1], n = B.shape[1];
        Tensor<T> out = Tensor<T>::zeros({m, n});
        detail::mm_nn(A.ptr(), B.ptr(), out.ptr(), m, p, n);
        check_finite(out, "matmul");
        return push(std::move(out), wants_grad(a) || wants_grad(b), nullptr,
                    [a, b, m, p, n](Tape& tp, NodeId self) {
                        const Tensor<T>& g = tp.out_grad(self);
                        if (tp.wants_grad(a))
                            detail::mm_nt(g.ptr(), tp.value(b).ptr(), tp.scratch_grad(a).ptr(), m,
                                          n, p);
                        if (tp.wants_grad(b))
                            detail::mm_tn(tp.value(a).ptr(), g.ptr(), tp.scratch_grad(b).ptr(), p,
                                          m, n);
                    });
    }

    // ---- reductions ----

    NodeId reduce_mean(NodeId x, size_t axis) { return reduce(RedKind::mean, x, axis); }
    NodeId reduce_sum(NodeId x, size_t axis) { return reduce(RedKind::sum, x, axis); }
    // Max along an axis; ties route gradient to the lowest index.
    NodeId reduce_max(NodeId x, size_t axis) { return reduce(RedKind::max, x, axis); }

    NodeId sum_all(NodeId x) {
        const Tensor<T>& X = value(x);
        T acc = T(0);
        for (T v : X.data) acc += v;
        Tensor<T> out = Tensor<T>::scalar(acc);
        check_finite(out, "sum_all");
        return push(std::move(out), wants_grad(x), nullptr, [x](Tape& tp, NodeId self) {
            if (!tp.wants_grad(x)) return;
            const T g = tp.out_grad(self).data[0];
            Tensor<T>& dx = tp.scratch_grad(x);
            for (T& v : dx.data) v += g;
        });
    }

    NodeId reshape(NodeId x, Shape shape) {
        const Tensor<T>& X = value(x);
        if (shape_numel(shape) != X.numel())
            throw ShapeError("reshape " + shape_str(X.shape) + " -> " + shape_str(shape));
        Tensor<T> out;
        out.shape = std::move(shape);
        out.data = X.data;
        return push(std::move(out), wants_grad(x), nullptr, [x](Tape& tp, NodeId self) {
            if (!tp.wants_grad(x)) return;
            const Tensor<T>& g = tp.out_grad(self);
            Tensor<T>& dx = tp.scratch_grad(x);
            for (size_t i = 0; i < g.numel(); ++i) dx.data[i] += g.data[i];
        });
    }

    // x[:, t, :] of a [B,T,F] tensor -> [B,F]
    NodeId slice_time(NodeId x, size_t t) {
        const Tensor<T>& X = value(x);
        if (X.rank() != 3 || t >= X.shape[1])
            throw ShapeError("slice_time t=" + std::to_string(t) + " of " + shape_str(X.shape));
        const size_t B = X.shape[0], Tl = X.shape[1], F = X.shape[2];
        Tensor<T> out = Tensor<T>::zeros({B, F});
        for (size_t b = 0; b < B; ++b)
            for (size_t f = 0; f < F; ++f) out.at2(b, f) = X.at3(b, t, f);
        return push(std::move(out), wants_grad(x), nullptr,
                    [x, t, B, Tl, F](Tape& tp, NodeId self) {
                        (void)Tl;
                        if (!tp.wants_grad(x)) return;
                        const Tensor<T>& g = tp.out_grad(self);
                        Tensor<T>& dx = tp.scratch_grad(x);
                        for (size_t b = 0; b < B; ++b)
                            for (size_t f = 0; f < F; ++f) dx.at3(b, t, f) += g.at2(b, f);
                    });
    }

    // ---- extension point for composite layers ----

    // `back` is invoked during backward with the tape and the node's own id;
    // it reads out_grad(self) and accumulates into scratch_grad(parent).
    NodeId make_node(Tensor<T> value, std::function<void(Tape&, NodeId)> back,
                     bool requires_grad) {
        return push(std::move(value), requires_grad, nullptr, std::move(back));
    }

    // Gradient flowing into `self`; valid only inside a backward pass.
    const Tensor<T>& out_grad(NodeId self) const { return scratch_[self.i]; }

    Tensor<T>& scratch_grad(NodeId parent) {
        Tensor<T>& g = scratch_[parent.i];
        if (g.empty()) g = Tensor<T>::zeros(nodes_[parent.i].value.shape);
        return g;
    }

    // Reverse accumulation from a scalar root. Each call re-traverses the
    // graph and adds its contribution into node gradients and leaf sinks, so
    // repeated calls without reset are additive.
    void backward(NodeId root) {
        if (value(root).numel() != 1)
            throw ContractError("backward root must be scalar, got " +
                                shape_str(value(root).shape));
        scratch_.assign(nodes_.size(), Tensor<T>{});
        scratch_[root.i] = Tensor<T>::scalar(T(1));
        for (size_t i = root.i;; --i) {
            Node& nd = nodes_[i];
            if (!scratch_[i].empty() && nd.requires_grad) {
                if (nd.back) nd.back(*this, NodeId{static_cast<uint32_t>(i)});
                if (nd.grad.empty()) nd.grad = Tensor<T>::zeros(nd.value.shape);
                for (size_t k = 0; k < nd.grad.numel(); ++k)
                    nd.grad.data[k] += scratch_[i].data[k];
                if (nd.grad_sink)
                    for (size_t k = 0; k < nd.grad.numel(); ++k)
                        nd.grad_sink->data[k] += scratch_[i].data[k];
            }
            if (i == 0) break;
        }
        scratch_.clear();
    }

    void reset_grads() {
        for (Node& nd : nodes_) nd.grad = Tensor<T>{};
    }

private:
    enum class BinKind { add, sub, mul, div };
    enum class RedKind { mean, sum, max };

    // Supported right-operand broadcasts, checked in this order:
    //   same   — identical shapes
    //   scalar — b has one element
    //   middle — a is [B,T,F], b is [B,F]; broadcast along the time axis
    //   suffix — b's shape equals a trailing slice of a's shape
    enum class Bcast { same, scalar, middle, suffix };

    struct BcastInfo {
        Bcast kind;
        size_t period = 0;  // suffix: b.numel()
        size_t tf = 0, f = 0; // middle: T*F and F
    };

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        Tensor<T>* grad_sink = nullptr;
        std::function<void(Tape&, NodeId)> back;
    };

    // deque: value/grad references handed out by value()/grad() stay valid
    // while later ops are recorded
    std::deque<Node> nodes_;
    std::vector<Tensor<T>> scratch_;

    NodeId push(Tensor<T> v, bool requires_grad, Tensor<T>* sink,
                std::function<void(Tape&, NodeId)> back) {
        Node nd;
        nd.value = std::move(v);
        nd.requires_grad = requires_grad;
        nd.grad_sink = sink;
        nd.back = std::move(back);
        nodes_.push_back(std::move(nd));
        return NodeId{static_cast<uint32_t>(nodes_.size() - 1)};
    }

    static BcastInfo classify(const Shape& a, const Shape& b) {
        BcastInfo info{};
        if (a == b) {
            info.kind = Bcast::same;
            return info;
        }
        if (shape_numel(b) == 1) {
            info.kind = Bcast::scalar;
            return info;
        }
        if (a.size() == 3 && b.size() == 2 && b[0] == a[0] && b[1] == a[2]) {
            info.kind = Bcast::middle;
            info.tf = a[1] * a[2];
            info.f = a[2];
            return info;
        }
        if (b.size() < a.size() &&
            std::equal(b.begin(), b.end(), a.end() - static_cast<ptrdiff_t>(b.size()))) {
            info.kind = Bcast::suffix;
            info.period = shape_numel(b);
            return info;
        }
        throw ShapeError("incompatible operand shapes " + shape_str(a) + " vs " + shape_str(b));
    }

    static size_t bmap(const BcastInfo& bc, size_t i) {
        switch (bc.kind) {
            case Bcast::same: return i;
            case Bcast::scalar: return 0;
            case Bcast::middle: return (i / bc.tf) * bc.f + i % bc.f;
            case Bcast::suffix: return i % bc.period;
        }
        return 0;
    }

    NodeId binary(BinKind kind, NodeId a, NodeId b) {
        const Tensor<T>& A = value(a);
        const Tensor<T>& B = value(b);
        const BcastInfo bc = classify(A.shape, B.shape);
        if (kind == BinKind::div)
            for (T v : B.data)
                if (v == T(0)) throw DomainError("division by zero");
        Tensor<T> out = Tensor<T>::zeros(A.shape);
        const size_t n = out.numel();
        switch (kind) {
            case BinKind::add:
                for (size_t i = 0; i < n; ++i) out.data[i] = A.data[i] + B.data[bmap(bc, i)];
                break;
            case BinKind::sub:
                for (size_t i = 0; i < n; ++i) out.data[i] = A.data[i] - B.data[bmap(bc, i)];
                break;
            case BinKind::mul:
                for (size_t i = 0; i < n; ++i) out.data[i] = A.data[i] * B.data[bmap(bc, i)];
                break;
            case BinKind::div:
                for (size_t i = 0; i < n; ++i) out.data[i] = A.data[i] / B.data[bmap(bc, i)];
                break;
        }
        check_finite(out, "elementwise");
        return push(std::move(out), wants_grad(a) || wants_grad(b), nullptr,
                    [kind, a, b, bc](Tape& tp, NodeId self) {
                        const Tensor<T>& g = tp.out_grad(self);
                        const Tensor<T>& A = tp.value(a);
                        const Tensor<T>& B = tp.value(b);
                        const size_t n = g.numel();
                        if (tp.wants_grad(a)) {
                            Tensor<T>& da = tp.scratch_grad(a);
                            switch (kind) {
                                case BinKind::add:
                                case BinKind::sub:
                                    for (size_t i = 0; i < n; ++i) da.data[i] += g.data[i];
                                    break;
                                case BinKind::mul:
                                    for (size_t i = 0; i < n; ++i)
                                        da.data[i] += g.data[i] * B.data[bmap(bc, i)];
                                    break;
                                case BinKind::div:
                                    for (size_t i = 0; i < n; ++i)
                                        da.data[i] += g.data[i] / B.data[bmap(bc, i)];
                                    break;
                            }
                        }
                        if (tp.wants_grad(b)) {
                            Tensor<T>& db = tp.scratch_grad(b);
                            switch (kind) {
                                case BinKind::add:
                                    for (size_t i = 0; i < n; ++i)
                                        db.data[bmap(bc, i)] += g.data[i];
                                    break;
                                case BinKind::sub:
                                    for (size_t i = 0; i < n; ++i)
                                        db.data[bmap(bc, i)] -= g.data[i];
                                    break;
                                case BinKind::mul:
                                    for (size_t i = 0; i < n; ++i)
                                        db.data[bmap(bc, i)] += g.data[i] * A.data[i];
                                    break;
                                case BinKind::div:
                                    for (size_t i = 0; i < n; ++i) {
                                        const T bv = B.data[bmap(bc, i)];
                                        db.data[bmap(bc, i)] -= g.data[i] * A.data[i] / (bv * bv);
                                    }
                                    break;
                            }
                        }
                    });
    }

    template <typename Fwd, typename Dfun>
    NodeId unary(NodeId x, const char* name, Fwd f, Dfun df) {
        const Tensor<T>& X = value(x);
        Tensor<T> out = Tensor<T>::zeros(X.shape);
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] = f(X.data[i]);
        check_finite(out, name);
        return push(std::move(out), wants_grad(x), nullptr, [x, df](Tape& tp, NodeId self) {
            if (!tp.wants_grad(x)) return;
            const Tensor<T>& g = tp.out_grad(self);
            const Tensor<T>& X = tp.value(x);
            const Tensor<T>& Y = tp.value(self);
            Tensor<T>& dx = tp.scratch_grad(x);
            for (size_t i = 0; i < g.numel(); ++i)
                dx.data[i] += g.data[i] * df(X.data[i], Y.data[i]);
        });
    }

    NodeId reduce(RedKind kind, NodeId x, size_t axis) {
        const Tensor<T>& X = value(x);
        if (axis >= X.rank()) throw ShapeError("reduce axis out of range");
        size_t outer = 1, inner = 1;
        for (size_t i = 0; i < axis; ++i) outer *= X.shape[i];
        for (size_t i = axis + 1; i < X.rank(); ++i) inner *= X.shape[i];
        const size_t n = X.shape[axis];
        Shape oshape;
        for (size_t i = 0; i < X.rank(); ++i)
            if (i != axis) oshape.push_back(X.shape[i]);
        if (oshape.empty()) oshape = {1};
        Tensor<T> out = Tensor<T>::zeros(oshape);
        std::shared_ptr<std::vector<uint32_t>> argmax;
        if (kind == RedKind::max) argmax = std::make_shared<std::vector<uint32_t>>(out.numel());
        for (size_t o = 0; o < outer; ++o) {
            for (size_t in = 0; in < inner; ++in) {
                const size_t base = o * n * inner + in;
                if (kind == RedKind::max) {
                    T best = X.data[base];
                    uint32_t bj = 0;
                    for (size_t j = 1; j < n; ++j) {
                        const T v = X.data[base + j * inner];
                        if (v > best) {
                            best = v;
                            bj = static_cast<uint32_t>(j);
                        }
                    }
                    out.data[o * inner + in] = best;
                    (*argmax)[o * inner + in] = bj;
                } else {
                    T acc = T(0);
                    for (size_t j = 0; j < n; ++j) acc += X.data[base + j * inner];
                    out.data[o * inner + in] = kind == RedKind::mean ? acc / T(n) : acc;
                }
            }
        }
        check_finite(out, "reduce");
        return push(std::move(out), wants_grad(x), nullptr,
                    [kind, x, outer, inner, n, argmax](Tape& tp, NodeId self) {
                        if (!tp.wants_grad(x)) return;
                        const Tensor<T>& g = tp.out_grad(self);
                        Tensor<T>& dx = tp.scratch_grad(x);
                        for (size_t o = 0; o < outer; ++o) {
                            for (size_t in = 0; in < inner; ++in) {
                                const size_t oi = o * inner + in;
                                const size_t base = o * n * inner + in;
                                switch (kind) {
                                    case RedKind::mean:
                                        for (size_t j = 0; j < n; ++j)
                                            dx.data[base + j * inner] += g.data[oi] / T(n);
                                        break;
                                    case RedKind::sum:
                                        for (size_t j = 0; j < n; ++j)
                                            dx.data[base + j * inner] += g.data[oi];
                                        break;
                                    case RedKind::max:
                                        dx.data[base + (*argmax)[oi] * inner] += g.data[oi];
                                        break;
                                }
                            }
                        }
                    });
    }
};

} // namespace rawnet
