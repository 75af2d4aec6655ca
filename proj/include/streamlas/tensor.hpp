#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "streamlas/common.hpp"
#include "streamlas/prng.hpp"

// Dense tensors with reverse-mode automatic differentiation. Ops evaluate
// eagerly and record a backward closure; backward() walks the graph in
// reverse topological order and accumulates gradients additively into every
// reachable leaf. Supported ranks are vectors [n], matrices [m,n] and
// scalars [1]; the only broadcasting is a row vector against the leading
// dimension of a matrix.

namespace streamlas {

class Node;
using Var = std::shared_ptr<Node>;
using ParamList = std::vector<std::pair<std::string, Var>>;

class Node {
public:
    std::vector<int> shape;
    std::vector<real> value;
    std::vector<real> grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void()> backward_fn;

    explicit Node(std::vector<int> shp) : shape(std::move(shp)) {
        value.assign(numel_of(shape), real(0));
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ShapeError("tensor: nonpositive dimension in " + shape_str(s));
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    size_t numel() const { return value.size(); }
    int rows() const { return shape.size() == 2 ? shape[0] : 1; }
    int cols() const { return shape.size() == 2 ? shape[1] : shape[0]; }

    real scalar() const {
        if (numel() != 1) throw ShapeError("scalar(): tensor has shape " + shape_str(shape));
        return value[0];
    }

    void ensure_grad() {
        if (grad.empty()) grad.assign(numel(), real(0));
    }

    void zero_grad() { grad.assign(numel(), real(0)); }
};

// ---------------------------------------------------------------------------
// graph mode

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

// RAII guard that disables graph recording (used by decoders).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

// ---------------------------------------------------------------------------
// construction

inline Var make_tensor(std::vector<int> shape, std::vector<real> data, bool requires_grad = false) {
    auto n = std::make_shared<Node>(std::move(shape));
    if (!data.empty()) {
        if (data.size() != n->numel())
            throw ShapeError("make_tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(n->shape));
        n->value = std::move(data);
    }
    n->requires_grad = requires_grad;
    return n;
}

inline Var zeros(std::vector<int> shape, bool requires_grad = false) {
    return make_tensor(std::move(shape), {}, requires_grad);
}

inline Var scalar_tensor(real v) { return make_tensor({1}, {v}); }

// Parameter initialization: uniform(-scale, scale) entries.
inline Var make_param(std::vector<int> shape, Rng& rng, real scale = real(0.05)) {
    auto n = std::make_shared<Node>(std::move(shape));
    for (auto& v : n->value) v = static_cast<real>(rng.uniform(-scale, scale));
    n->requires_grad = true;
    return n;
}

// Value access for a built expression; the graph stays alive for backward().
inline const std::vector<real>& evaluate(const Var& v) { return v->value; }

namespace detail {

inline bool same_shape(const Var& a, const Var& b) { return a->shape == b->shape; }

// b broadcasts against a when a is [m,n] and b is [n] (leading dimension).
inline bool row_broadcast(const Var& a, const Var& b) {
    return a->shape.size() == 2 && b->shape.size() == 1 && a->shape[1] == b->shape[0];
}

inline void check_binary(const char* op, const Var& a, const Var& b) {
    if (!same_shape(a, b) && !row_broadcast(a, b))
        throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a->shape) +
                         " vs " + shape_str(b->shape));
}

// Attach a backward closure when grad tracking is on for any parent.
inline void attach(const Var& out, std::initializer_list<Var> parents, std::function<void()> fn) {
    if (!grad_mode()) return;
    bool track = false;
    for (const auto& p : parents)
        if (p && p->requires_grad) track = true;
    if (!track) return;
    out->requires_grad = true;
    out->parents.assign(parents.begin(), parents.end());
    out->backward_fn = std::move(fn);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
    detail::check_binary("add", a, b);
    auto out = std::make_shared<Node>(a->shape);
    if (detail::same_shape(a, b)) {
        for (size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] + b->value[i];
    } else {
        int m = a->shape[0], n = a->shape[1];
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < n; ++c) out->value[r * n + c] = a->value[r * n + c] + b->value[c];
    }
    Node* o = out.get();
    detail::attach(out, {a, b}, [a, b, o]() {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) a->grad[i] += o->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            if (detail::same_shape(a, b)) {
                for (size_t i = 0; i < o->numel(); ++i) b->grad[i] += o->grad[i];
            } else {
                int m = a->shape[0], n = a->shape[1];
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c) b->grad[c] += o->grad[r * n + c];
            }
        }
    });
    return out;
}

inline Var sub(const Var& a, const Var& b) {
    detail::check_binary("sub", a, b);
    auto out = std::make_shared<Node>(a->shape);
    if (detail::same_shape(a, b)) {
        for (size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] - b->value[i];
    } else {
        int m = a->shape[0], n = a->shape[1];
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < n; ++c) out->value[r * n + c] = a->value[r * n + c] - b->value[c];
    }
    Node* o = out.get();
    detail::attach(out, {a, b}, [a, b, o]() {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) a->grad[i] += o->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            if (detail::same_shape(a, b)) {
                for (size_t i = 0; i < o->numel(); ++i) b->grad[i] -= o->grad[i];
            } else {
                int m = a->shape[0], n = a->shape[1];
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c) b->grad[c] -= o->grad[r * n + c];
            }
        }
    });
    return out;
}

inline Var mul(const Var& a, const Var& b) {
    detail::check_binary("mul", a, b);
    auto out = std::make_shared<Node>(a->shape);
    const bool bc = !detail::same_shape(a, b);
    if (!bc) {
        for (size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] * b->value[i];
    } else {
        int m = a->shape[0], n = a->shape[1];
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < n; ++c) out->value[r * n + c] = a->value[r * n + c] * b->value[c];
    }
    Node* o = out.get();
    detail::attach(out, {a, b}, [a, b, o, bc]() {
        if (!bc) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < o->numel(); ++i) a->grad[i] += o->grad[i] * b->value[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < o->numel(); ++i) b->grad[i] += o->grad[i] * a->value[i];
            }
        } else {
            int m = a->shape[0], n = a->shape[1];
            if (a->requires_grad) {
                a->ensure_grad();
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c) a->grad[r * n + c] += o->grad[r * n + c] * b->value[c];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < n; ++c) b->grad[c] += o->grad[r * n + c] * a->value[r * n + c];
            }
        }
    });
    return out;
}

inline Var div(const Var& a, const Var& b) {
    if (!detail::same_shape(a, b))
        throw ShapeError("div: incompatible shapes " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    auto out = std::make_shared<Node>(a->shape);
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] / b->value[i];
    Node* o = out.get();
    detail::attach(out, {a, b}, [a, b, o]() {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) a->grad[i] += o->grad[i] / b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i)
                b->grad[i] -= o->grad[i] * a->value[i] / (b->value[i] * b->value[i]);
        }
    });
    return out;
}

// Elementwise max of two same-shape tensors; ties route the gradient to a.
inline Var vmax(const Var& a, const Var& b) {
    if (!detail::same_shape(a, b))
        throw ShapeError("max: incompatible shapes " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    auto out = std::make_shared<Node>(a->shape);
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = std::max(a->value[i], b->value[i]);
    Node* o = out.get();
    detail::attach(out, {a, b}, [a, b, o]() {
        for (size_t i = 0; i < o->numel(); ++i) {
            if (a->value[i] >= b->value[i]) {
                if (a->requires_grad) {
                    a->ensure_grad();
                    a->grad[i] += o->grad[i];
                }
            } else if (b->requires_grad) {
                b->ensure_grad();
                b->grad[i] += o->grad[i];
            }
        }
    });
    return out;
}

inline Var smul(const Var& a, real c) {
    auto out = std::make_shared<Node>(a->shape);
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] * c;
    Node* o = out.get();
    detail::attach(out, {a}, [a, o, c]() {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < o->numel(); ++i) a->grad[i] += o->grad[i] * c;
    });
    return out;
}

inline Var sadd(const Var& a, real c) {
    auto out = std::make_shared<Node>(a->shape);
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] + c;
    Node* o = out.get();
    detail::attach(out, {a}, [a, o]() {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < o->numel(); ++i) a->grad[i] += o->grad[i];
    });
    return out;
}

inline Var neg(const Var& a) { return smul(a, real(-1)); }

// Multiply a vector (or any tensor) by a scalar Var.
inline Var vscale(const Var& a, const Var& s) {
    if (s->numel() != 1) throw ShapeError("vscale: scale has shape " + shape_str(s->shape));
    auto out = std::make_shared<Node>(a->shape);
    real sv = s->value[0];
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] * sv;
    Node* o = out.get();
    detail::attach(out, {a, s}, [a, s, o]() {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) a->grad[i] += o->grad[i] * s->value[0];
        }
        if (s->requires_grad) {
            s->ensure_grad();
            real acc = 0;
            for (size_t i = 0; i < o->numel(); ++i) acc += o->grad[i] * a->value[i];
            s->grad[0] += acc;
        }
    });
    return out;
}

// Add a scalar Var to every element.
inline Var vshift(const Var& a, const Var& s) {
    if (s->numel() != 1) throw ShapeError("vshift: shift has shape " + shape_str(s->shape));
    auto out = std::make_shared<Node>(a->shape);
    real sv = s->value[0];
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] + sv;
    Node* o = out.get();
    detail::attach(out, {a, s}, [a, s, o]() {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < o->numel(); ++i) a->grad[i] += o->grad[i];
        }
        if (s->requires_grad) {
            s->ensure_grad();
            real acc = 0;
            for (size_t i = 0; i < o->numel(); ++i) acc += o->grad[i];
            s->grad[0] += acc;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// nonlinearities

namespace detail {

template <typename FwdFn, typename BwdFn>
Var unary(const char* /*name*/, const Var& a, FwdFn fwd, BwdFn bwd_from_out) {
    auto out = std::make_shared<Node>(a->shape);
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = fwd(a->value[i]);
    Node* o = out.get();
    attach(out, {a}, [a, o, bwd_from_out]() {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < o->numel(); ++i)
            a->grad[i] += o->grad[i] * bwd_from_out(a->value[i], o->value[i]);
    });
    return out;
}

}  // namespace detail

inline Var vtanh(const Var& a) {
    return detail::unary("tanh", a, [](real x) { return std::tanh(x); },
                         [](real, real y) { return real(1) - y * y; });
}

inline Var sigmoid(const Var& a) {
    return detail::unary(
        "sigmoid", a,
        [](real x) {
            return x >= 0 ? real(1) / (real(1) + std::exp(-x))
                          : std::exp(x) / (real(1) + std::exp(x));
        },
        [](real, real y) { return y * (real(1) - y); });
}

inline Var relu(const Var& a) {
    return detail::unary("relu", a, [](real x) { return x > 0 ? x : real(0); },
                         [](real x, real) { return x > 0 ? real(1) : real(0); });
}

inline Var vexp(const Var& a) {
    return detail::unary("exp", a, [](real x) { return std::exp(x); },
                         [](real, real y) { return y; });
}

inline Var vlog(const Var& a) {
    return detail::unary("log", a, [](real x) { return std::log(x); },
                         [](real x, real) { return real(1) / x; });
}

inline Var vsqrt(const Var& a) {
    return detail::unary("sqrt", a, [](real x) { return std::sqrt(x); },
                         [](real, real y) { return real(0.5) / y; });
}

// Clamp to [lo, hi]; gradient passes through strictly inside the interval.
inline Var clip(const Var& a, real lo, real hi) {
    auto out = std::make_shared<Node>(a->shape);
    for (size_t i = 0; i < out->numel(); ++i) out->value[i] = std::clamp(a->value[i], lo, hi);
    Node* o = out.get();
    detail::attach(out, {a}, [a, o, lo, hi]() {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < o->numel(); ++i)
            if (a->value[i] > lo && a->value[i] < hi) a->grad[i] += o->grad[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra

inline Var matmul(const Var& a, const Var& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = std::make_shared<Node>(std::vector<int>{m, n});
    const real* A = a->value.data();
    const real* B = b->value.data();
    real* C = out->value.data();
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            real av = A[i * k + p];
            if (av == real(0)) continue;
            const real* brow = B + p * n;
            real* crow = C + i * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    Node* o = out.get();
    detail::attach(out, {a, b}, [a, b, o, m, k, n]() {
        if (a->requires_grad) {
            a->ensure_grad();
            // dA = dC * B^T
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    real acc = 0;
                    const real* grow = o->grad.data() + i * n;
                    const real* brow = b->value.data() + p * n;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    a->grad[i * k + p] += acc;
                }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            // dB = A^T * dC
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    real av = a->value[i * k + p];
                    if (av == real(0)) continue;
                    const real* grow = o->grad.data() + i * n;
                    real* brow = b->grad.data() + p * n;
                    for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
    return out;
}

// A [m,k] times B^T where B is [n,k]; result [m,n].
inline Var matmul_nt(const Var& a, const Var& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[1])
        throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    int m = a->shape[0], k = a->shape[1], n = b->shape[0];
    auto out = std::make_shared<Node>(std::vector<int>{m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            real acc = 0;
            const real* arow = a->value.data() + i * k;
            const real* brow = b->value.data() + j * k;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            out->value[i * n + j] = acc;
        }
    Node* o = out.get();
    detail::attach(out, {a, b}, [a, b, o, m, k, n]() {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    real g = o->grad[i * n + j];
                    if (g == real(0)) continue;
                    real* arow = a->grad.data() + i * k;
                    const real* brow = b->value.data() + j * k;
                    for (int p = 0; p < k; ++p) arow[p] += g * brow[p];
                }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    real g = o->grad[i * n + j];
                    if (g == real(0)) continue;
                    const real* arow = a->value.data() + i * k;
                    real* brow = b->grad.data() + j * k;
                    for (int p = 0; p < k; ++p) brow[p] += g * arow[p];
                }
        }
    });
    return out;
}

inline Var matvec(const Var& a, const Var& x) {
    if (a->shape.size() != 2 || x->shape.size() != 1 || a->shape[1] != x->shape[0])
        throw ShapeError("matvec: incompatible shapes " + shape_str(a->shape) + " vs " +
                         shape_str(x->shape));
    int m = a->shape[0], k = a->shape[1];
    auto out = std::make_shared<Node>(std::vector<int>{m});
    for (int i = 0; i < m; ++i) {
        real acc = 0;
        const real* arow = a->value.data() + i * k;
        for (int p = 0; p < k; ++p) acc += arow[p] * x->value[p];
        out->value[i] = acc;
    }
    Node* o = out.get();
    detail::attach(out, {a, x}, [a, x, o, m, k]() {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int i = 0; i < m; ++i) {
                real g = o->grad[i];
                if (g == real(0)) continue;
                real* arow = a->grad.data() + i * k;
                for (int p = 0; p < k; ++p) arow[p] += g * x->value[p];
            }
        }
        if (x->requires_grad) {
            x->ensure_grad();
            for (int i = 0; i < m; ++i) {
                real g = o->grad[i];
                if (g == real(0)) continue;
                const real* arow = a->value.data() + i * k;
                for (int p = 0; p < k; ++p) x->grad[p] += g * arow[p];
            }
        }
    });
    return out;
}

// A^T y for A [m,k], y [m]; result [k].
inline Var matvec_t(const Var& a, const Var& y) {
    if (a->shape.size() != 2 || y->shape.size() != 1 || a->shape[0] != y->shape[0])
        throw ShapeError("matvec_t: incompatible shapes " + shape_str(a->shape) + " vs " +
                         shape_str(y->shape));
    int m = a->shape[0], k = a->shape[1];
    auto out = std::make_shared<Node>(std::vector<int>{k});
    for (int i = 0; i < m; ++i) {
        real yv = y->value[i];
        if (yv == real(0)) continue;
        const real* arow = a->value.data() + i * k;
        for (int p = 0; p < k; ++p) out->value[p] += yv * arow[p];
    }
    Node* o = out.get();
    detail::attach(out, {a, y}, [a, y, o, m, k]() {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int i = 0; i < m; ++i) {
                real yv = y->value[i];
                if (yv == real(0)) continue;
                real* arow = a->grad.data() + i * k;
                for (int p = 0; p < k; ++p) arow[p] += yv * o->grad[p];
            }
        }
        if (y->requires_grad) {
            y->ensure_grad();
            for (int i = 0; i < m; ++i) {
                real acc = 0;
                const real* arow = a->value.data() + i * k;
                for (int p = 0; p < k; ++p) acc += arow[p] * o->grad[p];
                y->grad[i] += acc;
            }
        }
    });
    return out;
}

inline Var dot(const Var& u, const Var& v) {
    if (u->shape.size() != 1 || v->shape.size() != 1 || u->shape[0] != v->shape[0])
        throw ShapeError("dot: incompatible shapes " + shape_str(u->shape) + " vs " +
                         shape_str(v->shape));
    auto out = std::make_shared<Node>(std::vector<int>{1});
    real acc = 0;
    for (size_t i = 0; i < u->numel(); ++i) acc += u->value[i] * v->value[i];
    out->value[0] = acc;
    Node* o = out.get();
    detail::attach(out, {u, v}, [u, v, o]() {
        real g = o->grad[0];
        if (u->requires_grad) {
            u->ensure_grad();
            for (size_t i = 0; i < u->numel(); ++i) u->grad[i] += g * v->value[i];
        }
        if (v->requires_grad) {
            v->ensure_grad();
            for (size_t i = 0; i < v->numel(); ++i) v->grad[i] += g * u->value[i];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// shape manipulation

// Concatenate vectors along axis 0, or matrices along axis 0 (rows) / 1 (cols).
inline Var concat(const std::vector<Var>& parts, int axis = 0) {
    if (parts.empty()) throw ShapeError("concat: empty input list");
    const auto& s0 = parts[0]->shape;
    if (s0.size() == 1) {
        int total = 0;
        for (const auto& p : parts) {
            if (p->shape.size() != 1)
                throw ShapeError("concat: mixed ranks " + shape_str(s0) + " vs " +
                                 shape_str(p->shape));
            total += p->shape[0];
        }
        auto out = std::make_shared<Node>(std::vector<int>{total});
        int off = 0;
        for (const auto& p : parts) {
            std::copy(p->value.begin(), p->value.end(), out->value.begin() + off);
            off += p->shape[0];
        }
        Node* o = out.get();
        auto ps = parts;
        auto fn = [ps, o]() {
            int off = 0;
            for (const auto& p : ps) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int i = 0; i < p->shape[0]; ++i) p->grad[i] += o->grad[off + i];
                }
                off += p->shape[0];
            }
        };
        if (grad_mode()) {
            bool track = false;
            for (const auto& p : parts)
                if (p->requires_grad) track = true;
            if (track) {
                out->requires_grad = true;
                out->parents = parts;
                out->backward_fn = fn;
            }
        }
        return out;
    }
    if (s0.size() != 2 || (axis != 0 && axis != 1))
        throw ShapeError("concat: unsupported rank/axis for shape " + shape_str(s0));
    int m = 0, n = 0;
    if (axis == 0) {
        n = s0[1];
        for (const auto& p : parts) {
            if (p->shape.size() != 2 || p->shape[1] != n)
                throw ShapeError("concat: incompatible shapes " + shape_str(s0) + " vs " +
                                 shape_str(p->shape));
            m += p->shape[0];
        }
    } else {
        m = s0[0];
        for (const auto& p : parts) {
            if (p->shape.size() != 2 || p->shape[0] != m)
                throw ShapeError("concat: incompatible shapes " + shape_str(s0) + " vs " +
                                 shape_str(p->shape));
            n += p->shape[1];
        }
    }
    auto out = std::make_shared<Node>(std::vector<int>{m, n});
    if (axis == 0) {
        int off = 0;
        for (const auto& p : parts) {
            std::copy(p->value.begin(), p->value.end(), out->value.begin() + off);
            off += static_cast<int>(p->numel());
        }
    } else {
        int coff = 0;
        for (const auto& p : parts) {
            int pn = p->shape[1];
            for (int r = 0; r < m; ++r)
                std::copy(p->value.begin() + r * pn, p->value.begin() + (r + 1) * pn,
                          out->value.begin() + r * n + coff);
            coff += pn;
        }
    }
    Node* o = out.get();
    auto ps = parts;
    auto fn = [ps, o, m, n, axis]() {
        if (axis == 0) {
            int off = 0;
            for (const auto& p : ps) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < p->numel(); ++i) p->grad[i] += o->grad[off + i];
                }
                off += static_cast<int>(p->numel());
            }
        } else {
            int coff = 0;
            for (const auto& p : ps) {
                int pn = p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int r = 0; r < m; ++r)
                        for (int c = 0; c < pn; ++c) p->grad[r * pn + c] += o->grad[r * n + coff + c];
                }
                coff += pn;
            }
        }
    };
    if (grad_mode()) {
        bool track = false;
        for (const auto& p : parts)
            if (p->requires_grad) track = true;
        if (track) {
            out->requires_grad = true;
            out->parents = parts;
            out->backward_fn = fn;
        }
    }
    return out;
}

// Contiguous vector slice [start, start+len).
inline Var slice(const Var& a, int start, int len) {
    if (a->shape.size() != 1 || start < 0 || len < 1 || start + len > a->shape[0])
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") invalid for shape " +
                         shape_str(a->shape));
    auto out = std::make_shared<Node>(std::vector<int>{len});
    std::copy(a->value.begin() + start, a->value.begin() + start + len, out->value.begin());
    Node* o = out.get();
    detail::attach(out, {a}, [a, o, start, len]() {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int i = 0; i < len; ++i) a->grad[start + i] += o->grad[i];
    });
    return out;
}

// Rows [r0, r0+nrows) of a matrix.
inline Var slice_rows(const Var& a, int r0, int nrows) {
    if (a->shape.size() != 2 || r0 < 0 || nrows < 1 || r0 + nrows > a->shape[0])
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," +
                         std::to_string(r0 + nrows) + ") invalid for shape " +
                         shape_str(a->shape));
    int n = a->shape[1];
    auto out = std::make_shared<Node>(std::vector<int>{nrows, n});
    std::copy(a->value.begin() + r0 * n, a->value.begin() + (r0 + nrows) * n, out->value.begin());
    Node* o = out.get();
    detail::attach(out, {a}, [a, o, r0, nrows, n]() {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int i = 0; i < nrows * n; ++i) a->grad[r0 * n + i] += o->grad[i];
    });
    return out;
}

// Single matrix row as a vector.
inline Var row(const Var& a, int r) {
    if (a->shape.size() != 2 || r < 0 || r >= a->shape[0])
        throw ShapeError("row: index " + std::to_string(r) + " invalid for shape " +
                         shape_str(a->shape));
    int n = a->shape[1];
    auto out = std::make_shared<Node>(std::vector<int>{n});
    std::copy(a->value.begin() + r * n, a->value.begin() + (r + 1) * n, out->value.begin());
    Node* o = out.get();
    detail::attach(out, {a}, [a, o, r, n]() {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int i = 0; i < n; ++i) a->grad[r * n + i] += o->grad[i];
    });
    return out;
}

// Stack equal-length vectors as matrix rows.
inline Var stack_rows(const std::vector<Var>& rows_in) {
    if (rows_in.empty()) throw ShapeError("stack_rows: empty input list");
    int n = rows_in[0]->shape.size() == 1 ? rows_in[0]->shape[0] : -1;
    for (const auto& r : rows_in)
        if (r->shape.size() != 1 || r->shape[0] != n)
            throw ShapeError("stack_rows: incompatible shapes " + shape_str(rows_in[0]->shape) +
                             " vs " + shape_str(r->shape));
    int m = static_cast<int>(rows_in.size());
    auto out = std::make_shared<Node>(std::vector<int>{m, n});
    for (int r = 0; r < m; ++r)
        std::copy(rows_in[r]->value.begin(), rows_in[r]->value.end(), out->value.begin() + r * n);
    Node* o = out.get();
    auto ps = rows_in;
    auto fn = [ps, o, n]() {
        for (size_t r = 0; r < ps.size(); ++r) {
            if (!ps[r]->requires_grad) continue;
            ps[r]->ensure_grad();
            for (int i = 0; i < n; ++i) ps[r]->grad[i] += o->grad[r * n + i];
        }
    };
    if (grad_mode()) {
        bool track = false;
        for (const auto& p : rows_in)
            if (p->requires_grad) track = true;
        if (track) {
            out->requires_grad = true;
            out->parents = rows_in;
            out->backward_fn = fn;
        }
    }
    return out;
}

// Scalar element of a vector.
inline Var pick(const Var& a, int i) {
    if (a->shape.size() != 1 || i < 0 || i >= a->shape[0])
        throw ShapeError("pick: index " + std::to_string(i) + " invalid for shape " +
                         shape_str(a->shape));
    auto out = std::make_shared<Node>(std::vector<int>{1});
    out->value[0] = a->value[i];
    Node* o = out.get();
    detail::attach(out, {a}, [a, o, i]() {
        if (!a->requires_grad) return;
        a->ensure_grad();
        a->grad[i] += o->grad[0];
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions and normalizations

inline Var sum(const Var& a) {
    auto out = std::make_shared<Node>(std::vector<int>{1});
    real acc = 0;
    for (real v : a->value) acc += v;
    out->value[0] = acc;
    Node* o = out.get();
    detail::attach(out, {a}, [a, o]() {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < a->numel(); ++i) a->grad[i] += o->grad[0];
    });
    return out;
}

inline Var mean(const Var& a) {
    auto out = std::make_shared<Node>(std::vector<int>{1});
    real acc = 0;
    for (real v : a->value) acc += v;
    real inv = real(1) / static_cast<real>(a->numel());
    out->value[0] = acc * inv;
    Node* o = out.get();
    detail::attach(out, {a}, [a, o, inv]() {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < a->numel(); ++i) a->grad[i] += o->grad[0] * inv;
    });
    return out;
}

// Softmax over a vector, computed with max subtraction.
inline Var softmax(const Var& a) {
    if (a->shape.size() != 1) throw ShapeError("softmax: expected vector, got " + shape_str(a->shape));
    auto out = std::make_shared<Node>(a->shape);
    real m = a->value[0];
    for (real v : a->value) m = std::max(m, v);
    real z = 0;
    for (size_t i = 0; i < a->numel(); ++i) {
        out->value[i] = std::exp(a->value[i] - m);
        z += out->value[i];
    }
    real inv = real(1) / z;
    for (auto& v : out->value) v *= inv;
    Node* o = out.get();
    detail::attach(out, {a}, [a, o]() {
        if (!a->requires_grad) return;
        a->ensure_grad();
        real gdot = 0;
        for (size_t i = 0; i < o->numel(); ++i) gdot += o->grad[i] * o->value[i];
        for (size_t i = 0; i < o->numel(); ++i)
            a->grad[i] += o->value[i] * (o->grad[i] - gdot);
    });
    return out;
}

inline Var log_softmax(const Var& a) {
    if (a->shape.size() != 1)
        throw ShapeError("log_softmax: expected vector, got " + shape_str(a->shape));
    auto out = std::make_shared<Node>(a->shape);
    real m = a->value[0];
    for (real v : a->value) m = std::max(m, v);
    real z = 0;
    for (real v : a->value) z += std::exp(v - m);
    real lz = std::log(z) + m;
    for (size_t i = 0; i < a->numel(); ++i) out->value[i] = a->value[i] - lz;
    Node* o = out.get();
    detail::attach(out, {a}, [a, o]() {
        if (!a->requires_grad) return;
        a->ensure_grad();
        real gsum = 0;
        for (size_t i = 0; i < o->numel(); ++i) gsum += o->grad[i];
        for (size_t i = 0; i < o->numel(); ++i)
            a->grad[i] += o->grad[i] - std::exp(o->value[i]) * gsum;
    });
    return out;
}

// ---------------------------------------------------------------------------
// backward

// Reverse-mode sweep from a scalar loss. Freshly created interior nodes carry
// zero gradient buffers; leaf gradients accumulate additively across calls
// until explicitly zeroed, which is what minibatch accumulation relies on.
inline void backward(const Var& loss) {
    if (loss->numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss->shape));
    // Iterative postorder DFS; recursion would overflow on long recurrent chains.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad[0] += real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn();
        }
    }
}

}  // namespace streamlas
