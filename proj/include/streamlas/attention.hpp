#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "streamlas/tensor.hpp"

// Attender variants: global soft attention, monotonic chunkwise attention
// with a fixed chunk length, and the adaptive variant where a small
// prediction network outputs the chunk length per step. Includes the
// training-time expectation calculus (expected alignment over boundary
// positions and the induced chunkwise weights) and the two boundary-shift
// compensations that average future listener features (M1) or future attend
// probabilities (M2).

namespace streamlas {

enum class AttentionKind { Gsa, Mocha, Amocha };
enum class Smoothing { None, M1, M2 };
enum class PredictorMode { Constrained, Unconstrained };
enum class Activation { Relu, Tanh };

struct AdditiveEnergyParams {
    Var Wh;  // [A, H]
    Var Ws;  // [A, S]
    Var V;   // [A]
    Var b;   // [A]
};

struct MonotonicEnergyParams {
    Var Wh;  // [A, H]
    Var Ws;  // [A, S]
    Var v;   // [A], used in weight-normalized form v/||v|| scaled by g
    Var b;   // [A]
    Var g;   // scalar
    Var r;   // scalar
};

struct ChunkPredictorParams {
    Var Wh;  // [P, H]
    Var Ws;  // [P, S]
    Var Vp;  // [P]
    Var b;   // [P]
    PredictorMode mode = PredictorMode::Constrained;
    Activation activation = Activation::Relu;
    int wmax = 40;
};

// ---------------------------------------------------------------------------
// energies

inline Var additive_energy(const AdditiveEnergyParams& p, const Var& s, const Var& h) {
    return dot(p.V, vtanh(add(add(matvec(p.Wh, h), matvec(p.Ws, s)), p.b)));
}

// Energies of one decoder state against every row of H: e_u for u = 1..U.
// hK is the precomputed H * Wh^T ([U, A]) so per-step cost is O(U*A).
inline Var additive_energy_rows(const AdditiveEnergyParams& p, const Var& s, const Var& hK) {
    Var base = add(matvec(p.Ws, s), p.b);  // [A]
    return matvec(vtanh(add(hK, base)), p.V);
}

inline Var precompute_keys(const Var& H, const Var& Wh) { return matmul_nt(H, Wh); }

// e = g * (v^T/||v||) tanh(Ws s + Wh h + b) + r
inline Var monotonic_energy(const MonotonicEnergyParams& p, const Var& s, const Var& h) {
    Var nv = vsqrt(dot(p.v, p.v));
    if (nv->value[0] <= real(0)) throw ShapeError("monotonic_energy: direction vector has zero norm");
    Var t = vtanh(add(add(matvec(p.Wh, h), matvec(p.Ws, s)), p.b));
    return vshift(vscale(dot(t, p.v), div(p.g, nv)), p.r);
}

inline Var monotonic_energy_rows(const MonotonicEnergyParams& p, const Var& s, const Var& hK) {
    Var nv = vsqrt(dot(p.v, p.v));
    if (nv->value[0] <= real(0)) throw ShapeError("monotonic_energy: direction vector has zero norm");
    Var base = add(matvec(p.Ws, s), p.b);
    Var e0 = matvec(vtanh(add(hK, base)), p.v);  // [U]
    return vshift(vscale(e0, div(p.g, nv)), p.r);
}

// ---------------------------------------------------------------------------
// global soft attention

struct GsaResult {
    Var alpha;    // [U]
    Var context;  // [H]
};

inline GsaResult gsa_context(const AdditiveEnergyParams& p, const Var& s, const Var& H,
                             const Var& hK) {
    Var alpha = softmax(additive_energy_rows(p, s, hK));
    return {alpha, matvec_t(H, alpha)};
}

// ---------------------------------------------------------------------------
// boundary-shift compensation

// Banded averaging matrix: row u averages positions u .. min(U-1, u+w-1)
// (truncated mean at the tail).
inline Var smoothing_matrix(int U, int w) {
    auto S = zeros({U, U});
    for (int u = 0; u < U; ++u) {
        int hi = std::min(U - 1, u + w - 1);
        real inv = real(1) / static_cast<real>(hi - u + 1);
        for (int k = u; k <= hi; ++k) S->value[u * U + k] = inv;
    }
    return S;
}

// M1: averaged listener features, used only inside the attend-probability
// energy. w == 1 leaves the input untouched (identical code path).
inline Var smooth_features_m1(const Var& H, int w) {
    if (w < 1) throw ShapeError("smooth_features_m1: w must be >= 1");
    if (w == 1) return H;
    return matmul(smoothing_matrix(H->shape[0], w), H);
}

// M2: averaged attend probabilities; the boundary test then uses the average.
inline Var smooth_probs_m2(const Var& p, int w) {
    if (w < 1) throw ShapeError("smooth_probs_m2: w must be >= 1");
    if (w == 1) return p;
    return matvec(smoothing_matrix(p->shape[0], w), p);
}

// ---------------------------------------------------------------------------
// hard monotonic inference

// Most recently attended listener position; 0 before the first emission,
// 1-based afterwards. Scanning for the next output step restarts AT the
// previous boundary (inclusive).
struct MonotonicState {
    int last_boundary = 0;
};

// First u >= max(1, state.last_boundary) with attend probability above 0.5,
// using already-computed probabilities p (1-based positions p[u-1]).
// Returns nullopt when the scan exhausts the sequence.
inline std::optional<int> first_boundary(const std::vector<real>& p, int start_u) {
    for (int u = std::max(1, start_u); u <= static_cast<int>(p.size()); ++u)
        if (p[u - 1] > real(0.5)) return u;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// chunkwise soft attention (inference)

struct ChunkResult {
    Var weights;  // over the chunk [max(1, u-W+1), u]
    Var context;  // [H]
    int lo;       // 1-based chunk start
};

inline ChunkResult chunk_context(const AdditiveEnergyParams& p, const Var& s, const Var& H, int u,
                                 int W) {
    if (W < 1) throw ShapeError("chunk_context: W must be >= 1");
    if (u < 1 || u > H->shape[0])
        throw ShapeError("chunk_context: boundary " + std::to_string(u) + " outside [1," +
                         std::to_string(H->shape[0]) + "]");
    int lo = std::max(1, u - W + 1);
    Var sub = slice_rows(H, lo - 1, u - lo + 1);
    Var w = softmax(additive_energy_rows(p, s, precompute_keys(sub, p.Wh)));
    return {w, matvec_t(sub, w), lo};
}

// ---------------------------------------------------------------------------
// training expectations

// One step of the expected-alignment recurrence. Implemented division-free:
//   q_u = (1 - p_{u-1}) q_{u-1} + aprev_u,   alpha_u = p_u q_u
// which is algebraically identical to the textbook form
//   alpha_u = p_u ((1 - p_{u-1}) alpha_{u-1} / p_{u-1} + aprev_u')
// wherever p > 0. For the first output step pass the one-hot row e_1 as
// aprev: all scan mass starts at position 1.
inline Var expected_alignment_step(const Var& p, const Var& aprev) {
    if (p->shape.size() != 1 || p->shape != aprev->shape)
        throw ShapeError("expected_alignment_step: incompatible shapes " + shape_str(p->shape) +
                         " vs " + shape_str(aprev->shape));
    int U = p->shape[0];
    auto out = std::make_shared<Node>(p->shape);
    std::vector<real> q(U);
    q[0] = aprev->value[0];
    for (int u = 1; u < U; ++u)
        q[u] = (real(1) - p->value[u - 1]) * q[u - 1] + aprev->value[u];
    for (int u = 0; u < U; ++u) out->value[u] = p->value[u] * q[u];
    Node* o = out.get();
    detail::attach(out, {p, aprev}, [p, aprev, o, q, U]() {
        // Reverse sweep of the recurrence. gq[u] collects d loss / d q_u.
        std::vector<real> gq(U, real(0));
        for (int u = U - 1; u >= 0; --u) {
            gq[u] = o->grad[u] * p->value[u];
            if (u + 1 < U) gq[u] += gq[u + 1] * (real(1) - p->value[u]);
        }
        if (p->requires_grad) {
            p->ensure_grad();
            for (int u = 0; u < U; ++u) {
                p->grad[u] += o->grad[u] * q[u];
                if (u + 1 < U) p->grad[u] -= gq[u + 1] * q[u];
            }
        }
        if (aprev->requires_grad) {
            aprev->ensure_grad();
            for (int u = 0; u < U; ++u) aprev->grad[u] += gq[u];
        }
    });
    return out;
}

// Full alignment matrix for a p matrix [I, U]; row i is the probability that
// position u is the boundary at output step i. Mass may escape past the
// sequence end, so rows sum to at most 1.
inline Var expected_alignment(const Var& p) {
    if (p->shape.size() != 2)
        throw ShapeError("expected_alignment: expected matrix, got " + shape_str(p->shape));
    int I = p->shape[0], U = p->shape[1];
    Var aprev = zeros({U});
    aprev->value[0] = real(1);
    std::vector<Var> rows_out;
    rows_out.reserve(I);
    for (int i = 0; i < I; ++i) {
        aprev = expected_alignment_step(row(p, i), aprev);
        rows_out.push_back(aprev);
    }
    return stack_rows(rows_out);
}

// Induced chunkwise attention for one output step. Boundary mass alpha_k is
// spread over the window [max(1, k-W_k+1), k] with softmax weights of the
// chunk energies d; window lengths may vary per position (adaptive chunks).
// Redistributes mass exactly: sum(beta) == sum(alpha).
inline Var expected_chunk_attention_step(const Var& alpha, const Var& d,
                                         const std::vector<int>& W) {
    if (alpha->shape.size() != 1 || alpha->shape != d->shape)
        throw ShapeError("expected_chunk_attention_step: incompatible shapes " +
                         shape_str(alpha->shape) + " vs " + shape_str(d->shape));
    int U = alpha->shape[0];
    if (static_cast<int>(W.size()) != U)
        throw ShapeError("expected_chunk_attention_step: W list length " +
                         std::to_string(W.size()) + " != U " + std::to_string(U));
    for (int w : W)
        if (w < 1) throw ShapeError("expected_chunk_attention_step: chunk length must be >= 1");

    auto out = std::make_shared<Node>(alpha->shape);
    // Per-window softmax weights, kept for the backward pass.
    std::vector<std::vector<real>> wgt(U);
    std::vector<int> lo(U);
    for (int k = 0; k < U; ++k) {
        lo[k] = std::max(0, k - W[k] + 1);
        real m = d->value[lo[k]];
        for (int l = lo[k]; l <= k; ++l) m = std::max(m, d->value[l]);
        real denom = 0;
        wgt[k].resize(k - lo[k] + 1);
        for (int l = lo[k]; l <= k; ++l) {
            wgt[k][l - lo[k]] = std::exp(d->value[l] - m);
            denom += wgt[k][l - lo[k]];
        }
        real inv = real(1) / denom;
        for (auto& wv : wgt[k]) wv *= inv;
        real a = alpha->value[k];
        for (int l = lo[k]; l <= k; ++l) out->value[l] += a * wgt[k][l - lo[k]];
    }
    Node* o = out.get();
    detail::attach(out, {alpha, d}, [alpha, d, o, wgt, lo, U]() {
        for (int k = 0; k < U; ++k) {
            real S = 0;
            for (int l = lo[k]; l <= k; ++l) S += o->grad[l] * wgt[k][l - lo[k]];
            if (alpha->requires_grad) {
                alpha->ensure_grad();
                alpha->grad[k] += S;
            }
            if (d->requires_grad) {
                d->ensure_grad();
                real a = alpha->value[k];
                for (int l = lo[k]; l <= k; ++l)
                    d->grad[l] += a * wgt[k][l - lo[k]] * (o->grad[l] - S);
            }
        }
    });
    return out;
}

// Matrix form over all output steps with a fixed chunk length W.
inline Var expected_chunk_attention(const Var& alpha, const Var& d, int W) {
    if (alpha->shape.size() != 2 || alpha->shape != d->shape)
        throw ShapeError("expected_chunk_attention: incompatible shapes " +
                         shape_str(alpha->shape) + " vs " + shape_str(d->shape));
    int I = alpha->shape[0], U = alpha->shape[1];
    std::vector<int> Wrow(U, W);
    std::vector<Var> rows_out;
    rows_out.reserve(I);
    for (int i = 0; i < I; ++i)
        rows_out.push_back(expected_chunk_attention_step(row(alpha, i), row(d, i), Wrow));
    return stack_rows(rows_out);
}

// ---------------------------------------------------------------------------
// chunk length prediction

namespace detail {

inline Var predictor_hidden(const ChunkPredictorParams& p, const Var& s, const Var& h) {
    Var z = add(add(matvec(p.Wh, h), matvec(p.Ws, s)), p.b);
    return p.activation == Activation::Relu ? relu(z) : vtanh(z);
}

inline Var predictor_hidden_rows(const ChunkPredictorParams& p, const Var& s, const Var& hK) {
    Var z = add(hK, add(matvec(p.Ws, s), p.b));
    return p.activation == Activation::Relu ? relu(z) : vtanh(z);
}

}  // namespace detail

// W = Wmax * sigmoid(Vp^T F(Wh h + Ws s + b)); always in (0, Wmax).
inline Var predict_chunk_constrained(const ChunkPredictorParams& p, const Var& s, const Var& h) {
    if (p.wmax < 1) throw ShapeError("predict_chunk_constrained: Wmax must be >= 1");
    return smul(sigmoid(dot(p.Vp, detail::predictor_hidden(p, s, h))), static_cast<real>(p.wmax));
}

// W = exp(Vp^T F(Wh h + Ws s + b)); always positive. The exponent is clipped
// from above at apply time (a chunk longer than the sequence is meaningless);
// pass exponent_cap <= 0 to disable.
inline Var predict_chunk_unconstrained(const ChunkPredictorParams& p, const Var& s, const Var& h,
                                       real exponent_cap = real(0)) {
    Var z = dot(p.Vp, detail::predictor_hidden(p, s, h));
    if (exponent_cap > real(0)) z = clip(z, real(-745), exponent_cap);
    return vexp(z);
}

// Per-position chunk lengths for a whole listener matrix (training path).
// Returns the raw real-valued predictions; rounding happens at the windowing
// site.
inline Var predict_chunk_rows(const ChunkPredictorParams& p, const Var& s, const Var& hK,
                              real exponent_cap) {
    Var z = matvec(detail::predictor_hidden_rows(p, s, hK), p.Vp);  // [U]
    if (p.mode == PredictorMode::Constrained)
        return smul(sigmoid(z), static_cast<real>(p.wmax));
    if (exponent_cap > real(0)) z = clip(z, real(-745), exponent_cap);
    return vexp(z);
}

// Round to nearest (ties up) and clamp to >= 1: the integer chunk length
// actually used for windowing.
inline int chunk_length_to_int(real w) {
    return std::max(1, static_cast<int>(std::floor(static_cast<double>(w) + 0.5)));
}

}  // namespace streamlas
