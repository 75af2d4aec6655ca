#pragma once

// Test-only reference implementations. Everything here is written directly
// from the defining formulas on plain doubles, independent of the library's
// computation paths, so it can serve as an oracle for them.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "streamlas/tensor.hpp"

namespace oracles {

using streamlas::ParamList;
using streamlas::Var;

// ---------------------------------------------------------------------------
// finite differences

// Central finite difference of a scalar function w.r.t. one parameter entry.
inline double fd_partial(const std::function<double()>& f, const Var& param, size_t idx,
                         double eps = 1e-5) {
    double orig = param->value[idx];
    param->value[idx] = orig + eps;
    double fp = f();
    param->value[idx] = orig - eps;
    double fm = f();
    param->value[idx] = orig;
    return (fp - fm) / (2 * eps);
}

struct GradCheck {
    double max_rel_err = 0;
    std::string worst_param;
    size_t worst_index = 0;
    int checked = 0;
};

// Compares autodiff gradients of make_loss() against central finite
// differences for every entry of every listed parameter.
inline GradCheck check_gradients(const ParamList& params,
                                 const std::function<streamlas::Var()>& make_loss,
                                 double eps = 1e-5) {
    for (const auto& [k, v] : params) v->zero_grad();
    Var loss = make_loss();
    streamlas::backward(loss);
    std::vector<std::vector<double>> ad;
    for (const auto& [k, v] : params) {
        v->ensure_grad();
        ad.emplace_back(v->grad.begin(), v->grad.end());
    }
    auto eval = [&]() { return static_cast<double>(make_loss()->value[0]); };
    GradCheck res;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto& [key, var] = params[pi];
        for (size_t i = 0; i < var->value.size(); ++i) {
            double fd = fd_partial(eval, var, i, eps);
            double rel = std::abs(ad[pi][i] - fd) / (std::abs(fd) + 1e-8);
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = key;
                res.worst_index = i;
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// expected alignment by exhaustive path enumeration

// Enumerates every monotonic attend/skip outcome of the hard attention
// process (scan restarts at the previous boundary, inclusive) and sums path
// probabilities into the boundary distribution per output step. Mass that
// scans past the end of the sequence is dropped.
inline std::vector<std::vector<double>> enumerate_alignment(
    const std::vector<std::vector<double>>& p) {
    int I = static_cast<int>(p.size());
    int U = I ? static_cast<int>(p[0].size()) : 0;
    std::vector<std::vector<double>> alpha(I, std::vector<double>(U, 0.0));
    // walk(i, v, prob): step i starts scanning at position v (1-based)
    std::function<void(int, int, double)> walk = [&](int i, int v, double prob) {
        if (i == I || prob == 0.0) return;
        double keep = prob;
        for (int u = v; u <= U; ++u) {
            double attend = keep * p[i][u - 1];
            alpha[i][u - 1] += attend;
            walk(i + 1, u, attend);
            keep *= (1.0 - p[i][u - 1]);
        }
    };
    walk(0, 1, 1.0);
    return alpha;
}

// ---------------------------------------------------------------------------
// induced chunk attention, literal double loop

// Direct transcription of the chunkwise redistribution: mass at boundary k
// spreads over [k-W_k+1, k] with unnormalized exp(d) weights. No max
// subtraction; fine at toy magnitudes.
inline std::vector<double> chunk_expectation_literal(const std::vector<double>& alpha,
                                                     const std::vector<double>& d,
                                                     const std::vector<int>& W) {
    int U = static_cast<int>(alpha.size());
    std::vector<double> beta(U, 0.0);
    for (int k = 0; k < U; ++k) {
        int lo = std::max(0, k - W[k] + 1);
        double denom = 0;
        for (int l = lo; l <= k; ++l) denom += std::exp(d[l]);
        for (int u = lo; u <= k; ++u) beta[u] += alpha[k] * std::exp(d[u]) / denom;
    }
    return beta;
}

// ---------------------------------------------------------------------------
// plain-double LSTM references

struct RefLstm {
    // row-major [4h][in+h], gate order i,f,g,o; bias [4h]
    std::vector<double> W;
    std::vector<double> b;
    int in = 0, h = 0;
};

inline void ref_lstm_step(const RefLstm& p, const std::vector<double>& x,
                          std::vector<double>& h, std::vector<double>& c) {
    int H = p.h, in = p.in;
    std::vector<double> pre(4 * H, 0.0);
    for (int r = 0; r < 4 * H; ++r) {
        double acc = p.b[r];
        for (int j = 0; j < in; ++j) acc += p.W[r * (in + H) + j] * x[j];
        for (int j = 0; j < H; ++j) acc += p.W[r * (in + H) + in + j] * h[j];
        pre[r] = acc;
    }
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> h2(H), c2(H);
    for (int j = 0; j < H; ++j) {
        double ig = sig(pre[j]);
        double fg = sig(pre[H + j]);
        double gg = std::tanh(pre[2 * H + j]);
        double og = sig(pre[3 * H + j]);
        c2[j] = fg * c[j] + ig * gg;
        h2[j] = og * std::tanh(c2[j]);
    }
    h = h2;
    c = c2;
}

// Forward LSTM over frames [t0, t1) with the given initial state; returns
// outputs per step.
inline std::vector<std::vector<double>> ref_lstm_run(const RefLstm& p,
                                                     const std::vector<std::vector<double>>& seq,
                                                     int t0, int t1, bool reversed,
                                                     std::vector<double> h = {},
                                                     std::vector<double> c = {}) {
    if (h.empty()) h.assign(p.h, 0.0);
    if (c.empty()) c.assign(p.h, 0.0);
    std::vector<std::vector<double>> out;
    if (!reversed) {
        for (int t = t0; t < t1; ++t) {
            ref_lstm_step(p, seq[t], h, c);
            out.push_back(h);
        }
    } else {
        for (int t = t1 - 1; t >= t0; --t) {
            ref_lstm_step(p, seq[t], h, c);
            out.push_back(h);  // out[0] corresponds to t1-1
        }
    }
    return out;
}

}  // namespace oracles
