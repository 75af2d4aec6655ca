#pragma once

#include <optional>
#include <string>
#include <vector>

#include "streamlas/tensor.hpp"

// The listener: unidirectional LSTM, BLSTM, pyramidal time reduction, and
// latency-controlled BLSTM layers. A latency-controlled layer splits its
// input into non-overlapping blocks of fixed length with a bounded number of
// appended future frames as right context for the reversed LSTM.

namespace streamlas {

enum class Direction { Uni, Bi, LatencyControlled };

struct LayerSpec {
    Direction direction = Direction::Bi;
    int hidden = 256;
    bool pyramid_input = false;
};

struct EncoderConfig {
    std::vector<LayerSpec> layers;
    int lc_block_len = 64;      // Nc, in frames at the raw input timescale
    int lc_right_context = 32;  // Nr, in frames at the raw input timescale

    // Output positions per input frame (1 / time-reduction factor).
    int time_reduction() const {
        int f = 1;
        for (const auto& l : layers)
            if (l.pyramid_input) f *= 2;
        return f;
    }
    int output_dim(int input_dim) const {
        int d = input_dim;
        for (const auto& l : layers) {
            if (l.pyramid_input) d *= 2;
            d = l.direction == Direction::Uni ? l.hidden : 2 * l.hidden;
        }
        return d;
    }
};

struct LstmParams {
    Var W;  // [4h, in+h], gate order i,f,g,o
    Var b;  // [4h]
};

struct EncoderLayerParams {
    LstmParams fwd;
    LstmParams bwd;  // unused for Uni layers
};

struct EncoderParams {
    std::vector<EncoderLayerParams> layers;
};

inline LstmParams make_lstm_params(int input, int hidden, Rng& rng) {
    return {make_param({4 * hidden, input + hidden}, rng), zeros({4 * hidden}, true)};
}

// One LSTM cell step. State is (h, c); gates follow the standard
// forget/input/output arrangement with a tanh cell update.
inline std::pair<Var, Var> lstm_step(const LstmParams& p, const Var& x, const Var& h,
                                     const Var& c) {
    int hid = p.b->shape[0] / 4;
    if (x->shape.size() != 1 || x->shape[0] + hid != p.W->shape[1])
        throw ShapeError("lstm_step: input " + shape_str(x->shape) + " incompatible with weights " +
                         shape_str(p.W->shape));
    Var pre = add(matvec(p.W, concat({x, h})), p.b);
    Var i = sigmoid(slice(pre, 0, hid));
    Var f = sigmoid(slice(pre, hid, hid));
    Var g = vtanh(slice(pre, 2 * hid, hid));
    Var o = sigmoid(slice(pre, 3 * hid, hid));
    Var c2 = add(mul(f, c), mul(i, g));
    Var h2 = mul(o, vtanh(c2));
    return {h2, c2};
}

namespace detail {

// Runs an LSTM over the given row indices of seq; returns outputs in the
// order visited.
inline std::vector<Var> run_lstm(const LstmParams& p, const Var& seq,
                                 const std::vector<int>& order) {
    int hid = p.b->shape[0] / 4;
    Var h = zeros({hid});
    Var c = zeros({hid});
    std::vector<Var> out;
    out.reserve(order.size());
    for (int t : order) {
        auto [h2, c2] = lstm_step(p, row(seq, t), h, c);
        h = h2;
        c = c2;
        out.push_back(h);
    }
    return out;
}

}  // namespace detail

// Pairs consecutive frames: output[t] = concat(seq[2t], seq[2t+1]). A
// trailing odd frame is dropped, so the output length is T div 2.
inline Var pyramid_reduce(const Var& seq) {
    if (seq->shape.size() != 2 || seq->shape[0] < 2)
        throw ShapeError("pyramid_reduce: need at least 2 frames, got " + shape_str(seq->shape));
    int half = seq->shape[0] / 2;
    std::vector<Var> rows_out;
    rows_out.reserve(half);
    for (int t = 0; t < half; ++t)
        rows_out.push_back(concat({row(seq, 2 * t), row(seq, 2 * t + 1)}));
    return stack_rows(rows_out);
}

inline Var uni_lstm_layer(const Var& seq, const LstmParams& p) {
    std::vector<int> order(seq->shape[0]);
    for (int t = 0; t < seq->shape[0]; ++t) order[t] = t;
    return stack_rows(detail::run_lstm(p, seq, order));
}

inline Var blstm_layer(const Var& seq, const EncoderLayerParams& p) {
    int T = seq->shape[0];
    std::vector<int> fwd_order(T), bwd_order(T);
    for (int t = 0; t < T; ++t) {
        fwd_order[t] = t;
        bwd_order[t] = T - 1 - t;
    }
    auto fwd = detail::run_lstm(p.fwd, seq, fwd_order);
    auto bwd = detail::run_lstm(p.bwd, seq, bwd_order);
    std::vector<Var> rows_out(T);
    for (int t = 0; t < T; ++t) rows_out[t] = concat({fwd[t], bwd[T - 1 - t]});
    return stack_rows(rows_out);
}

struct LcBlock {
    int begin;    // first frame of the block
    int mid_end;  // end of the emitted segment (begin + Nc, clipped to T)
    int end;      // end including right context (begin + Nc + Nr, clipped to T)
};

// Block arrangement: block k covers [k*Nc, k*Nc + Nc + Nr), clipped at T.
// The emitted segments tile [0, T) exactly.
inline std::vector<LcBlock> lc_arrange(int T, int Nc, int Nr) {
    if (Nc < 1) throw ShapeError("lc_arrange: Nc must be >= 1, got " + std::to_string(Nc));
    if (Nr < 0) throw ShapeError("lc_arrange: Nr must be >= 0, got " + std::to_string(Nr));
    std::vector<LcBlock> blocks;
    for (int begin = 0; begin < T; begin += Nc)
        blocks.push_back({begin, std::min(begin + Nc, T), std::min(begin + Nc + Nr, T)});
    return blocks;
}

// Latency-controlled BLSTM layer. The forward LSTM runs continuously over the
// whole sequence; the backward LSTM restarts from zero state at the right
// edge of each block (including the right-context frames) and its outputs for
// the right-context region are discarded.
inline Var lc_blstm_layer(const Var& seq, const EncoderLayerParams& p, int Nc, int Nr) {
    int T = seq->shape[0];
    std::vector<int> fwd_order(T);
    for (int t = 0; t < T; ++t) fwd_order[t] = t;
    auto fwd = detail::run_lstm(p.fwd, seq, fwd_order);

    std::vector<Var> bwd(T);
    for (const auto& blk : lc_arrange(T, Nc, Nr)) {
        std::vector<int> order;
        for (int t = blk.end - 1; t >= blk.begin; --t) order.push_back(t);
        auto outs = detail::run_lstm(p.bwd, seq, order);
        for (size_t i = 0; i < order.size(); ++i)
            if (order[i] < blk.mid_end) bwd[order[i]] = outs[i];
    }
    std::vector<Var> rows_out(T);
    for (int t = 0; t < T; ++t) rows_out[t] = concat({fwd[t], bwd[t]});
    return stack_rows(rows_out);
}

// Full listener: applies layers in order. Each latency-controlled layer
// blocks at its own input timescale, dividing the raw-frame Nc/Nr by the
// cumulative pyramid reduction up to and including that layer.
inline Var listen(const Var& x, const EncoderConfig& cfg, const EncoderParams& params) {
    if (cfg.layers.size() != params.layers.size())
        throw ShapeError("listen: config has " + std::to_string(cfg.layers.size()) +
                         " layers, params have " + std::to_string(params.layers.size()));
    Var seq = x;
    int factor = 1;
    for (size_t l = 0; l < cfg.layers.size(); ++l) {
        const auto& spec = cfg.layers[l];
        if (spec.pyramid_input) {
            if (seq->shape[0] < 2)
                throw ShapeError("listen: sequence too short for pyramid layer " +
                                 std::to_string(l));
            seq = pyramid_reduce(seq);
            factor *= 2;
        }
        switch (spec.direction) {
            case Direction::Uni:
                seq = uni_lstm_layer(seq, params.layers[l].fwd);
                break;
            case Direction::Bi:
                seq = blstm_layer(seq, params.layers[l]);
                break;
            case Direction::LatencyControlled: {
                int nc = std::max(1, cfg.lc_block_len / factor);
                int nr = cfg.lc_right_context / factor;
                seq = lc_blstm_layer(seq, params.layers[l], nc, nr);
                break;
            }
        }
    }
    return seq;
}

// Raw-frame count needed before listener output u (0-based) is final under
// streaming evaluation of the stack on a growing prefix. Layers are processed
// sequentially, so every latency-controlled layer adds its own block-plus-
// context horizon. Returns -1 if the output depends on the full sequence
// (a plain BLSTM layer); the sequence end always finalizes everything.
inline long frames_needed_for_output(const EncoderConfig& cfg, int u) {
    struct Stage {
        bool pyramid;
        Direction dir;
        int nc, nr;
    };
    std::vector<Stage> stages;
    int factor = 1;
    for (const auto& l : cfg.layers) {
        if (l.pyramid_input) factor *= 2;
        stages.push_back({l.pyramid_input, l.direction, std::max(1, cfg.lc_block_len / factor),
                          cfg.lc_right_context / factor});
    }
    // Walk top-down translating "output index <= need must be final" into a
    // requirement on each layer's input indices.
    long need = u;
    for (auto it = stages.rbegin(); it != stages.rend(); ++it) {
        if (it->dir == Direction::Bi) return -1;
        if (it->dir == Direction::LatencyControlled) {
            long block = need / it->nc;
            need = (block + 1) * static_cast<long>(it->nc) + it->nr - 1;
        }
        if (it->pyramid) need = 2 * need + 1;
    }
    return need + 1;  // count, not index
}

// Number of listener outputs that are final given `available` raw frames of a
// sequence of total length T (T known only at end-of-input; pass T when the
// source is exhausted, otherwise -1).
inline int usable_listener_outputs(const EncoderConfig& cfg, int available, int total) {
    int factor = cfg.time_reduction();
    int u_total = available / factor;  // upper bound on produced outputs so far
    if (total >= 0 && available >= total) {
        int u = total;
        for (const auto& l : cfg.layers)
            if (l.pyramid_input) u /= 2;
        return u;
    }
    int usable = 0;
    for (int u = 0; u < u_total; ++u) {
        long need = frames_needed_for_output(cfg, u);
        if (need < 0 || need > available) break;
        usable = u + 1;
    }
    return usable;
}

}  // namespace streamlas
