#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "streamlas/speller.hpp"

// Greedy, beam and streaming decoders. All three share one inference
// attention core so that beam width 1 at temperature 1 reproduces greedy
// exactly and the streaming decoder makes the same boundary decisions as the
// offline greedy decoder, just delayed until the required listener outputs
// are final.

namespace streamlas {

struct StreamToken {
    int token;
    int boundary_u;        // 1-based listener position (U for a forced end)
    int chunk_len;         // chunk length used; 0 where not applicable
    long frames_consumed;  // raw frames read from the source at emission time
};

struct DecodeResult {
    std::vector<int> transcript;  // token ids without SOS/EOS
    double log_score = 0;
    std::vector<StreamToken> trace;            // one entry per emission, EOS included
    std::vector<std::vector<real>> alphas;     // per-step soft attention rows (optional)
    bool source_error = false;
    std::string error;
};

struct DecodeOptions {
    int beam = 5;
    double temperature = 1.0;
    int max_len = 0;  // 0: listener length + 10
    bool capture_alpha = false;
};

// ---------------------------------------------------------------------------
// shared inference context

struct InferContext {
    const Model* model = nullptr;
    Var H;
    Var keys_energy;
    Var keys_mono;
    Var keys_pred;
    int U = 0;
};

inline InferContext make_infer_context(const Model& m, const Var& H) {
    InferContext c;
    c.model = &m;
    c.H = H;
    c.U = H->shape[0];
    c.keys_energy = precompute_keys(H, m.energy.Wh);
    if (m.mono) {
        Var Hm = m.cfg.attention.smoothing == Smoothing::M1
                     ? smooth_features_m1(H, m.cfg.attention.smooth_w)
                     : H;
        c.keys_mono = precompute_keys(Hm, m.mono->Wh);
    }
    if (m.predictor) c.keys_pred = precompute_keys(H, m.predictor->Wh);
    return c;
}

struct MonoAttend {
    enum class Status { Found, NeedInput, Exhausted };
    Status status = Status::Exhausted;
    int boundary = 0;  // 1-based
    int chunk_len = 0;
    Var context;
};

// Hard monotonic boundary search starting (inclusively) at the previous
// boundary. With M1/M2 the test at position u needs w-1 future positions;
// before end-of-input those must all be final, at end-of-input the window is
// clipped at the sequence end exactly as in training.
inline MonoAttend attend_monotonic(const InferContext& c, const Var& s, int start_u, bool at_end) {
    const Model& m = *c.model;
    const auto& att = m.cfg.attention;
    Var e = monotonic_energy_rows(*m.mono, s, c.keys_mono);
    std::vector<real> p(c.U);
    for (int i = 0; i < c.U; ++i)
        p[i] = e->value[i] >= 0 ? real(1) / (real(1) + std::exp(-e->value[i]))
                                : std::exp(e->value[i]) / (real(1) + std::exp(e->value[i]));
    int w = att.lookahead_w();
    int last_testable = at_end ? c.U : c.U - w + 1;
    for (int u = std::max(1, start_u); u <= last_testable; ++u) {
        int hi = std::min(c.U, u + w - 1);
        real acc = 0;
        for (int k = u; k <= hi; ++k) acc += p[k - 1];
        real phat = acc / static_cast<real>(hi - u + 1);
        if (phat > real(0.5)) {
            MonoAttend out;
            out.status = MonoAttend::Status::Found;
            out.boundary = u;
            int W = att.chunk_len;
            if (m.predictor) {
                real cap = std::log(static_cast<real>(c.U)) + real(1);
                Var h_u = row(c.H, u - 1);
                Var wraw = m.predictor->mode == PredictorMode::Constrained
                               ? predict_chunk_constrained(*m.predictor, s, h_u)
                               : predict_chunk_unconstrained(*m.predictor, s, h_u, cap);
                W = chunk_length_to_int(wraw->value[0]);
            }
            out.chunk_len = W;
            out.context = chunk_context(m.energy, s, c.H, u, W).context;
            return out;
        }
    }
    MonoAttend out;
    out.status = at_end ? MonoAttend::Status::Exhausted : MonoAttend::Status::NeedInput;
    return out;
}

namespace detail {

inline std::vector<real> log_probs(const Var& logits, double temperature) {
    Var scaled = temperature == 1.0 ? logits : smul(logits, real(1.0 / temperature));
    return log_softmax(scaled)->value;
}

inline int argmax_lowest(const std::vector<real>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// greedy decoding

inline DecodeResult greedy_decode(const Model& m, const std::vector<real>& frames, int T,
                                  const DecodeOptions& opts = {}) {
    NoGradGuard ng;
    DecodeResult res;
    Var H = m.listen_frames(frames, T);
    InferContext ctx = make_infer_context(m, H);
    int max_len = opts.max_len > 0 ? opts.max_len : ctx.U + 10;

    SpellerState st = m.initial_state();
    Var prev_ctx = m.initial_context();
    MonotonicState mono;
    int prev_tok = Model::kSos;
    for (int step = 0; step < max_len; ++step) {
        SpellerState s = m.speller_cell(prev_tok, st, prev_ctx);
        Var context;
        int boundary = 0, chunk = 0;
        bool forced_eos = false;
        if (m.cfg.attention.kind == AttentionKind::Gsa) {
            auto g = gsa_context(m.energy, s.h, ctx.H, ctx.keys_energy);
            context = g.context;
            boundary = 1 + detail::argmax_lowest(g.alpha->value);
            if (opts.capture_alpha) res.alphas.push_back(g.alpha->value);
        } else {
            auto a = attend_monotonic(ctx, s.h, std::max(1, mono.last_boundary), true);
            if (a.status == MonoAttend::Status::Found) {
                context = a.context;
                boundary = a.boundary;
                chunk = a.chunk_len;
                mono.last_boundary = a.boundary;
            } else {
                context = m.initial_context();  // scan exhausted: zero context, force EOS
                boundary = ctx.U;
                forced_eos = true;
            }
        }
        auto lp = detail::log_probs(m.output_logits(s, context), opts.temperature);
        int tok = forced_eos ? Model::kEos : detail::argmax_lowest(lp);
        res.log_score += lp[tok];
        res.trace.push_back({tok, boundary, chunk, T});
        if (tok == Model::kEos) return res;
        res.transcript.push_back(tok);
        st = s;
        prev_ctx = context;
        prev_tok = tok;
    }
    return res;
}

// ---------------------------------------------------------------------------
// beam search

// Partial decode: token sequence (starting at SOS), accumulated log score,
// speller state and attention state including the last attended boundary.
struct Hypothesis {
    std::vector<int> tokens;
    double log_score = 0;
    SpellerState state;
    MonotonicState attn;
    Var last_context;
    std::vector<StreamToken> trace;
    bool finished = false;
};

// Length-synchronous beam search. Per-step scores are log-softmax of
// logits/temperature; EOS extensions compete for beam slots like any other
// token and the winners are frozen. The search stops when the best frozen
// hypothesis scores at least as well as every open one, which is exact
// because extension can only lower a total log score.
inline DecodeResult beam_search(const Model& m, const std::vector<real>& frames, int T,
                                const DecodeOptions& opts = {}) {
    NoGradGuard ng;
    Var H = m.listen_frames(frames, T);
    InferContext ctx = make_infer_context(m, H);
    int max_len = opts.max_len > 0 ? opts.max_len : ctx.U + 10;
    int beam = std::max(1, opts.beam);

    Hypothesis root;
    root.tokens = {Model::kSos};
    root.state = m.initial_state();
    root.last_context = m.initial_context();
    std::vector<Hypothesis> open{root};
    std::optional<Hypothesis> best_frozen;

    auto freeze = [&](Hypothesis&& h) {
        if (!best_frozen || h.log_score > best_frozen->log_score) best_frozen = std::move(h);
    };

    for (int len = 0; len < max_len && !open.empty(); ++len) {
        struct Cand {
            double score;
            size_t parent;
            int token;
            bool forced;
        };
        std::vector<Cand> cands;
        std::vector<SpellerState> states(open.size());
        std::vector<Var> contexts(open.size());
        std::vector<MonoAttend> attends(open.size());
        std::vector<std::vector<real>> lps(open.size());
        for (size_t i = 0; i < open.size(); ++i) {
            Hypothesis& h = open[i];
            SpellerState s = m.speller_cell(h.tokens.back(), h.state, h.last_context);
            states[i] = s;
            bool forced_eos = false;
            if (m.cfg.attention.kind == AttentionKind::Gsa) {
                contexts[i] = gsa_context(m.energy, s.h, ctx.H, ctx.keys_energy).context;
            } else {
                attends[i] = attend_monotonic(ctx, s.h, std::max(1, h.attn.last_boundary), true);
                if (attends[i].status == MonoAttend::Status::Found) {
                    contexts[i] = attends[i].context;
                } else {
                    contexts[i] = m.initial_context();  // scan exhausted: zero context
                    forced_eos = true;
                }
            }
            lps[i] = detail::log_probs(m.output_logits(s, contexts[i]), opts.temperature);
            if (forced_eos) {
                cands.push_back({h.log_score + lps[i][Model::kEos], i, Model::kEos, true});
                continue;
            }
            for (int tok = 0; tok < m.vocab(); ++tok)
                cands.push_back({h.log_score + lps[i][tok], i, tok, false});
        }
        // Stable order: generation order is (parent, token id ascending), so a
        // stable sort resolves score ties toward earlier parents / lower ids.
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Cand& a, const Cand& b) { return a.score > b.score; });
        std::vector<Hypothesis> next;
        int slots = 0;
        for (const auto& cand : cands) {
            if (slots >= beam) break;
            ++slots;
            const Hypothesis& h = open[cand.parent];
            Hypothesis child;
            child.tokens = h.tokens;
            child.tokens.push_back(cand.token);
            child.log_score = cand.score;
            child.state = states[cand.parent];
            child.last_context = contexts[cand.parent];
            child.attn = h.attn;
            child.trace = h.trace;
            if (m.cfg.attention.kind != AttentionKind::Gsa) {
                const auto& a = attends[cand.parent];
                int boundary = cand.forced ? ctx.U : a.boundary;
                if (!cand.forced) child.attn.last_boundary = a.boundary;
                child.trace.push_back({cand.token, boundary, cand.forced ? 0 : a.chunk_len, T});
            } else {
                child.trace.push_back({cand.token, 0, 0, T});
            }
            if (cand.token == Model::kEos) {
                child.finished = true;
                freeze(std::move(child));
            } else {
                next.push_back(std::move(child));
            }
        }
        open = std::move(next);
        if (best_frozen && (open.empty() || best_frozen->log_score >= open.front().log_score))
            break;
    }

    const Hypothesis* winner = nullptr;
    if (best_frozen && (open.empty() || best_frozen->log_score >= open.front().log_score))
        winner = &*best_frozen;
    else if (!open.empty())
        winner = &open.front();
    else if (best_frozen)
        winner = &*best_frozen;

    DecodeResult res;
    if (!winner) return res;
    res.log_score = winner->log_score;
    res.trace = winner->trace;
    for (size_t i = 1; i < winner->tokens.size(); ++i)
        if (winner->tokens[i] != Model::kEos) res.transcript.push_back(winner->tokens[i]);
    return res;
}

// ---------------------------------------------------------------------------
// streaming decoding

// Pull-based frame source: returns a frame, or nullopt at end of input, or
// throws DataError on failure.
using FrameSource = std::function<std::optional<std::vector<real>>()>;

inline FrameSource frames_as_source(const std::vector<real>& frames, int T, int d) {
    auto pos = std::make_shared<int>(0);
    return [&frames, T, d, pos]() -> std::optional<std::vector<real>> {
        if (*pos >= T) return std::nullopt;
        std::vector<real> f(frames.begin() + *pos * d, frames.begin() + (*pos + 1) * d);
        ++*pos;
        return f;
    };
}

// Consumes frames incrementally, re-running the encoder whenever a completed
// block makes more listener outputs final, and extends a greedy decode
// whenever the monotonic boundary test succeeds within the final outputs.
// Requires a monotonic attention kind; the encoder stack determines the
// per-output lookahead (a full BLSTM layer forces everything to the end).
inline DecodeResult streaming_decode(const Model& m, FrameSource source,
                                     const DecodeOptions& opts = {}) {
    if (m.cfg.attention.kind == AttentionKind::Gsa)
        throw DataError("streaming_decode: global soft attention cannot stream");
    NoGradGuard ng;
    DecodeResult res;
    std::vector<real> frames;
    int d = m.cfg.feature_dim;
    long R = 0;
    bool eof = false;

    SpellerState st = m.initial_state();
    Var prev_ctx = m.initial_context();
    MonotonicState mono;
    int prev_tok = Model::kSos;
    bool done = false;
    int usable = 0;
    InferContext ctx;
    std::optional<SpellerState> pending;  // speller state awaiting a boundary

    auto process = [&](bool at_end) {
        if (usable == 0 && !at_end) return;
        int max_total = at_end ? ctx.U + 10 : usable + 10;
        if (opts.max_len > 0) max_total = opts.max_len;
        while (!done) {
            if (static_cast<int>(res.trace.size()) >= max_total) break;
            if (!pending) pending = m.speller_cell(prev_tok, st, prev_ctx);
            auto a = attend_monotonic(ctx, pending->h, std::max(1, mono.last_boundary), at_end);
            if (a.status == MonoAttend::Status::NeedInput) break;
            Var context;
            int boundary, chunk = 0;
            bool forced_eos = false;
            if (a.status == MonoAttend::Status::Found) {
                context = a.context;
                boundary = a.boundary;
                chunk = a.chunk_len;
            } else {
                context = m.initial_context();
                boundary = ctx.U;
                forced_eos = true;
            }
            auto lp = detail::log_probs(m.output_logits(*pending, context), opts.temperature);
            int tok = forced_eos ? Model::kEos : detail::argmax_lowest(lp);
            res.log_score += lp[tok];
            res.trace.push_back({tok, boundary, chunk, R});
            if (a.status == MonoAttend::Status::Found) mono.last_boundary = a.boundary;
            if (tok == Model::kEos) {
                done = true;
                break;
            }
            res.transcript.push_back(tok);
            st = *pending;
            pending.reset();
            prev_ctx = context;
            prev_tok = tok;
        }
    };

    while (!eof && !done) {
        std::optional<std::vector<real>> f;
        try {
            f = source();
        } catch (const DataError& e) {
            res.source_error = true;
            res.error = e.what();
            return res;
        }
        if (!f) {
            eof = true;
            break;
        }
        if (static_cast<int>(f->size()) != d)
            throw ShapeError("streaming_decode: frame has " + std::to_string(f->size()) +
                             " dims, expected " + std::to_string(d));
        frames.insert(frames.end(), f->begin(), f->end());
        ++R;
        int now = usable_listener_outputs(m.cfg.encoder, static_cast<int>(R), -1);
        if (now > usable) {
            usable = now;
            Var H = m.listen_frames(frames, static_cast<int>(R));
            ctx = make_infer_context(m, slice_rows(H, 0, usable));
            // pending speller state is unaffected by new listener outputs
            process(false);
        }
    }
    if (R == 0) return res;  // empty input: empty output, empty trace
    if (!done) {
        Var H = m.listen_frames(frames, static_cast<int>(R));
        ctx = make_infer_context(m, H);
        usable = ctx.U;
        process(true);
    }
    return res;
}

}  // namespace streamlas
