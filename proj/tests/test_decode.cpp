#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "streamlas/decode.hpp"
#include "streamlas/harness.hpp"

using namespace streamlas;

namespace {

// Tiny model: one unidirectional encoder layer, no pyramid, so U == T.
ModelConfig tiny_config(AttentionKind kind, int vocab = 4, Smoothing smoothing = Smoothing::None,
                        int smooth_w = 3) {
    ModelConfig cfg;
    cfg.feature_dim = 2;
    cfg.vocab = vocab;
    cfg.speller_hidden = 3;
    cfg.emb_dim = 2;
    cfg.attention.kind = kind;
    cfg.attention.energy_hidden = 3;
    cfg.attention.predictor_hidden = 3;
    cfg.attention.chunk_len = 2;
    cfg.attention.smoothing = smoothing;
    cfg.attention.smooth_w = smooth_w;
    cfg.encoder.layers = {{Direction::Uni, 3, false}};
    cfg.encoder.lc_block_len = 4;
    cfg.encoder.lc_right_context = 2;
    return cfg;
}

// Streamable toy shape: uni, uni+pyramid, lc+pyramid (4x reduction).
ModelConfig stream_config(AttentionKind kind, Smoothing smoothing = Smoothing::None,
                          int smooth_w = 3) {
    ModelConfig cfg;
    cfg.feature_dim = 3;
    cfg.vocab = 6;
    cfg.speller_hidden = 4;
    cfg.emb_dim = 3;
    cfg.attention.kind = kind;
    cfg.attention.energy_hidden = 4;
    cfg.attention.predictor_hidden = 3;
    cfg.attention.chunk_len = 3;
    cfg.attention.smoothing = smoothing;
    cfg.attention.smooth_w = smooth_w;
    cfg.encoder.layers = {{Direction::Uni, 3, false},
                          {Direction::Uni, 3, true},
                          {Direction::LatencyControlled, 3, true}};
    cfg.encoder.lc_block_len = 16;
    cfg.encoder.lc_right_context = 8;
    return cfg;
}

std::vector<real> random_frames(Rng& rng, int T, int d) {
    std::vector<real> v(static_cast<size_t>(T) * d);
    for (auto& e : v) e = static_cast<real>(rng.uniform(-1, 1));
    return v;
}

}  // namespace

TEST_CASE("speller step with zero output weights gives uniform log probs", "[speller]") {
    Rng rng(1);
    Model m(tiny_config(AttentionKind::Gsa, 2 + 3), rng);
    for (auto& v : m.speller.Wo->value) v = 0;
    for (auto& v : m.speller.bo->value) v = 0;
    SpellerState s = m.speller_cell(Model::kSos, m.initial_state(), m.initial_context());
    Var lp = log_softmax(m.output_logits(s, m.initial_context()));
    for (real v : lp->value) CHECK(v == Catch::Approx(std::log(1.0 / 5)).margin(1e-12));
}

TEST_CASE("speller holds the configured state size", "[speller]") {
    Rng rng(2);
    ModelConfig cfg = tiny_config(AttentionKind::Gsa);
    cfg.speller_hidden = 512;  // 1-layer decoder with 512 units
    Model m(cfg, rng);
    SpellerState s = m.speller_cell(Model::kSos, m.initial_state(), m.initial_context());
    CHECK(s.h->shape == std::vector<int>{512});
    CHECK(s.c->shape == std::vector<int>{512});
}

TEST_CASE("unknown token id raises an error", "[speller]") {
    Rng rng(3);
    Model m(tiny_config(AttentionKind::Gsa), rng);
    CHECK_THROWS_AS(m.embed(m.vocab()), DataError);
    CHECK_THROWS_AS(m.embed(-1), DataError);
}

TEST_CASE("greedy decoding stops at an immediate EOS", "[decode]") {
    Rng rng(4);
    Model m(tiny_config(AttentionKind::Gsa), rng);
    for (auto& v : m.speller.Wo->value) v = 0;
    for (auto& v : m.speller.bo->value) v = 0;
    m.speller.bo->value[Model::kEos] = 50;
    auto frames = random_frames(rng, 5, 2);
    auto res = greedy_decode(m, frames, 5);
    CHECK(res.transcript.empty());
    REQUIRE(res.trace.size() == 1);
    CHECK(res.trace[0].token == Model::kEos);
}

TEST_CASE("greedy follows a known argmax path", "[decode][oracle]") {
    Rng rng(5);
    Model m(tiny_config(AttentionKind::Gsa, 5), rng);
    for (auto& v : m.speller.Wo->value) v = 0;
    for (auto& v : m.speller.bo->value) v = 0;
    m.speller.bo->value[3] = 10;  // constant logits favor token 3 at every step
    auto frames = random_frames(rng, 4, 2);
    auto res = greedy_decode(m, frames, 4, {.max_len = 6});
    CHECK(res.transcript == std::vector<int>{3, 3, 3, 3, 3, 3});
    // ties break toward the lowest token id
    m.speller.bo->value[4] = 10;
    auto res2 = greedy_decode(m, frames, 4, {.max_len = 3});
    CHECK(res2.transcript == std::vector<int>{3, 3, 3});
}

TEST_CASE("beam width 1 at temperature 1 equals greedy", "[decode]") {
    Rng rng(6);
    int agree = 0;
    for (int trial = 0; trial < 40; ++trial) {
        AttentionKind kind = trial % 2 ? AttentionKind::Mocha : AttentionKind::Gsa;
        Model m(tiny_config(kind, 5), rng);
        int T = 3 + static_cast<int>(rng.uniform_int(0, 4));
        auto frames = random_frames(rng, T, 2);
        DecodeOptions o;
        o.beam = 1;
        o.temperature = 1.0;
        auto g = greedy_decode(m, frames, T, o);
        auto b = beam_search(m, frames, T, o);
        CHECK(g.transcript == b.transcript);
        CHECK(g.log_score == Catch::Approx(b.log_score).margin(1e-12));
        if (g.transcript == b.transcript) ++agree;
    }
    CHECK(agree == 40);
}

TEST_CASE("log scores are nonpositive at temperature 1", "[decode]") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        Model m(tiny_config(AttentionKind::Gsa, 4), rng);
        auto frames = random_frames(rng, 4, 2);
        auto res = beam_search(m, frames, 4, {.beam = 3});
        CHECK(res.log_score <= 0.0);
    }
}

TEST_CASE("very high temperature degenerates to tie-break order", "[decode]") {
    Rng rng(8);
    Model m(tiny_config(AttentionKind::Gsa, 4), rng);
    auto frames = random_frames(rng, 3, 2);
    DecodeOptions o;
    o.beam = 2;
    o.temperature = 1e9;
    auto res = beam_search(m, frames, 3, o);
    // per-step scores are all ~ln(1/V); the winner is the tie-break path:
    // EOS (lowest id among all tokens) freezes immediately and no open
    // hypothesis can beat it
    CHECK(res.transcript.empty());
}

TEST_CASE("beam search matches exhaustive search on a small model", "[decode][oracle]") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        Model m(tiny_config(AttentionKind::Gsa, 4), rng);
        // peaked output distribution: one clearly preferred token per model,
        // with EOS and the rest perturbed
        int fav = 2 + static_cast<int>(rng.uniform_int(0, 1));
        for (auto& v : m.speller.bo->value) v = static_cast<real>(rng.uniform(-0.5, 0.5));
        m.speller.bo->value[fav] += 3;
        int T = 3;
        auto frames = random_frames(rng, T, 2);
        DecodeOptions o;
        o.beam = 2;
        o.max_len = 3;

        // exhaustive: every token sequence of length <= 3; sequences are
        // scored exactly like the decoder scores them (log-softmax chain),
        // final score includes EOS when the sequence ends before max_len
        NoGradGuard ng;
        InferContext ctx = make_infer_context(m, m.listen_frames(frames, T));
        std::function<std::pair<double, std::vector<int>>(std::vector<int>&, SpellerState,
                                                          Var, double, int)>
            best_from = [&](std::vector<int>& prefix, SpellerState st, Var pctx, double score,
                            int depth) -> std::pair<double, std::vector<int>> {
            int prev = prefix.empty() ? Model::kSos : prefix.back();
            SpellerState s = m.speller_cell(prev, st, pctx);
            auto g = gsa_context(m.energy, s.h, ctx.H, ctx.keys_energy);
            Var lp = log_softmax(m.output_logits(s, g.context));
            std::pair<double, std::vector<int>> best{-1e300, {}};
            for (int tok = 0; tok < m.vocab(); ++tok) {
                double sc = score + lp->value[tok];
                if (tok == Model::kEos) {
                    if (sc > best.first) best = {sc, prefix};
                } else {
                    prefix.push_back(tok);
                    if (depth < o.max_len) {
                        auto sub = best_from(prefix, s, g.context, sc, depth + 1);
                        if (sub.first > best.first) best = sub;
                    } else if (sc > best.first) {
                        best = {sc, prefix};  // open sequence truncated at max_len
                    }
                    prefix.pop_back();
                }
            }
            return best;
        };
        std::vector<int> empty;
        auto exhaustive = best_from(empty, m.initial_state(), m.initial_context(), 0.0, 1);
        auto beam = beam_search(m, frames, T, o);
        CHECK(beam.log_score == Catch::Approx(exhaustive.first).margin(1e-9));
    }
}

TEST_CASE("wider beams never lower the best found score", "[decode]") {
    Rng rng(10);
    int models = 0;
    for (int trial = 0; trial < 100; ++trial) {
        AttentionKind kind = trial % 2 ? AttentionKind::Mocha : AttentionKind::Gsa;
        Model m(tiny_config(kind, 4), rng);
        int T = 3 + static_cast<int>(rng.uniform_int(0, 2));
        auto frames = random_frames(rng, T, 2);
        double last = -1e300;
        bool monotone = true;
        for (int beam : {1, 2, 4}) {
            DecodeOptions o;
            o.beam = beam;
            o.max_len = 4;
            auto res = beam_search(m, frames, T, o);
            if (res.log_score < last - 1e-12) monotone = false;
            last = res.log_score;
        }
        CHECK(monotone);
        ++models;
    }
    CHECK(models >= 100);
}

TEST_CASE("monotonic boundaries never decrease along a decode", "[decode]") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto kind = trial % 2 ? AttentionKind::Amocha : AttentionKind::Mocha;
        Model m(tiny_config(kind, 5), rng);
        int T = 4 + static_cast<int>(rng.uniform_int(0, 4));
        auto frames = random_frames(rng, T, 2);
        auto res = greedy_decode(m, frames, T);
        int prev = 0;
        for (const auto& t : res.trace) {
            CHECK(t.boundary_u >= prev);
            prev = t.boundary_u;
        }
    }
}

TEST_CASE("streaming equals offline greedy decoding", "[decode][oracle]") {
    Rng rng(12);
    int checked = 0;
    for (int trial = 0; trial < 30; ++trial) {
        AttentionKind kind = trial % 3 == 2 ? AttentionKind::Amocha : AttentionKind::Mocha;
        Smoothing sm = trial % 2 ? Smoothing::M2 : Smoothing::None;
        Model m(stream_config(kind, sm, 3), rng);
        int T = 8 + static_cast<int>(rng.uniform_int(0, 56));
        auto frames = random_frames(rng, T, 3);
        auto offline = greedy_decode(m, frames, T);
        auto streamed = streaming_decode(m, frames_as_source(frames, T, 3));
        CHECK(offline.transcript == streamed.transcript);
        if (offline.transcript == streamed.transcript) ++checked;
        // boundaries also agree row by row
        REQUIRE(offline.trace.size() == streamed.trace.size());
        for (size_t i = 0; i < offline.trace.size(); ++i) {
            CHECK(offline.trace[i].token == streamed.trace[i].token);
            CHECK(offline.trace[i].boundary_u == streamed.trace[i].boundary_u);
        }
    }
    CHECK(checked == 30);
}

TEST_CASE("streaming respects the hard latency bound", "[decode]") {
    Rng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        AttentionKind kind = trial % 3 == 2 ? AttentionKind::Amocha : AttentionKind::Mocha;
        Smoothing sm = trial % 2 ? Smoothing::M2 : Smoothing::None;
        Model m(stream_config(kind, sm, 3), rng);
        int T = 8 + static_cast<int>(rng.uniform_int(0, 56));
        auto frames = random_frames(rng, T, 3);
        auto streamed = streaming_decode(m, frames_as_source(frames, T, 3));
        CHECK(latency_bound_violations(m.cfg, streamed.trace) == 0);
        long prev = 0;
        for (const auto& t : streamed.trace) {
            CHECK(t.frames_consumed >= prev);  // nondecreasing
            prev = t.frames_consumed;
        }
    }
}

TEST_CASE("streaming edge cases", "[decode]") {
    Rng rng(14);
    Model m(stream_config(AttentionKind::Mocha), rng);

    // empty input: empty output, empty trace, no error
    auto empty = streaming_decode(m, []() -> std::optional<std::vector<real>> {
        return std::nullopt;
    });
    CHECK(empty.transcript.empty());
    CHECK(empty.trace.empty());
    CHECK_FALSE(empty.source_error);

    // source failure: partial trace with the error mark
    int count = 0;
    auto failing = [&count]() -> std::optional<std::vector<real>> {
        if (++count > 10) throw DataError("device unplugged");
        return std::vector<real>(3, real(0.1));
    };
    auto res = streaming_decode(m, failing);
    CHECK(res.source_error);
    CHECK(res.error.find("device unplugged") != std::string::npos);

    // soft attention cannot stream
    ModelConfig gsa_cfg = stream_config(AttentionKind::Mocha);
    gsa_cfg.attention.kind = AttentionKind::Gsa;
    Rng rng2(15);
    Model gsa(gsa_cfg, rng2);
    std::vector<real> zeros_buf(30, real(0));
    CHECK_THROWS_AS(streaming_decode(gsa, frames_as_source(zeros_buf, 10, 3)), DataError);
}
