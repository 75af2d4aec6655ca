#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "streamlas/encoder.hpp"

using namespace streamlas;

namespace {

Var random_seq(Rng& rng, int T, int d, real scale = 1.0) {
    std::vector<real> v(static_cast<size_t>(T) * d);
    for (auto& e : v) e = static_cast<real>(rng.uniform(-scale, scale));
    return make_tensor({T, d}, v);
}

oracles::RefLstm to_ref(const LstmParams& p, int in) {
    oracles::RefLstm r;
    r.in = in;
    r.h = p.b->shape[0] / 4;
    r.W.assign(p.W->value.begin(), p.W->value.end());
    r.b.assign(p.b->value.begin(), p.b->value.end());
    return r;
}

std::vector<std::vector<double>> to_rows(const Var& seq) {
    std::vector<std::vector<double>> rows(seq->shape[0]);
    int d = seq->shape[1];
    for (int t = 0; t < seq->shape[0]; ++t)
        rows[t].assign(seq->value.begin() + t * d, seq->value.begin() + (t + 1) * d);
    return rows;
}

}  // namespace

TEST_CASE("lstm_step zero cases", "[encoder]") {
    Rng rng(1);
    LstmParams p{zeros({8, 3}, true), zeros({8}, true)};  // h=2, in=1
    auto [h, c] = lstm_step(p, make_tensor({1}, {2.5}), zeros({2}), zeros({2}));
    for (real v : h->value) CHECK(v == 0.0);
    for (real v : c->value) CHECK(v == 0.0);

    LstmParams q = make_lstm_params(3, 2, rng);
    // zero input, zero state, zero biases: pre-activations are all zero
    auto [h2, c2] = lstm_step(q, zeros({3}), zeros({2}), zeros({2}));
    for (real v : h2->value) CHECK(v == 0.0);
}

TEST_CASE("lstm_step matches an explicit gate-formula reference", "[encoder][oracle]") {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        LstmParams p = make_lstm_params(3, 4, rng);
        std::vector<real> xv(3), hv(4), cv(4);
        for (auto& v : xv) v = static_cast<real>(rng.uniform(-1, 1));
        for (auto& v : hv) v = static_cast<real>(rng.uniform(-1, 1));
        for (auto& v : cv) v = static_cast<real>(rng.uniform(-1, 1));
        auto [h, c] = lstm_step(p, make_tensor({3}, xv), make_tensor({4}, hv),
                                make_tensor({4}, cv));
        auto ref = to_ref(p, 3);
        std::vector<double> rh(hv.begin(), hv.end()), rc(cv.begin(), cv.end());
        std::vector<double> rx(xv.begin(), xv.end());
        oracles::ref_lstm_step(ref, rx, rh, rc);
        for (int j = 0; j < 4; ++j) {
            CHECK(std::abs(h->value[j] - rh[j]) < 1e-12);
            CHECK(std::abs(c->value[j] - rc[j]) < 1e-12);
        }
    }
}

TEST_CASE("pyramid_reduce pairs frames and drops the odd tail", "[encoder]") {
    Var seq = make_tensor({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Var out = pyramid_reduce(seq);
    REQUIRE(out->shape == std::vector<int>{2, 4});
    CHECK(out->value == std::vector<real>{1, 2, 3, 4, 5, 6, 7, 8});

    Var odd = make_tensor({3, 1}, {1, 2, 3});
    Var out2 = pyramid_reduce(odd);
    REQUIRE(out2->shape == std::vector<int>{1, 2});
    CHECK(out2->value == std::vector<real>{1, 2});

    // two pyramid stages: length 8 -> 2 (4x subsampled)
    Var eight = make_tensor({8, 1}, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(pyramid_reduce(pyramid_reduce(eight))->shape == std::vector<int>{2, 4});

    CHECK_THROWS_AS(pyramid_reduce(make_tensor({1, 2}, {1, 2})), ShapeError);
}

TEST_CASE("lc_arrange tiles the sequence", "[encoder]") {
    auto blocks = lc_arrange(6, 2, 1);
    REQUIRE(blocks.size() == 3);
    CHECK(blocks[0].begin == 0);
    CHECK(blocks[0].end == 3);
    CHECK(blocks[1].begin == 2);
    CHECK(blocks[1].end == 5);
    CHECK(blocks[2].begin == 4);
    CHECK(blocks[2].end == 6);
    for (const auto& b : blocks) CHECK(b.mid_end - b.begin <= 2);

    auto one = lc_arrange(5, 64, 32);
    REQUIRE(one.size() == 1);
    CHECK(one[0].begin == 0);
    CHECK(one[0].mid_end == 5);
    CHECK(one[0].end == 5);

    CHECK_THROWS_AS(lc_arrange(5, 0, 1), ShapeError);
    CHECK_THROWS_AS(lc_arrange(5, 2, -1), ShapeError);
}

TEST_CASE("lc_blstm_layer degenerates to blstm_layer when Nc >= T", "[encoder]") {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        int T = 3 + trial;
        EncoderLayerParams p{make_lstm_params(2, 3, rng), make_lstm_params(2, 3, rng)};
        Var seq = random_seq(rng, T, 2);
        Var full = blstm_layer(seq, p);
        Var lc = lc_blstm_layer(seq, p, T + trial, 2);
        REQUIRE(full->shape == lc->shape);
        for (size_t i = 0; i < full->numel(); ++i)
            CHECK(std::abs(full->value[i] - lc->value[i]) < 1e-12);
    }
}

TEST_CASE("lc_blstm_layer with Nr=0 differs from blstm in general", "[encoder]") {
    Rng rng(4);
    EncoderLayerParams p{make_lstm_params(2, 3, rng), make_lstm_params(2, 3, rng)};
    Var seq = random_seq(rng, 8, 2);
    Var full = blstm_layer(seq, p);
    Var lc = lc_blstm_layer(seq, p, 4, 0);
    real maxdiff = 0;
    for (size_t i = 0; i < full->numel(); ++i)
        maxdiff = std::max(maxdiff, std::abs(full->value[i] - lc->value[i]));
    CHECK(maxdiff > 1e-6);
}

TEST_CASE("lc_blstm_layer matches a per-block recomputation oracle", "[encoder][oracle]") {
    Rng rng(5);
    int T = 8, Nc = 4, Nr = 2, d = 3, H = 4;
    EncoderLayerParams p{make_lstm_params(d, H, rng), make_lstm_params(d, H, rng)};
    Var seq = random_seq(rng, T, d);
    Var lc = lc_blstm_layer(seq, p, Nc, Nr);

    auto rows = to_rows(seq);
    auto fwd_ref = to_ref(p.fwd, d);
    auto bwd_ref = to_ref(p.bwd, d);
    auto fwd = oracles::ref_lstm_run(fwd_ref, rows, 0, T, false);
    for (int begin = 0; begin < T; begin += Nc) {
        int end = std::min(begin + Nc + Nr, T);
        int mid = std::min(begin + Nc, T);
        auto bwd = oracles::ref_lstm_run(bwd_ref, rows, begin, end, true);
        for (int t = begin; t < mid; ++t) {
            const auto& b = bwd[end - 1 - t];
            for (int j = 0; j < H; ++j) {
                CHECK(std::abs(lc->value[t * 2 * H + j] - fwd[t][j]) < 1e-12);
                CHECK(std::abs(lc->value[t * 2 * H + H + j] - b[j]) < 1e-12);
            }
        }
    }
}

TEST_CASE("forward halves agree between lc and full blstm for any blocking", "[encoder]") {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        int T = 5 + static_cast<int>(rng.uniform_int(0, 6));
        int Nc = 1 + static_cast<int>(rng.uniform_int(0, 5));
        int Nr = static_cast<int>(rng.uniform_int(0, 4));
        int H = 3;
        EncoderLayerParams p{make_lstm_params(2, H, rng), make_lstm_params(2, H, rng)};
        Var seq = random_seq(rng, T, 2);
        Var full = blstm_layer(seq, p);
        Var lc = lc_blstm_layer(seq, p, Nc, Nr);
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < H; ++j)
                CHECK(std::abs(full->value[t * 2 * H + j] - lc->value[t * 2 * H + j]) < 1e-12);
    }
}

TEST_CASE("frames beyond a block's right context never change its outputs", "[encoder]") {
    Rng rng(7);
    int T = 12, Nc = 4, Nr = 2, H = 3;
    EncoderLayerParams p{make_lstm_params(2, H, rng), make_lstm_params(2, H, rng)};
    std::vector<real> base(static_cast<size_t>(T) * 2);
    for (auto& v : base) v = static_cast<real>(rng.uniform(-1, 1));
    Var out1 = lc_blstm_layer(make_tensor({T, 2}, base), p, Nc, Nr);

    // perturb all frames at t >= Nc + Nr; block 0 outputs must be bitwise equal
    std::vector<real> pert = base;
    for (int t = Nc + Nr; t < T; ++t)
        for (int j = 0; j < 2; ++j) pert[t * 2 + j] += static_cast<real>(rng.uniform(1, 2));
    Var out2 = lc_blstm_layer(make_tensor({T, 2}, pert), p, Nc, Nr);
    for (int t = 0; t < Nc; ++t)
        for (int j = 0; j < 2 * H; ++j)
            CHECK(out1->value[t * 2 * H + j] == out2->value[t * 2 * H + j]);
}

TEST_CASE("listen applies the stack in order", "[encoder]") {
    Rng rng(8);
    // default-shaped stack: 4 layers, pyramid input on layers 3 and 4
    EncoderConfig cfg;
    cfg.layers = {{Direction::Bi, 8, false},
                  {Direction::Bi, 8, false},
                  {Direction::Bi, 8, true},
                  {Direction::Bi, 8, true}};
    EncoderParams params;
    int in = 5;
    for (const auto& l : cfg.layers) {
        if (l.pyramid_input) in *= 2;
        params.layers.push_back(
            {make_lstm_params(in, l.hidden, rng), make_lstm_params(in, l.hidden, rng)});
        in = 2 * l.hidden;
    }
    Var x = random_seq(rng, 40, 5);
    Var h = listen(x, cfg, params);
    CHECK(h->shape == std::vector<int>{10, 16});  // 4x subsampled
    CHECK(cfg.time_reduction() == 4);

    // single unidirectional layer: shape (T, hidden)
    EncoderConfig uni;
    uni.layers = {{Direction::Uni, 3, false}};
    EncoderParams up;
    up.layers.push_back({make_lstm_params(2, 3, rng), {}});
    CHECK(listen(random_seq(rng, 6, 2), uni, up)->shape == std::vector<int>{6, 3});

    // too short for the pyramid
    CHECK_THROWS_AS(listen(random_seq(rng, 1, 5), cfg, params), ShapeError);
}

TEST_CASE("LC stack with Nc >= T equals the BLSTM stack", "[encoder][oracle]") {
    Rng rng(9);
    EncoderConfig bi_cfg, lc_cfg;
    bi_cfg.layers = {{Direction::Bi, 4, false}, {Direction::Bi, 4, true}};
    lc_cfg.layers = {{Direction::LatencyControlled, 4, false},
                     {Direction::LatencyControlled, 4, true}};
    lc_cfg.lc_block_len = 1000;
    lc_cfg.lc_right_context = 0;
    EncoderParams params;
    int in = 3;
    for (const auto& l : bi_cfg.layers) {
        if (l.pyramid_input) in *= 2;
        params.layers.push_back(
            {make_lstm_params(in, l.hidden, rng), make_lstm_params(in, l.hidden, rng)});
        in = 2 * l.hidden;
    }
    Var x = random_seq(rng, 10, 3);
    Var a = listen(x, bi_cfg, params);
    Var b = listen(x, lc_cfg, params);
    REQUIRE(a->shape == b->shape);
    for (size_t i = 0; i < a->numel(); ++i) CHECK(std::abs(a->value[i] - b->value[i]) < 1e-10);
}

TEST_CASE("streaming horizon arithmetic", "[encoder]") {
    // single latency-controlled top layer after two pyramid stages
    EncoderConfig cfg;
    cfg.layers = {{Direction::Uni, 8, false},
                  {Direction::Uni, 8, true},
                  {Direction::LatencyControlled, 8, true}};
    cfg.lc_block_len = 64;
    cfg.lc_right_context = 32;
    // listener outputs 0..15 live in top-layer block 0: final once
    // 4*(16*1 + 8) = 96 raw frames are available
    CHECK(frames_needed_for_output(cfg, 0) == 96);
    CHECK(frames_needed_for_output(cfg, 15) == 96);
    CHECK(frames_needed_for_output(cfg, 16) == 160);
    CHECK(usable_listener_outputs(cfg, 95, -1) == 0);
    CHECK(usable_listener_outputs(cfg, 96, -1) == 16);
    CHECK(usable_listener_outputs(cfg, 120, 120) == 30);  // end of input finalizes all

    EncoderConfig bi;
    bi.layers = {{Direction::Bi, 8, false}};
    CHECK(frames_needed_for_output(bi, 0) == -1);
    CHECK(usable_listener_outputs(bi, 50, -1) == 0);
}
