#pragma once

#include <optional>
#include <string>
#include <vector>

#include "streamlas/attention.hpp"
#include "streamlas/encoder.hpp"
#include "streamlas/tensor.hpp"

// Model assembly: listener + attender + speller with a flat named parameter
// registry used by the optimizer, checkpoints and transfer initialization.
// The chunk soft-attention energy shares its parameter keys with the global
// soft attention energy, so a trained soft-attention baseline transfers
// directly into the monotonic variants (fresh parts stay freshly
// initialized).

namespace streamlas {

struct AttentionConfig {
    AttentionKind kind = AttentionKind::Gsa;
    int chunk_len = 10;  // fixed chunk length W
    Smoothing smoothing = Smoothing::None;
    int smooth_w = 10;
    int energy_hidden = 512;
    int predictor_hidden = 512;
    PredictorMode predictor_mode = PredictorMode::Constrained;
    Activation predictor_activation = Activation::Relu;
    int wmax = 40;
    bool sigmoid_noise = false;  // additive pre-sigmoid noise during training
    double sigmoid_noise_std = 1.0;

    int lookahead_w() const { return smoothing == Smoothing::None ? 1 : smooth_w; }
};

struct ModelConfig {
    EncoderConfig encoder;
    AttentionConfig attention;
    int speller_hidden = 512;
    int emb_dim = 256;
    int vocab = 6812;  // includes SOS / EOS / UNK
    int feature_dim = 200;
};

struct SpellerParams {
    Var emb;  // [vocab, emb_dim]
    LstmParams rnn;
    Var Wo;  // [vocab, speller_hidden + d_enc]
    Var bo;  // [vocab]
};

struct SpellerState {
    Var h, c;
};

class Model {
public:
    static constexpr int kSos = 0;
    static constexpr int kEos = 1;
    static constexpr int kUnk = 2;

    ModelConfig cfg;
    EncoderParams encoder_params;
    AdditiveEnergyParams energy;  // soft attention / chunk energies
    std::optional<MonotonicEnergyParams> mono;
    std::optional<ChunkPredictorParams> predictor;
    SpellerParams speller;

    Model(ModelConfig config, Rng& rng) : cfg(std::move(config)) {
        int in = cfg.feature_dim;
        for (size_t l = 0; l < cfg.encoder.layers.size(); ++l) {
            const auto& spec = cfg.encoder.layers[l];
            if (spec.pyramid_input) in *= 2;
            EncoderLayerParams lp;
            lp.fwd = make_lstm_params(in, spec.hidden, rng);
            reg("encoder.l" + std::to_string(l) + ".fwd.W", lp.fwd.W);
            reg("encoder.l" + std::to_string(l) + ".fwd.b", lp.fwd.b);
            if (spec.direction != Direction::Uni) {
                lp.bwd = make_lstm_params(in, spec.hidden, rng);
                reg("encoder.l" + std::to_string(l) + ".bwd.W", lp.bwd.W);
                reg("encoder.l" + std::to_string(l) + ".bwd.b", lp.bwd.b);
            }
            encoder_params.layers.push_back(lp);
            in = spec.direction == Direction::Uni ? spec.hidden : 2 * spec.hidden;
        }
        d_enc_ = in;

        int A = cfg.attention.energy_hidden;
        int S = cfg.speller_hidden;
        energy.Wh = make_param({A, d_enc_}, rng);
        energy.Ws = make_param({A, S}, rng);
        energy.V = make_param({A}, rng);
        energy.b = zeros({A}, true);
        reg("attention.energy.Wh", energy.Wh);
        reg("attention.energy.Ws", energy.Ws);
        reg("attention.energy.V", energy.V);
        reg("attention.energy.b", energy.b);

        if (cfg.attention.kind != AttentionKind::Gsa) {
            MonotonicEnergyParams mp;
            mp.Wh = make_param({A, d_enc_}, rng);
            mp.Ws = make_param({A, S}, rng);
            mp.v = make_param({A}, rng);
            mp.b = zeros({A}, true);
            mp.g = make_tensor({1}, {real(1)}, true);
            mp.r = make_tensor({1}, {real(-1)}, true);
            mono = mp;
            reg("attention.mono.Wh", mp.Wh);
            reg("attention.mono.Ws", mp.Ws);
            reg("attention.mono.v", mp.v);
            reg("attention.mono.b", mp.b);
            reg("attention.mono.g", mp.g);
            reg("attention.mono.r", mp.r);
        }
        if (cfg.attention.kind == AttentionKind::Amocha) {
            ChunkPredictorParams pp;
            int P = cfg.attention.predictor_hidden;
            pp.Wh = make_param({P, d_enc_}, rng);
            pp.Ws = make_param({P, S}, rng);
            pp.Vp = make_param({P}, rng);
            pp.b = zeros({P}, true);
            pp.mode = cfg.attention.predictor_mode;
            pp.activation = cfg.attention.predictor_activation;
            pp.wmax = cfg.attention.wmax;
            predictor = pp;
            reg("attention.pred.Wh", pp.Wh);
            reg("attention.pred.Ws", pp.Ws);
            reg("attention.pred.Vp", pp.Vp);
            reg("attention.pred.b", pp.b);
        }

        speller.emb = make_param({cfg.vocab, cfg.emb_dim}, rng);
        speller.rnn = make_lstm_params(cfg.emb_dim + d_enc_, cfg.speller_hidden, rng);
        speller.Wo = make_param({cfg.vocab, cfg.speller_hidden + d_enc_}, rng);
        speller.bo = zeros({cfg.vocab}, true);
        reg("speller.emb", speller.emb);
        reg("speller.rnn.W", speller.rnn.W);
        reg("speller.rnn.b", speller.rnn.b);
        reg("speller.out.W", speller.Wo);
        reg("speller.out.b", speller.bo);
    }

    const std::vector<std::pair<std::string, Var>>& params() const { return params_; }
    int encoder_dim() const { return d_enc_; }
    int vocab() const { return cfg.vocab; }

    void zero_grads() {
        for (auto& [k, v] : params_) v->zero_grad();
    }

    Var listen_frames(const std::vector<real>& frames, int T) const {
        if (T <= 0 || frames.size() != static_cast<size_t>(T) * cfg.feature_dim)
            throw ShapeError("listen_frames: frame buffer does not match T x feature_dim");
        Var x = make_tensor({T, cfg.feature_dim}, frames);
        return listen(x, cfg.encoder, encoder_params);
    }

    SpellerState initial_state() const {
        return {zeros({cfg.speller_hidden}), zeros({cfg.speller_hidden})};
    }

    Var initial_context() const { return zeros({d_enc_}); }

    Var embed(int token) const {
        if (token < 0 || token >= cfg.vocab)
            throw DataError("speller: token id " + std::to_string(token) +
                            " outside vocabulary of size " + std::to_string(cfg.vocab));
        return row(speller.emb, token);
    }

    // s_i = SpellerRNN(s_{i-1}, y_{i-1}, c_{i-1})
    SpellerState speller_cell(int prev_token, const SpellerState& st, const Var& prev_ctx) const {
        auto [h, c] = lstm_step(speller.rnn, concat({embed(prev_token), prev_ctx}), st.h, st.c);
        return {h, c};
    }

    // P(y_i | x, y_{<i}) = SpellerOut(s_i, c_i)
    Var output_logits(const SpellerState& st, const Var& ctx) const {
        return add(matvec(speller.Wo, concat({st.h, ctx})), speller.bo);
    }

private:
    std::vector<std::pair<std::string, Var>> params_;
    int d_enc_ = 0;

    void reg(const std::string& key, const Var& v) { params_.emplace_back(key, v); }
};

}  // namespace streamlas
