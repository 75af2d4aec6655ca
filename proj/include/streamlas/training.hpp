#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "streamlas/checkpoint.hpp"
#include "streamlas/data.hpp"
#include "streamlas/decode.hpp"
#include "streamlas/speller.hpp"

// Training: label-smoothed cross entropy, the multi-task loss that mixes CE
// with the chunk-length regression, scheduled sampling, SGD with weight decay
// and gradient-norm clipping, chunk-length ground-truth extraction from a
// soft-attention baseline, and the epoch loop with metrics logging and
// transfer initialization from checkpoints.

namespace streamlas {

struct TrainRecipe {
    int epochs = 30;
    int teacher_force_epochs = 11;
    int ss_ramp_start = 12;
    int ss_ramp_end = 17;
    double ss_final_rate = 0.3;
    double lr = 2e-4;
    int lr_halve_from_epoch = 24;
    double label_smoothing = 0.1;
    double weight_decay = 1e-5;
    double lambda = 0.0;  // CE / chunk-length-MSE mixing
    int batch_size = 8;
    double grad_clip = 5.0;
    std::string chunk_label_source = "greedy";  // greedy | beam | external-file
    double chunk_label_threshold = 0.01;
};

// 0 through the teacher-forced epochs, then a linear ramp to the final rate
// across [ramp_start, ramp_end], constant afterwards.
inline double scheduled_sampling_rate(int epoch, const TrainRecipe& r) {
    if (epoch < 1) throw DataError("scheduled_sampling_rate: epoch must be >= 1");
    if (epoch <= r.teacher_force_epochs || epoch < r.ss_ramp_start) return 0.0;
    if (r.ss_ramp_end <= r.ss_ramp_start) return r.ss_final_rate;
    double t = static_cast<double>(epoch - r.ss_ramp_start + 1) /
               static_cast<double>(r.ss_ramp_end - r.ss_ramp_start + 1);
    return r.ss_final_rate * std::min(1.0, std::max(0.0, t));
}

inline double lr_for_epoch(int epoch, const TrainRecipe& r) {
    int halvings = std::max(0, epoch - r.lr_halve_from_epoch + 1);
    return r.lr * std::pow(0.5, halvings);
}

// ---------------------------------------------------------------------------
// losses

// Cross entropy against (1 - smoothing) * one-hot + smoothing * uniform.
inline Var ce_loss_label_smoothed(const Var& logits, int target, double smoothing) {
    if (smoothing < 0.0 || smoothing >= 1.0)
        throw DataError("ce_loss_label_smoothed: smoothing must be in [0,1)");
    int V = logits->shape[0];
    if (target < 0 || target >= V)
        throw DataError("ce_loss_label_smoothed: target " + std::to_string(target) +
                        " outside vocab " + std::to_string(V));
    Var ls = log_softmax(logits);
    Var loss = smul(pick(ls, target), static_cast<real>(-(1.0 - smoothing)));
    if (smoothing > 0.0) loss = add(loss, smul(sum(ls), static_cast<real>(-smoothing / V)));
    return loss;
}

// Loss = (1 - lambda) * CE + lambda * L_W with L_W the mean squared error
// between predicted expected chunk lengths and the ground truth lengths.
inline Var multitask_loss(const Var& ce, const std::vector<Var>& predicted_lengths,
                          const std::vector<double>& true_lengths, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw DataError("multitask_loss: lambda must be in [0,1]");
    if (predicted_lengths.size() != true_lengths.size())
        throw DataError("multitask_loss: " + std::to_string(predicted_lengths.size()) +
                        " predictions vs " + std::to_string(true_lengths.size()) + " targets");
    if (predicted_lengths.empty()) return smul(ce, static_cast<real>(1.0 - lambda));
    Var mse;
    for (size_t i = 0; i < predicted_lengths.size(); ++i) {
        Var diff = sadd(predicted_lengths[i], static_cast<real>(-true_lengths[i]));
        Var sq = mul(diff, diff);
        mse = mse ? add(mse, sq) : sq;
    }
    mse = smul(mse, real(1) / static_cast<real>(predicted_lengths.size()));
    return add(smul(ce, static_cast<real>(1.0 - lambda)), smul(mse, static_cast<real>(lambda)));
}

// ---------------------------------------------------------------------------
// teacher-forced forward pass

struct AttentionDump {
    std::vector<std::vector<real>> alpha;  // per step over listener positions
    std::vector<std::vector<real>> beta;
    std::vector<double> chunk_len;  // expected predicted length (or fixed W)
};

struct ForwardResult {
    Var loss;
    Var ce;
    std::optional<Var> lw;
    int steps = 0;
};

// Builds the per-utterance training graph: listener, per-step attention
// (soft, or expected-alignment + induced chunk weights for the monotonic
// kinds), speller, and the combined loss. Scheduled sampling draws a
// per-token Bernoulli(rate) to decide model-sample vs ground-truth feedback.
inline ForwardResult train_forward(const Model& m, const ToyUtterance& u, double ss_rate,
                                   Rng& rng, const TrainRecipe& recipe,
                                   const std::vector<double>* chunk_labels = nullptr,
                                   AttentionDump* dump = nullptr) {
    const auto& att = m.cfg.attention;
    Var H = m.listen_frames(u.frames, u.T);
    int U = H->shape[0];
    Var keys_energy = precompute_keys(H, m.energy.Wh);
    Var keys_mono, keys_pred, m2mat;
    if (m.mono) {
        Var Hm = att.smoothing == Smoothing::M1 ? smooth_features_m1(H, att.smooth_w) : H;
        keys_mono = precompute_keys(Hm, m.mono->Wh);
        if (att.smoothing == Smoothing::M2 && att.smooth_w > 1)
            m2mat = smoothing_matrix(U, att.smooth_w);
    }
    if (m.predictor) keys_pred = precompute_keys(H, m.predictor->Wh);
    real exp_cap = std::log(static_cast<real>(U)) + real(1);

    int I = static_cast<int>(u.targets.size());
    SpellerState st = m.initial_state();
    Var ctx = m.initial_context();
    Var aprev = zeros({U});
    aprev->value[0] = real(1);
    int in_tok = Model::kSos;

    Var ce_sum;
    std::vector<Var> pred_lens;
    for (int step = 0; step <= I; ++step) {
        SpellerState s = m.speller_cell(in_tok, st, ctx);
        Var context;
        if (att.kind == AttentionKind::Gsa) {
            auto g = gsa_context(m.energy, s.h, H, keys_energy);
            context = g.context;
            if (dump) {
                dump->alpha.push_back(g.alpha->value);
                dump->beta.push_back(g.alpha->value);
                dump->chunk_len.push_back(0);
            }
        } else {
            Var e = monotonic_energy_rows(*m.mono, s.h, keys_mono);
            if (att.sigmoid_noise && att.sigmoid_noise_std > 0) {
                Var noise = zeros({U});
                for (auto& v : noise->value)
                    v = static_cast<real>(rng.normal() * att.sigmoid_noise_std);
                e = add(e, noise);
            }
            Var p = sigmoid(e);
            if (m2mat) p = matvec(m2mat, p);
            p = clip(p, real(1e-6), real(1) - real(1e-6));
            Var alpha = expected_alignment_step(p, aprev);
            aprev = alpha;
            Var d = additive_energy_rows(m.energy, s.h, keys_energy);
            std::vector<int> Wints(U, att.chunk_len);
            double expected_w = att.chunk_len;
            if (m.predictor) {
                Var wraw = predict_chunk_rows(*m.predictor, s.h, keys_pred, exp_cap);
                for (int k = 0; k < U; ++k) Wints[k] = chunk_length_to_int(wraw->value[k]);
                Var elen = dot(alpha, wraw);
                expected_w = elen->value[0];
                if (step < I) pred_lens.push_back(elen);
            }
            Var beta = expected_chunk_attention_step(alpha, d, Wints);
            context = matvec_t(H, beta);
            if (dump) {
                dump->alpha.push_back(alpha->value);
                dump->beta.push_back(beta->value);
                dump->chunk_len.push_back(expected_w);
            }
        }
        Var logits = m.output_logits(s, context);
        int target = step < I ? u.targets[step] : Model::kEos;
        Var ce_step = ce_loss_label_smoothed(logits, target, recipe.label_smoothing);
        ce_sum = ce_sum ? add(ce_sum, ce_step) : ce_step;

        if (step < I) {
            if (ss_rate > 0 && rng.bernoulli(ss_rate)) {
                // feed a sample from the model's own output distribution
                Var probs = softmax(logits);
                double r = rng.uniform();
                double acc = 0;
                int tok = m.vocab() - 1;
                for (int v = 0; v < m.vocab(); ++v) {
                    acc += probs->value[v];
                    if (r < acc) {
                        tok = v;
                        break;
                    }
                }
                in_tok = tok;
            } else {
                in_tok = u.targets[step];
            }
        }
        st = s;
        ctx = context;
    }

    ForwardResult res;
    res.steps = I + 1;
    res.ce = smul(ce_sum, real(1) / static_cast<real>(I + 1));
    if (m.predictor && chunk_labels) {
        std::vector<double> trues(chunk_labels->begin(), chunk_labels->end());
        if (static_cast<int>(trues.size()) != I)
            throw DataError("train_forward: chunk label count " + std::to_string(trues.size()) +
                            " != target count " + std::to_string(I) + " for " + u.id);
        res.loss = multitask_loss(res.ce, pred_lens, trues, recipe.lambda);
        Var mse;
        for (size_t i = 0; i < pred_lens.size(); ++i) {
            Var diff = sadd(pred_lens[i], static_cast<real>(-trues[i]));
            Var sq = mul(diff, diff);
            mse = mse ? add(mse, sq) : sq;
        }
        res.lw = smul(mse, real(1) / static_cast<real>(pred_lens.size()));
    } else {
        res.loss = res.ce;
    }
    return res;
}

// ---------------------------------------------------------------------------
// optimizer

inline double global_grad_norm(const ParamList& params) {
    double acc = 0;
    for (const auto& [k, v] : params)
        for (real g : v->grad) acc += static_cast<double>(g) * g;
    return std::sqrt(acc);
}

// One SGD update: clip the loss gradient by global norm, add L2 weight decay,
// step, and zero the gradients.
inline void sgd_step(const ParamList& params, double lr, double weight_decay, double clip_norm) {
    double scale = 1.0;
    if (clip_norm > 0) {
        double norm = global_grad_norm(params);
        if (norm > clip_norm) scale = clip_norm / norm;
    }
    for (const auto& [k, v] : params) {
        v->ensure_grad();
        for (size_t i = 0; i < v->value.size(); ++i)
            v->value[i] -= static_cast<real>(lr) *
                           (static_cast<real>(scale) * v->grad[i] +
                            static_cast<real>(weight_decay) * v->value[i]);
        v->zero_grad();
    }
}

// ---------------------------------------------------------------------------
// chunk-length ground truth

struct ChunkLabelResult {
    std::map<std::string, std::vector<double>> labels;  // utterance id -> per-token lengths
    int skipped = 0;                                    // decode failures
};

// Decodes each utterance with the (soft attention) baseline and counts the
// attention weights above the threshold at every output step. Labels are
// aligned to the reference token count: extra decoded steps are dropped and
// short decodes repeat the last observed length.
inline std::vector<double> chunk_labels_for(const Model& baseline, const ToyUtterance& u,
                                            const std::string& mode, double threshold,
                                            const DecodeOptions& base_opts = {}) {
    if (baseline.cfg.attention.kind != AttentionKind::Gsa)
        throw DataError("extract_chunk_labels: baseline must use global soft attention");
    DecodeOptions opts = base_opts;
    opts.capture_alpha = true;
    DecodeResult r;
    if (mode == "greedy") {
        r = greedy_decode(baseline, u.frames, u.T, opts);
    } else if (mode == "beam") {
        r = beam_search(baseline, u.frames, u.T, opts);
    } else {
        throw DataError("extract_chunk_labels: unknown mode '" + mode + "'");
    }
    std::vector<double> labels;
    for (const auto& alpha : r.alphas) {
        int count = 0;
        for (real a : alpha)
            if (a > threshold) ++count;
        labels.push_back(std::max(1, count));
    }
    // align to reference length
    size_t want = u.targets.size();
    if (labels.empty()) labels.push_back(1);
    while (labels.size() < want) labels.push_back(labels.back());
    labels.resize(want);
    return labels;
}

inline ChunkLabelResult extract_chunk_labels(const Model& baseline, const Dataset& ds,
                                             const std::string& mode, double threshold,
                                             const DecodeOptions& opts = {}) {
    ChunkLabelResult out;
    for (const auto& u : ds) {
        try {
            out.labels[u.id] = chunk_labels_for(baseline, u, mode, threshold, opts);
        } catch (const Error&) {
            ++out.skipped;
        }
    }
    return out;
}

inline void save_chunk_labels(const std::string& path, const ChunkLabelResult& r) {
    std::string out;
    for (const auto& [id, lens] : r.labels) {
        nlohmann::json j;
        j["id"] = id;
        j["labels"] = lens;
        out += j.dump();
        out += '\n';
    }
    atomic_write(path, out);
}

inline std::map<std::string, std::vector<double>> load_chunk_labels(const std::string& path) {
    std::istringstream in(read_file(path));
    std::map<std::string, std::vector<double>> labels;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            labels[j.at("id").get<std::string>()] = j.at("labels").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("chunk labels: bad line: ") + e.what());
        }
    }
    return labels;
}

// ---------------------------------------------------------------------------
// evaluation and the epoch loop

// Corpus-level character error rate in percent: total edits over total
// reference length.
inline double corpus_cer_pct(const Model& m, const Dataset& ds, const DecodeOptions& opts) {
    long edits = 0, reflen = 0;
    for (const auto& u : ds) {
        DecodeResult r = opts.beam > 1 ? beam_search(m, u.frames, u.T, opts)
                                       : greedy_decode(m, u.frames, u.T, opts);
        edits += levenshtein(u.targets, r.transcript);
        reflen += static_cast<long>(u.targets.size());
    }
    return 100.0 * static_cast<double>(edits) / static_cast<double>(reflen);
}

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0, train_ce = 0, train_lw = 0;
    double dev_loss = 0, dev_ce = 0, dev_lw = 0;
    double dev_cer_pct = 0;
};

inline std::string metrics_to_csv(const std::vector<EpochMetrics>& rows) {
    std::string out = "epoch,split,loss,ce,lw,cer\n";
    for (const auto& r : rows) {
        out += std::to_string(r.epoch) + ",train," + fmt_real(r.train_loss) + "," +
               fmt_real(r.train_ce) + "," + fmt_real(r.train_lw) + ",\n";
        out += std::to_string(r.epoch) + ",dev," + fmt_real(r.dev_loss) + "," +
               fmt_real(r.dev_ce) + "," + fmt_real(r.dev_lw) + "," + fmt_real(r.dev_cer_pct) +
               "\n";
    }
    return out;
}

struct TrainOptions {
    std::uint64_t seed = 1;
    std::string ckpt_dir;      // empty: keep checkpoints in memory only
    std::string metrics_path;  // empty: no CSV artifact
    std::string init_checkpoint;
    bool save_per_epoch = false;
    DecodeOptions dev_decode;  // defaults: greedy
    const std::map<std::string, std::vector<double>>* chunk_labels = nullptr;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    std::string final_checkpoint;
    LoadReport init_report;
};

inline TrainResult train(Model& m, const Dataset& train_set, const Dataset& dev_set,
                         const TrainRecipe& recipe, const TrainOptions& opts) {
    TrainResult result;
    if (!opts.init_checkpoint.empty())
        result.init_report = load_checkpoint(opts.init_checkpoint, m.params());
    Rng root(opts.seed);
    DecodeOptions dev_opts = opts.dev_decode;
    dev_opts.beam = std::max(1, dev_opts.beam);

    for (int epoch = 1; epoch <= recipe.epochs; ++epoch) {
        double rate = scheduled_sampling_rate(epoch, recipe);
        double lr = lr_for_epoch(epoch, recipe);
        Rng erng = root.fork(static_cast<std::uint64_t>(epoch));

        std::vector<int> order(train_set.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[erng.uniform_int(0, static_cast<int>(i) - 1)]);

        EpochMetrics em;
        em.epoch = epoch;
        size_t done = 0;
        while (done < order.size()) {
            size_t bend = std::min(done + recipe.batch_size, order.size());
            real inv_batch = real(1) / static_cast<real>(bend - done);
            for (size_t k = done; k < bend; ++k) {
                const ToyUtterance& u = train_set[order[k]];
                Rng urng = erng.fork(static_cast<std::uint64_t>(order[k]));
                const std::vector<double>* labels = nullptr;
                if (m.predictor && opts.chunk_labels) {
                    auto it = opts.chunk_labels->find(u.id);
                    if (it != opts.chunk_labels->end()) labels = &it->second;
                }
                auto fwd = train_forward(m, u, rate, urng, recipe, labels);
                backward(smul(fwd.loss, inv_batch));
                em.train_loss += fwd.loss->value[0];
                em.train_ce += fwd.ce->value[0];
                if (fwd.lw) em.train_lw += (*fwd.lw)->value[0];
            }
            sgd_step(m.params(), lr, recipe.weight_decay, recipe.grad_clip);
            done = bend;
        }
        double n = static_cast<double>(train_set.size());
        em.train_loss /= n;
        em.train_ce /= n;
        em.train_lw /= n;

        // teacher-forced dev loss + decoded dev CER
        {
            Rng drng(0);
            for (const auto& u : dev_set) {
                NoGradGuard ng;
                const std::vector<double>* labels = nullptr;
                if (m.predictor && opts.chunk_labels) {
                    auto it = opts.chunk_labels->find(u.id);
                    if (it != opts.chunk_labels->end()) labels = &it->second;
                }
                auto fwd = train_forward(m, u, 0.0, drng, recipe, labels);
                em.dev_loss += fwd.loss->value[0];
                em.dev_ce += fwd.ce->value[0];
                if (fwd.lw) em.dev_lw += (*fwd.lw)->value[0];
            }
            double dn = std::max<double>(1, dev_set.size());
            em.dev_loss /= dn;
            em.dev_ce /= dn;
            em.dev_lw /= dn;
            em.dev_cer_pct = dev_set.empty() ? 0 : corpus_cer_pct(m, dev_set, dev_opts);
        }
        result.metrics.push_back(em);

        if (!opts.ckpt_dir.empty()) {
            if (opts.save_per_epoch) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "/ckpt_epoch%03d.msckpt", epoch);
                save_checkpoint(opts.ckpt_dir + buf, m.params());
            }
            save_checkpoint(opts.ckpt_dir + "/ckpt_final.msckpt", m.params());
            result.final_checkpoint = opts.ckpt_dir + "/ckpt_final.msckpt";
        }
        if (!opts.metrics_path.empty()) atomic_write(opts.metrics_path, metrics_to_csv(result.metrics));
    }
    return result;
}

}  // namespace streamlas
