#pragma once

#include <map>
#include <string>
#include <thread>
#include <vector>

#include "streamlas/data.hpp"
#include "streamlas/decode.hpp"
#include "streamlas/training.hpp"

// Desk-scale experiment harness: parallel corpus evaluation, streaming
// latency accounting, and the three toy experiment grids that mirror the
// structure of full-scale listener/attender comparisons (baseline vs
// latency-controlled encoders; fixed vs adaptive chunks; boundary-shift
// fixes).

namespace streamlas {

// ---------------------------------------------------------------------------
// evaluation

struct UttScore {
    long edits = 0;
    long reflen = 0;
};

inline double corpus_cer_pct_parallel(const Model& m, const Dataset& ds,
                                      const DecodeOptions& opts, int workers) {
    std::vector<UttScore> scores(ds.size());
    auto eval_range = [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            DecodeResult r = opts.beam > 1 ? beam_search(m, ds[i].frames, ds[i].T, opts)
                                           : greedy_decode(m, ds[i].frames, ds[i].T, opts);
            scores[i] = {static_cast<long>(levenshtein(ds[i].targets, r.transcript)),
                         static_cast<long>(ds[i].targets.size())};
        }
    };
    if (workers <= 1) {
        eval_range(0, ds.size());
    } else {
        std::vector<std::thread> pool;
        size_t chunk = (ds.size() + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            size_t lo = w * chunk, hi = std::min(ds.size(), lo + chunk);
            if (lo < hi) pool.emplace_back(eval_range, lo, hi);
        }
        for (auto& t : pool) t.join();
    }
    long edits = 0, reflen = 0;
    for (const auto& s : scores) {
        edits += s.edits;
        reflen += s.reflen;
    }
    return reflen == 0 ? 0 : 100.0 * static_cast<double>(edits) / static_cast<double>(reflen);
}

// ---------------------------------------------------------------------------
// streaming latency

// Hard per-token latency bound: a token attending listener position u (with
// smoothing lookahead w) may consume at most u*f + w*f + Nc + Nr raw frames,
// where f is the encoder time reduction. Returns the number of trace rows
// violating the bound.
inline int latency_bound_violations(const ModelConfig& cfg,
                                    const std::vector<StreamToken>& trace) {
    int f = cfg.encoder.time_reduction();
    long w = cfg.attention.lookahead_w();
    long budget_extra = static_cast<long>(f) * w + cfg.encoder.lc_block_len +
                        cfg.encoder.lc_right_context;
    int violations = 0;
    for (const auto& t : trace)
        if (t.frames_consumed > static_cast<long>(t.boundary_u) * f + budget_extra) ++violations;
    return violations;
}

struct LatencySummary {
    double mean_lookahead = 0;  // frames consumed beyond the token's true end
    long max_lookahead = 0;
    std::vector<long> per_token;
    int excluded_utts = 0;  // empty traces
    int paired_tokens = 0;
};

// Lookahead of each emitted token beyond its generator-true end frame.
// Tokens are paired with references by position; unpaired tails are ignored,
// utterances with empty traces are excluded and counted.
inline LatencySummary latency_profile(const std::vector<std::vector<StreamToken>>& traces,
                                      const Dataset& ds) {
    if (traces.size() != ds.size())
        throw DataError("latency_profile: trace/dataset size mismatch");
    LatencySummary s;
    double acc = 0;
    for (size_t i = 0; i < ds.size(); ++i) {
        std::vector<StreamToken> emitted;
        for (const auto& t : traces[i])
            if (t.token != Model::kEos) emitted.push_back(t);
        if (emitted.empty()) {
            ++s.excluded_utts;
            continue;
        }
        long end = 0;
        size_t n = std::min(emitted.size(), ds[i].durations.size());
        for (size_t k = 0; k < n; ++k) {
            end += ds[i].durations[k];
            long look = emitted[k].frames_consumed - end;
            s.per_token.push_back(look);
            acc += static_cast<double>(look);
            s.max_lookahead = std::max(s.max_lookahead, look);
            ++s.paired_tokens;
        }
    }
    if (s.paired_tokens > 0) s.mean_lookahead = acc / s.paired_tokens;
    return s;
}

// ---------------------------------------------------------------------------
// toy model zoo

// Streamable shapes keep bidirectionality only in the topmost (latency-
// controlled) layer: lower layers are unidirectional, so the whole stack's
// lookahead is one block plus its right context. The GSA baseline uses the
// same shape with a full BLSTM on top, which makes transfer initialization
// into every streaming variant shape-compatible.
struct ToyDims {
    int feature_dim = 16;
    int vocab = 23;  // 20 symbols + SOS/EOS/UNK
    int enc_hidden = 32;
    int lstm_gsa_hidden = 48;  // parameter-matched unidirectional baseline
    int energy_hidden = 48;
    int predictor_hidden = 32;
    int speller_hidden = 64;
    int emb_dim = 24;
};

enum class ToyVariant { BlstmGsa, LstmGsa, LcGsa, BlstmMocha, LcMocha, LcAmocha };

inline ModelConfig toy_model_config(ToyVariant v, const ToyDims& d, int nc = 64, int nr = 32,
                                    Smoothing smoothing = Smoothing::None, int smooth_w = 10,
                                    PredictorMode pm = PredictorMode::Unconstrained) {
    ModelConfig cfg;
    cfg.feature_dim = d.feature_dim;
    cfg.vocab = d.vocab;
    cfg.speller_hidden = d.speller_hidden;
    cfg.emb_dim = d.emb_dim;
    cfg.attention.energy_hidden = d.energy_hidden;
    cfg.attention.predictor_hidden = d.predictor_hidden;
    cfg.attention.chunk_len = 10;
    cfg.attention.smoothing = smoothing;
    cfg.attention.smooth_w = smooth_w;
    cfg.attention.predictor_mode = pm;
    cfg.attention.predictor_activation = Activation::Relu;
    cfg.attention.wmax = 40;

    Direction top = Direction::Bi;
    switch (v) {
        case ToyVariant::BlstmGsa:
        case ToyVariant::BlstmMocha:
            top = Direction::Bi;
            break;
        case ToyVariant::LstmGsa:
            top = Direction::Uni;
            break;
        case ToyVariant::LcGsa:
        case ToyVariant::LcMocha:
        case ToyVariant::LcAmocha:
            top = Direction::LatencyControlled;
            break;
    }
    int top_hidden = v == ToyVariant::LstmGsa ? d.lstm_gsa_hidden : d.enc_hidden;
    cfg.encoder.layers = {{Direction::Uni, d.enc_hidden, false},
                          {Direction::Uni, d.enc_hidden, true},
                          {top, top_hidden, true}};
    cfg.encoder.lc_block_len = nc;
    cfg.encoder.lc_right_context = nr;

    switch (v) {
        case ToyVariant::BlstmGsa:
        case ToyVariant::LstmGsa:
        case ToyVariant::LcGsa:
            cfg.attention.kind = AttentionKind::Gsa;
            break;
        case ToyVariant::BlstmMocha:
        case ToyVariant::LcMocha:
            cfg.attention.kind = AttentionKind::Mocha;
            break;
        case ToyVariant::LcAmocha:
            cfg.attention.kind = AttentionKind::Amocha;
            break;
    }
    return cfg;
}

// Baselines get the long schedule; transferred models train on a
// proportionally compressed one.
inline TrainRecipe toy_baseline_recipe() {
    TrainRecipe r;
    r.epochs = 12;
    r.teacher_force_epochs = 4;
    r.ss_ramp_start = 5;
    r.ss_ramp_end = 8;
    r.ss_final_rate = 0.3;
    r.lr = 0.15;
    r.lr_halve_from_epoch = 10;
    r.label_smoothing = 0.1;
    r.weight_decay = 1e-5;
    r.batch_size = 8;
    return r;
}

inline TrainRecipe toy_finetune_recipe() {
    TrainRecipe r = toy_baseline_recipe();
    r.epochs = 6;
    r.teacher_force_epochs = 2;
    r.ss_ramp_start = 3;
    r.ss_ramp_end = 4;
    r.ss_final_rate = 0.3;
    r.lr_halve_from_epoch = 5;
    return r;
}

// ---------------------------------------------------------------------------
// table experiments

struct TableRow {
    std::string model;
    std::map<std::string, std::string> fields;
    double cer_pct = -1;
    double rel_pct = 0;  // (baseline - row) / baseline * 100; negative = worse
};

struct ToyRowSpec {
    std::string name;
    std::string ckpt_stem;  // cache key inside the work directory
    ModelConfig model;
    TrainRecipe recipe;
    std::string init_stem;    // checkpoint stem to initialize from ("" = scratch)
    std::string labels_mode;  // "greedy" / "beam" when the row needs chunk labels
    std::uint64_t seed = 7;
    std::map<std::string, std::string> fields;
};

class ToyRunner {
public:
    Dataset train_set, dev_set;
    std::string workdir;
    ToyDims dims;  // used to rebuild the baseline for label extraction
    bool train_enabled = true;
    int workers = 1;
    DecodeOptions eval_opts;  // beam 1 by default for speed

    ToyRunner(Dataset tr, Dataset dv, std::string wd, ToyDims d = {})
        : train_set(std::move(tr)), dev_set(std::move(dv)), workdir(std::move(wd)), dims(d) {
        eval_opts.beam = 1;
    }

    std::string ckpt_path(const std::string& stem) const {
        return workdir + "/" + stem + ".msckpt";
    }

    // Trains the row (or reuses its cached checkpoint) and returns the dev CER.
    TableRow run_row(const ToyRowSpec& spec) {
        Rng init_rng(spec.seed);
        Model m(spec.model, init_rng);
        std::string path = ckpt_path(spec.ckpt_stem);
        if (std::filesystem::exists(path)) {
            load_checkpoint(path, m.params());
        } else {
            if (!train_enabled)
                throw CheckpointError("run-table: missing checkpoint " + path +
                                      " and training is disabled");
            TrainOptions opts;
            opts.seed = spec.seed;
            opts.ckpt_dir = workdir + "/" + spec.ckpt_stem + ".work";
            opts.metrics_path = workdir + "/" + spec.ckpt_stem + ".metrics.csv";
            if (!spec.init_stem.empty()) {
                std::string init = ckpt_path(spec.init_stem);
                if (!std::filesystem::exists(init))
                    throw CheckpointError("run-table: missing init checkpoint " + init);
                opts.init_checkpoint = init;
            }
            std::map<std::string, std::vector<double>> labels;
            if (!spec.labels_mode.empty()) {
                labels = ensure_labels(spec.labels_mode, spec.recipe.chunk_label_threshold,
                                       spec.init_stem.empty() ? "t1_blstm_gsa" : spec.init_stem);
                opts.chunk_labels = &labels;
            }
            train(m, train_set, dev_set, spec.recipe, opts);
            save_checkpoint(path, m.params());
        }
        TableRow row;
        row.model = spec.name;
        row.fields = spec.fields;
        row.cer_pct = corpus_cer_pct_parallel(m, dev_set, eval_opts, workers);
        return row;
    }

    // Chunk labels from a trained soft-attention baseline, cached on disk.
    std::map<std::string, std::vector<double>> ensure_labels(const std::string& mode,
                                                             double threshold,
                                                             const std::string& baseline_stem) {
        std::string path = workdir + "/labels_" + mode + ".jsonl";
        if (std::filesystem::exists(path)) return load_chunk_labels(path);
        std::string base_ckpt = ckpt_path(baseline_stem);
        if (!std::filesystem::exists(base_ckpt))
            throw CheckpointError("chunk labels: missing baseline checkpoint " + base_ckpt);
        Rng rng(1);
        Model baseline(toy_model_config(ToyVariant::BlstmGsa, dims), rng);
        load_checkpoint(base_ckpt, baseline.params());
        DecodeOptions opts;
        opts.beam = mode == "beam" ? 5 : 1;
        auto res = extract_chunk_labels(baseline, train_set, mode, threshold, opts);
        save_chunk_labels(path, res);
        return res.labels;
    }
};

inline void apply_relative_degradation(std::vector<TableRow>& rows, double baseline_cer) {
    for (auto& r : rows)
        r.rel_pct = baseline_cer > 0 ? 100.0 * (baseline_cer - r.cer_pct) / baseline_cer : 0;
}

// Rows of the listener-streaming table: baselines plus latency-controlled
// variants trained from scratch and from the baseline.
inline std::vector<ToyRowSpec> t1_rows(const ToyDims& d) {
    std::vector<ToyRowSpec> rows;
    auto base = toy_baseline_recipe();
    auto fine = toy_finetune_recipe();
    auto scratch_short = toy_baseline_recipe();

    ToyRowSpec r1{"BLSTM-GSA", "t1_blstm_gsa", toy_model_config(ToyVariant::BlstmGsa, d), base,
                  "", "", 7, {{"nc", "-"}, {"nr", "-"}, {"init", "none"}}};
    ToyRowSpec r2{"LSTM-GSA", "t1_lstm_gsa", toy_model_config(ToyVariant::LstmGsa, d), base,
                  "", "", 8, {{"nc", "-"}, {"nr", "-"}, {"init", "none"}}};
    ToyRowSpec r3{"LC-GSA", "t1_lc_gsa_3216_scratch",
                  toy_model_config(ToyVariant::LcGsa, d, 32, 16), scratch_short, "", "", 9,
                  {{"nc", "32"}, {"nr", "16"}, {"init", "none"}}};
    ToyRowSpec r4{"LC-GSA", "t1_lc_gsa_3216_init", toy_model_config(ToyVariant::LcGsa, d, 32, 16),
                  fine, "t1_blstm_gsa", "", 10, {{"nc", "32"}, {"nr", "16"}, {"init", "BLSTM-GSA"}}};
    ToyRowSpec r5{"LC-GSA", "t1_lc_gsa_6432_init", toy_model_config(ToyVariant::LcGsa, d, 64, 32),
                  fine, "t1_blstm_gsa", "", 11, {{"nc", "64"}, {"nr", "32"}, {"init", "BLSTM-GSA"}}};
    // Scratch rows use the compressed schedule too, mirroring the shorter
    // budget given to every non-baseline model.
    rows = {r1, r2, r3, r4, r5};
    rows[2].recipe = fine;
    return rows;
}

// Rows of the attender table: fixed-chunk monotonic attention and both chunk
// length predictors on the offline (BLSTM-topped) encoder.
inline std::vector<ToyRowSpec> t2_rows(const ToyDims& d) {
    auto fine = toy_finetune_recipe();
    TrainRecipe mt = fine;
    mt.lambda = 0.02;
    std::vector<ToyRowSpec> rows;
    rows.push_back({"BLSTM-MoChA", "t2_blstm_mocha", toy_model_config(ToyVariant::BlstmMocha, d),
                    fine, "t1_blstm_gsa", "", 21,
                    {{"wmax", "-"}, {"lambda", "0"}, {"F", "-"}, {"SOL", "-"}}});
    ModelConfig cons = toy_model_config(ToyVariant::BlstmMocha, d);
    cons.attention.kind = AttentionKind::Amocha;
    cons.attention.predictor_mode = PredictorMode::Constrained;
    rows.push_back({"C-BLSTM-AMoChA", "t2_c_amocha_bs1", cons, mt, "t1_blstm_gsa", "greedy", 22,
                    {{"wmax", "40"}, {"lambda", "0.02"}, {"F", "ReLU"}, {"SOL", "BS1"}}});
    ModelConfig unc = cons;
    unc.attention.predictor_mode = PredictorMode::Unconstrained;
    rows.push_back({"U-BLSTM-AMoChA", "t2_u_amocha_bs1", unc, mt, "t1_blstm_gsa", "greedy", 23,
                    {{"wmax", "-"}, {"lambda", "0.02"}, {"F", "ReLU"}, {"SOL", "BS1"}}});
    rows.push_back({"U-BLSTM-AMoChA", "t2_u_amocha_bs5", unc, mt, "t1_blstm_gsa", "beam", 24,
                    {{"wmax", "-"}, {"lambda", "0.02"}, {"F", "ReLU"}, {"SOL", "BS5"}}});
    return rows;
}

// Rows of the online table for one training seed: latency-controlled
// monotonic models without fixes, with feature averaging (M1), with
// probability averaging (M2), and the adaptive-chunk model with M2.
inline std::vector<ToyRowSpec> t3_rows(const ToyDims& d, std::uint64_t seed, bool include_w8) {
    auto fine = toy_finetune_recipe();
    TrainRecipe mt = fine;
    mt.lambda = 0.02;
    std::string tag = "_s" + std::to_string(seed);
    std::vector<ToyRowSpec> rows;
    rows.push_back({"LC-MoChA", "t3_nofix" + tag,
                    toy_model_config(ToyVariant::LcMocha, d, 64, 32), fine, "t1_blstm_gsa", "",
                    seed, {{"method", "-"}, {"future_w", "1"}}});
    if (include_w8)
        rows.push_back({"LC-MoChA", "t3_m1w8" + tag,
                        toy_model_config(ToyVariant::LcMocha, d, 64, 32, Smoothing::M1, 8), fine,
                        "t1_blstm_gsa", "", seed, {{"method", "M1"}, {"future_w", "8"}}});
    rows.push_back({"LC-MoChA", "t3_m1w10" + tag,
                    toy_model_config(ToyVariant::LcMocha, d, 64, 32, Smoothing::M1, 10), fine,
                    "t1_blstm_gsa", "", seed, {{"method", "M1"}, {"future_w", "10"}}});
    if (include_w8)
        rows.push_back({"LC-MoChA", "t3_m2w8" + tag,
                        toy_model_config(ToyVariant::LcMocha, d, 64, 32, Smoothing::M2, 8), fine,
                        "t1_blstm_gsa", "", seed, {{"method", "M2"}, {"future_w", "8"}}});
    rows.push_back({"LC-MoChA", "t3_m2w10" + tag,
                    toy_model_config(ToyVariant::LcMocha, d, 64, 32, Smoothing::M2, 10), fine,
                    "t1_blstm_gsa", "", seed, {{"method", "M2"}, {"future_w", "10"}}});
    rows.push_back({"LC-AMoChA", "t3_amocha_m2w10" + tag,
                    toy_model_config(ToyVariant::LcAmocha, d, 64, 32, Smoothing::M2, 10), mt,
                    "t1_blstm_gsa", "greedy", seed, {{"method", "M2"}, {"future_w", "10"}}});
    return rows;
}

inline std::string table_to_csv(const std::vector<TableRow>& rows,
                                const std::vector<std::string>& columns) {
    std::string out = "model";
    for (const auto& c : columns) out += "," + c;
    out += ",cer,rel_pct\n";
    for (const auto& r : rows) {
        out += r.model;
        for (const auto& c : columns) {
            auto it = r.fields.find(c);
            out += ",";
            out += it == r.fields.end() ? std::string("-") : it->second;
        }
        out += "," + fmt_real(r.cer_pct) + "," + fmt_real(r.rel_pct) + "\n";
    }
    return out;
}

}  // namespace streamlas
