#pragma once

#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "streamlas/data.hpp"
#include "streamlas/harness.hpp"
#include "streamlas/speller.hpp"
#include "streamlas/training.hpp"

// Declarative experiment configuration. Every field has a default (model
// defaults follow the reference recipe: 4-layer BLSTM encoder with 256 units
// and pyramid reduction on the top two layers, 512-unit attention energies
// and speller, beam width 5). Unknown keys anywhere in the file are rejected.

namespace streamlas {

struct GeneratorConfig {
    std::uint64_t seed = 1234;
    int n_train = 2000;
    int n_dev = 200;
    int vocab_size = 20;
    int len_min = 4, len_max = 12;
    int dur_min = 4, dur_max = 10;
    double noise_std = 0.1;
    int feature_dim = 16;
};

struct DataConfig {
    std::string train_path;  // JSONL datasets; empty means "use the generator"
    std::string dev_path;
    GeneratorConfig generator;
};

struct DecodeConfig {
    int beam = 5;
    double temperature = 1.0;
    int max_len = 0;  // 0: listener length + 10
};

struct IoConfig {
    std::string checkpoint_dir = "ckpts";
    std::string log_dir = "logs";
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    int workers = 1;
    ModelConfig model;  // defaults constructed below
    TrainRecipe recipe;
    DataConfig data;
    DecodeConfig decode;
    IoConfig io;
    std::string chunk_label_file;  // used when recipe.chunk_label_source == external-file
};

namespace cfg_detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& where,
                       const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config: expected object at " + where);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value type for '" + std::string(key) + "' in " + where);
    }
}

inline Direction parse_direction(const std::string& s, const std::string& where) {
    if (s == "uni") return Direction::Uni;
    if (s == "bi") return Direction::Bi;
    if (s == "lc") return Direction::LatencyControlled;
    throw ConfigError("config: bad direction '" + s + "' in " + where + " (uni|bi|lc)");
}

inline AttentionKind parse_kind(const std::string& s, const std::string& where) {
    if (s == "gsa") return AttentionKind::Gsa;
    if (s == "mocha") return AttentionKind::Mocha;
    if (s == "amocha") return AttentionKind::Amocha;
    throw ConfigError("config: bad attention kind '" + s + "' in " + where + " (gsa|mocha|amocha)");
}

inline Smoothing parse_smoothing(const std::string& s, const std::string& where) {
    if (s == "none") return Smoothing::None;
    if (s == "m1") return Smoothing::M1;
    if (s == "m2") return Smoothing::M2;
    throw ConfigError("config: bad smoothing '" + s + "' in " + where + " (none|m1|m2)");
}

inline void parse_encoder(const json& j, EncoderConfig& out) {
    check_keys(j, "model.encoder", {"layers", "nc", "nr"});
    read(j, "nc", out.lc_block_len, "model.encoder");
    read(j, "nr", out.lc_right_context, "model.encoder");
    if (j.contains("layers")) {
        if (!j.at("layers").is_array())
            throw ConfigError("config: model.encoder.layers must be an array");
        out.layers.clear();
        int idx = 0;
        for (const auto& lj : j.at("layers")) {
            std::string where = "model.encoder.layers[" + std::to_string(idx++) + "]";
            check_keys(lj, where, {"direction", "hidden", "pyramid_input"});
            LayerSpec spec;
            std::string dir = "bi";
            read(lj, "direction", dir, where);
            spec.direction = parse_direction(dir, where);
            read(lj, "hidden", spec.hidden, where);
            read(lj, "pyramid_input", spec.pyramid_input, where);
            if (spec.hidden < 1) throw ConfigError("config: nonpositive hidden in " + where);
            out.layers.push_back(spec);
        }
    }
}

inline void parse_attention(const json& j, AttentionConfig& out) {
    check_keys(j, "model.attention",
               {"kind", "chunk_len", "smoothing", "smooth_w", "energy_hidden", "predictor_hidden",
                "predictor_mode", "predictor_activation", "wmax", "sigmoid_noise",
                "sigmoid_noise_std"});
    std::string kind = "gsa", smoothing = "none", pmode = "constrained", pact = "relu";
    read(j, "kind", kind, "model.attention");
    out.kind = parse_kind(kind, "model.attention");
    read(j, "chunk_len", out.chunk_len, "model.attention");
    read(j, "smoothing", smoothing, "model.attention");
    out.smoothing = parse_smoothing(smoothing, "model.attention");
    read(j, "smooth_w", out.smooth_w, "model.attention");
    read(j, "energy_hidden", out.energy_hidden, "model.attention");
    read(j, "predictor_hidden", out.predictor_hidden, "model.attention");
    read(j, "predictor_mode", pmode, "model.attention");
    if (pmode == "constrained")
        out.predictor_mode = PredictorMode::Constrained;
    else if (pmode == "unconstrained")
        out.predictor_mode = PredictorMode::Unconstrained;
    else
        throw ConfigError("config: bad predictor_mode '" + pmode + "'");
    read(j, "predictor_activation", pact, "model.attention");
    if (pact == "relu")
        out.predictor_activation = Activation::Relu;
    else if (pact == "tanh")
        out.predictor_activation = Activation::Tanh;
    else
        throw ConfigError("config: bad predictor_activation '" + pact + "'");
    read(j, "wmax", out.wmax, "model.attention");
    read(j, "sigmoid_noise", out.sigmoid_noise, "model.attention");
    read(j, "sigmoid_noise_std", out.sigmoid_noise_std, "model.attention");
    if (out.chunk_len < 1) throw ConfigError("config: chunk_len must be >= 1");
    if (out.smooth_w < 1) throw ConfigError("config: smooth_w must be >= 1");
    if (out.wmax < 1) throw ConfigError("config: wmax must be >= 1");
}

inline void parse_model(const json& j, ModelConfig& out) {
    check_keys(j, "model",
               {"feature_dim", "vocab_size", "encoder", "attention", "speller"});
    read(j, "feature_dim", out.feature_dim, "model");
    read(j, "vocab_size", out.vocab, "model");
    if (j.contains("encoder")) parse_encoder(j.at("encoder"), out.encoder);
    if (j.contains("attention")) parse_attention(j.at("attention"), out.attention);
    if (j.contains("speller")) {
        check_keys(j.at("speller"), "model.speller", {"hidden", "emb_dim"});
        read(j.at("speller"), "hidden", out.speller_hidden, "model.speller");
        read(j.at("speller"), "emb_dim", out.emb_dim, "model.speller");
    }
    if (out.vocab < 3) throw ConfigError("config: vocab_size must cover SOS/EOS/UNK (>= 3)");
}

inline void parse_recipe(const json& j, TrainRecipe& r, std::string& label_file) {
    check_keys(j, "recipe",
               {"epochs", "teacher_force_epochs", "ss_ramp_start", "ss_ramp_end", "ss_final_rate",
                "lr", "lr_halve_from_epoch", "label_smoothing", "weight_decay", "lambda",
                "batch_size", "grad_clip", "chunk_label_source", "chunk_label_threshold",
                "chunk_label_file"});
    read(j, "epochs", r.epochs, "recipe");
    read(j, "teacher_force_epochs", r.teacher_force_epochs, "recipe");
    read(j, "ss_ramp_start", r.ss_ramp_start, "recipe");
    read(j, "ss_ramp_end", r.ss_ramp_end, "recipe");
    read(j, "ss_final_rate", r.ss_final_rate, "recipe");
    read(j, "lr", r.lr, "recipe");
    read(j, "lr_halve_from_epoch", r.lr_halve_from_epoch, "recipe");
    read(j, "label_smoothing", r.label_smoothing, "recipe");
    read(j, "weight_decay", r.weight_decay, "recipe");
    read(j, "lambda", r.lambda, "recipe");
    read(j, "batch_size", r.batch_size, "recipe");
    read(j, "grad_clip", r.grad_clip, "recipe");
    read(j, "chunk_label_source", r.chunk_label_source, "recipe");
    read(j, "chunk_label_threshold", r.chunk_label_threshold, "recipe");
    read(j, "chunk_label_file", label_file, "recipe");
    if (r.ss_final_rate < 0 || r.ss_final_rate > 1)
        throw ConfigError("config: ss_final_rate must be in [0,1]");
    if (r.lambda < 0 || r.lambda > 1) throw ConfigError("config: lambda must be in [0,1]");
    if (r.label_smoothing < 0 || r.label_smoothing >= 1)
        throw ConfigError("config: label_smoothing must be in [0,1)");
    if (r.chunk_label_source != "greedy" && r.chunk_label_source != "beam" &&
        r.chunk_label_source != "external-file")
        throw ConfigError("config: chunk_label_source must be greedy|beam|external-file");
}

inline void parse_data(const json& j, DataConfig& out) {
    check_keys(j, "data", {"train_path", "dev_path", "generator"});
    read(j, "train_path", out.train_path, "data");
    read(j, "dev_path", out.dev_path, "data");
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        check_keys(g, "data.generator",
                   {"seed", "n_train", "n_dev", "vocab_size", "len_min", "len_max", "dur_min",
                    "dur_max", "noise_std", "feature_dim"});
        read(g, "seed", out.generator.seed, "data.generator");
        read(g, "n_train", out.generator.n_train, "data.generator");
        read(g, "n_dev", out.generator.n_dev, "data.generator");
        read(g, "vocab_size", out.generator.vocab_size, "data.generator");
        read(g, "len_min", out.generator.len_min, "data.generator");
        read(g, "len_max", out.generator.len_max, "data.generator");
        read(g, "dur_min", out.generator.dur_min, "data.generator");
        read(g, "dur_max", out.generator.dur_max, "data.generator");
        read(g, "noise_std", out.generator.noise_std, "data.generator");
        read(g, "feature_dim", out.generator.feature_dim, "data.generator");
    }
}

}  // namespace cfg_detail

inline ModelConfig default_model_config() {
    ModelConfig m;  // struct defaults already mirror the reference recipe
    m.encoder.layers = {{Direction::Bi, 256, false},
                        {Direction::Bi, 256, false},
                        {Direction::Bi, 256, true},
                        {Direction::Bi, 256, true}};
    return m;
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: JSON parse error: ") + e.what());
    }
    ExperimentConfig cfg;
    cfg.model = default_model_config();
    cfg_detail::check_keys(j, "<root>", {"seed", "workers", "model", "recipe", "data", "decode",
                                         "io"});
    cfg_detail::read(j, "seed", cfg.seed, "<root>");
    cfg_detail::read(j, "workers", cfg.workers, "<root>");
    if (j.contains("model")) cfg_detail::parse_model(j.at("model"), cfg.model);
    if (j.contains("recipe")) cfg_detail::parse_recipe(j.at("recipe"), cfg.recipe, cfg.chunk_label_file);
    if (j.contains("data")) cfg_detail::parse_data(j.at("data"), cfg.data);
    if (j.contains("decode")) {
        cfg_detail::check_keys(j.at("decode"), "decode", {"beam", "temperature", "max_len"});
        cfg_detail::read(j.at("decode"), "beam", cfg.decode.beam, "decode");
        cfg_detail::read(j.at("decode"), "temperature", cfg.decode.temperature, "decode");
        cfg_detail::read(j.at("decode"), "max_len", cfg.decode.max_len, "decode");
        if (cfg.decode.beam < 1) throw ConfigError("config: beam must be >= 1");
        if (cfg.decode.temperature <= 0) throw ConfigError("config: temperature must be > 0");
    }
    if (j.contains("io")) {
        cfg_detail::check_keys(j.at("io"), "io", {"checkpoint_dir", "log_dir"});
        cfg_detail::read(j.at("io"), "checkpoint_dir", cfg.io.checkpoint_dir, "io");
        cfg_detail::read(j.at("io"), "log_dir", cfg.io.log_dir, "io");
    }
    if (cfg.workers < 1) throw ConfigError("config: workers must be >= 1");
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const DataError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return parse_experiment_config(text);
}

// Train/dev datasets per the data section: explicit JSONL paths win, the
// generator covers the rest.
inline std::pair<Dataset, Dataset> load_data(const DataConfig& data) {
    Dataset train, dev;
    if (!data.train_path.empty()) train = load_dataset(data.train_path);
    if (!data.dev_path.empty()) dev = load_dataset(data.dev_path);
    if (data.train_path.empty() || data.dev_path.empty()) {
        GenSpec spec;
        spec.seed = data.generator.seed;
        spec.n_utts = data.generator.n_train + data.generator.n_dev;
        spec.vocab_size = data.generator.vocab_size;
        spec.len_min = data.generator.len_min;
        spec.len_max = data.generator.len_max;
        spec.dur_min = data.generator.dur_min;
        spec.dur_max = data.generator.dur_max;
        spec.noise_std = data.generator.noise_std;
        spec.feature_dim = data.generator.feature_dim;
        Dataset all = gen_toy_dataset(spec);
        audit_dataset(all);
        Dataset gtrain(all.begin(), all.begin() + data.generator.n_train);
        Dataset gdev(all.begin() + data.generator.n_train, all.end());
        if (data.train_path.empty()) train = std::move(gtrain);
        if (data.dev_path.empty()) dev = std::move(gdev);
    }
    return {std::move(train), std::move(dev)};
}

}  // namespace streamlas
