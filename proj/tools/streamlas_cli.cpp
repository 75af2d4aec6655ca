// Command-line entry point: train / decode / stream-sim / extract-chunk-labels
// / run-table / dump-attention over a declarative JSON config. All randomness
// is controlled by the config seed; artifacts are written atomically.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "streamlas/config.hpp"
#include "streamlas/harness.hpp"

namespace {

using namespace streamlas;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitCheckpoint = 4;

Model build_model(const ExperimentConfig& cfg) {
    Rng rng(cfg.seed);
    return Model(cfg.model, rng);
}

std::string default_ckpt(const ExperimentConfig& cfg) {
    return cfg.io.checkpoint_dir + "/ckpt_final.msckpt";
}

std::string decode_to_jsonl(const Dataset& ds, const std::vector<DecodeResult>& results) {
    std::string out;
    for (size_t i = 0; i < ds.size(); ++i) {
        nlohmann::json j;
        j["id"] = ds[i].id;
        j["tokens"] = results[i].transcript;
        j["score"] = results[i].log_score;
        std::vector<long> frames;
        for (const auto& t : results[i].trace)
            if (t.token != Model::kEos) frames.push_back(t.frames_consumed);
        j["frames_consumed_per_token"] = frames;
        out += j.dump();
        out += '\n';
    }
    return out;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& init,
              const std::string& labels_from) {
    auto [train_set, dev_set] = load_data(cfg.data);
    Model m = build_model(cfg);
    TrainOptions opts;
    opts.seed = cfg.seed;
    opts.ckpt_dir = cfg.io.checkpoint_dir;
    opts.metrics_path = cfg.io.log_dir + "/metrics.csv";
    opts.init_checkpoint = init;
    opts.dev_decode.beam = 1;

    std::map<std::string, std::vector<double>> labels;
    if (m.predictor) {
        if (cfg.recipe.chunk_label_source == "external-file") {
            if (cfg.chunk_label_file.empty())
                throw ConfigError("train: chunk_label_source is external-file but "
                                  "recipe.chunk_label_file is empty");
            labels = load_chunk_labels(cfg.chunk_label_file);
        } else {
            if (labels_from.empty())
                throw ConfigError("train: adaptive chunk model needs --labels-from <baseline "
                                  "checkpoint> (or an external-file label source)");
            ExperimentConfig base_cfg = cfg;
            base_cfg.model.attention.kind = AttentionKind::Gsa;
            Model baseline = build_model(base_cfg);
            load_checkpoint(labels_from, baseline.params());
            DecodeOptions dopts;
            dopts.beam = cfg.recipe.chunk_label_source == "beam" ? cfg.decode.beam : 1;
            dopts.temperature = cfg.decode.temperature;
            auto res = extract_chunk_labels(baseline, train_set, cfg.recipe.chunk_label_source,
                                            cfg.recipe.chunk_label_threshold, dopts);
            if (res.skipped > 0)
                std::cerr << "warning: " << res.skipped << " utterances skipped during label "
                          << "extraction\n";
            labels = std::move(res.labels);
        }
        opts.chunk_labels = &labels;
    }
    TrainResult r = train(m, train_set, dev_set, cfg.recipe, opts);
    if (!r.metrics.empty())
        std::cout << "final dev CER: " << fmt_real(r.metrics.back().dev_cer_pct) << "%\n";
    std::cout << "checkpoint: " << r.final_checkpoint << "\n";
    std::cout << "metrics: " << opts.metrics_path << "\n";
    return kExitOk;
}

int cmd_decode(const ExperimentConfig& cfg, const std::string& ckpt, const std::string& out_path,
               const std::string& split) {
    auto [train_set, dev_set] = load_data(cfg.data);
    const Dataset& ds = split == "train" ? train_set : dev_set;
    Model m = build_model(cfg);
    load_checkpoint(ckpt.empty() ? default_ckpt(cfg) : ckpt, m.params());
    DecodeOptions opts;
    opts.beam = cfg.decode.beam;
    opts.temperature = cfg.decode.temperature;
    opts.max_len = cfg.decode.max_len;
    std::vector<DecodeResult> results(ds.size());
    for (size_t i = 0; i < ds.size(); ++i)
        results[i] = opts.beam > 1 ? beam_search(m, ds[i].frames, ds[i].T, opts)
                                   : greedy_decode(m, ds[i].frames, ds[i].T, opts);
    long edits = 0, reflen = 0;
    for (size_t i = 0; i < ds.size(); ++i) {
        edits += levenshtein(ds[i].targets, results[i].transcript);
        reflen += static_cast<long>(ds[i].targets.size());
    }
    std::string path = out_path.empty() ? cfg.io.log_dir + "/decode.jsonl" : out_path;
    atomic_write(path, decode_to_jsonl(ds, results));
    std::cout << "decoded " << ds.size() << " utterances, CER "
              << fmt_real(reflen ? 100.0 * edits / reflen : 0) << "%\n";
    std::cout << "output: " << path << "\n";
    return kExitOk;
}

int cmd_stream_sim(const ExperimentConfig& cfg, const std::string& ckpt,
                   const std::string& out_path, const std::string& trace_path) {
    auto [train_set, dev_set] = load_data(cfg.data);
    Model m = build_model(cfg);
    load_checkpoint(ckpt.empty() ? default_ckpt(cfg) : ckpt, m.params());
    DecodeOptions opts;
    opts.temperature = cfg.decode.temperature;
    opts.max_len = cfg.decode.max_len;
    std::vector<DecodeResult> results(dev_set.size());
    std::vector<std::vector<StreamToken>> traces(dev_set.size());
    int violations = 0;
    for (size_t i = 0; i < dev_set.size(); ++i) {
        results[i] = streaming_decode(
            m, frames_as_source(dev_set[i].frames, dev_set[i].T, dev_set[i].d), opts);
        traces[i] = results[i].trace;
        violations += latency_bound_violations(m.cfg, traces[i]);
    }
    std::string jsonl = out_path.empty() ? cfg.io.log_dir + "/stream_decode.jsonl" : out_path;
    atomic_write(jsonl, decode_to_jsonl(dev_set, results));
    std::string tpath = trace_path.empty() ? cfg.io.log_dir + "/stream_trace.csv" : trace_path;
    std::string csv = "id,token,boundary_u,chunk_len,frames_consumed\n";
    for (size_t i = 0; i < dev_set.size(); ++i)
        for (const auto& t : traces[i])
            csv += dev_set[i].id + "," + std::to_string(t.token) + "," +
                   std::to_string(t.boundary_u) + "," + std::to_string(t.chunk_len) + "," +
                   std::to_string(t.frames_consumed) + "\n";
    atomic_write(tpath, csv);
    auto prof = latency_profile(traces, dev_set);
    long edits = 0, reflen = 0;
    for (size_t i = 0; i < dev_set.size(); ++i) {
        edits += levenshtein(dev_set[i].targets, results[i].transcript);
        reflen += static_cast<long>(dev_set[i].targets.size());
    }
    std::cout << "streamed " << dev_set.size() << " utterances, CER "
              << fmt_real(reflen ? 100.0 * edits / reflen : 0) << "%\n";
    std::cout << "latency: mean lookahead " << fmt_real(prof.mean_lookahead) << " frames, max "
              << prof.max_lookahead << ", bound violations " << violations << "\n";
    std::cout << "output: " << jsonl << "\ntrace: " << tpath << "\n";
    return kExitOk;
}

int cmd_extract_labels(const ExperimentConfig& cfg, const std::string& ckpt,
                       const std::string& out_path, std::string mode) {
    auto [train_set, dev_set] = load_data(cfg.data);
    ExperimentConfig base_cfg = cfg;
    base_cfg.model.attention.kind = AttentionKind::Gsa;
    Model m = build_model(base_cfg);
    load_checkpoint(ckpt.empty() ? default_ckpt(cfg) : ckpt, m.params());
    if (mode.empty()) mode = cfg.recipe.chunk_label_source;
    if (mode == "external-file")
        throw ConfigError("extract-chunk-labels: mode must be greedy or beam");
    DecodeOptions opts;
    opts.beam = mode == "beam" ? cfg.decode.beam : 1;
    opts.temperature = cfg.decode.temperature;
    auto res = extract_chunk_labels(m, train_set, mode, cfg.recipe.chunk_label_threshold, opts);
    std::string path = out_path.empty() ? cfg.io.log_dir + "/chunk_labels.jsonl" : out_path;
    save_chunk_labels(path, res);
    std::cout << "labels for " << res.labels.size() << " utterances (" << res.skipped
              << " skipped)\n";
    std::cout << "output: " << path << "\n";
    return kExitOk;
}

int cmd_run_table(const ExperimentConfig& cfg, const std::string& table,
                  const std::string& out_path, bool no_train, const std::string& seeds_arg,
                  int workers) {
    auto [train_set, dev_set] = load_data(cfg.data);
    ToyDims dims;
    dims.feature_dim = cfg.data.generator.feature_dim;
    dims.vocab = kReservedTokens + cfg.data.generator.vocab_size;
    ToyRunner runner(train_set, dev_set, cfg.io.checkpoint_dir, dims);
    runner.train_enabled = !no_train;
    runner.workers = workers;
    std::filesystem::create_directories(cfg.io.checkpoint_dir);

    std::vector<TableRow> rows;
    std::vector<std::string> columns;
    if (table == "T1") {
        columns = {"nc", "nr", "init"};
        for (const auto& spec : t1_rows(dims)) rows.push_back(runner.run_row(spec));
        apply_relative_degradation(rows, rows[0].cer_pct);
    } else if (table == "T2" || table == "T3") {
        // both need the trained baseline for transfer + relative degradation
        TableRow base = runner.run_row(t1_rows(dims)[0]);
        rows.push_back(base);
        if (table == "T2") {
            columns = {"wmax", "lambda", "F", "SOL"};
            for (const auto& spec : t2_rows(dims)) rows.push_back(runner.run_row(spec));
        } else {
            columns = {"method", "future_w", "seed"};
            std::vector<std::uint64_t> seeds;
            std::stringstream ss(seeds_arg);
            std::string tok;
            while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
            if (seeds.empty()) seeds = {7};
            for (auto seed : seeds)
                for (auto spec : t3_rows(dims, seed, true)) {
                    spec.fields["seed"] = std::to_string(seed);
                    rows.push_back(runner.run_row(spec));
                }
        }
        apply_relative_degradation(rows, base.cer_pct);
    } else {
        throw ConfigError("run-table: table must be T1, T2 or T3");
    }
    std::string path = out_path.empty() ? cfg.io.log_dir + "/table_" + table + ".csv" : out_path;
    atomic_write(path, table_to_csv(rows, columns));
    std::cout << table_to_csv(rows, columns);
    std::cout << "output: " << path << "\n";
    return kExitOk;
}

int cmd_dump_attention(const ExperimentConfig& cfg, const std::string& ckpt,
                       const std::string& utt_id, const std::string& out_path) {
    auto [train_set, dev_set] = load_data(cfg.data);
    const ToyUtterance* utt = nullptr;
    for (const auto& u : dev_set)
        if (u.id == utt_id) utt = &u;
    for (const auto& u : train_set)
        if (!utt && u.id == utt_id) utt = &u;
    if (!utt) throw DataError("dump-attention: utterance '" + utt_id + "' not found");
    Model m = build_model(cfg);
    load_checkpoint(ckpt.empty() ? default_ckpt(cfg) : ckpt, m.params());
    NoGradGuard ng;
    Rng rng(0);
    AttentionDump dump;
    train_forward(m, *utt, 0.0, rng, cfg.recipe, nullptr, &dump);
    std::string csv = "step,u,alpha,beta,chunk_len\n";
    for (size_t i = 0; i < dump.alpha.size(); ++i)
        for (size_t u = 0; u < dump.alpha[i].size(); ++u)
            csv += std::to_string(i + 1) + "," + std::to_string(u + 1) + "," +
                   fmt_real(dump.alpha[i][u]) + "," + fmt_real(dump.beta[i][u]) + "," +
                   fmt_real(dump.chunk_len[i]) + "\n";
    std::string path = out_path.empty() ? cfg.io.log_dir + "/attention_" + utt_id + ".csv"
                                        : out_path;
    atomic_write(path, csv);
    std::cout << "output: " << path << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"streamlas: streaming attention-based sequence transduction toolkit"};
    app.require_subcommand(1);

    std::string config_path, init_path, ckpt_path, out_path, trace_path, labels_from;
    std::string split = "dev", mode, utt_id, table, seeds = "7";
    bool no_train = false;
    int workers_flag = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--workers", workers_flag, "parallel evaluation workers");
    };

    auto* train_cmd = app.add_subcommand("train", "train a model per the config recipe");
    add_common(train_cmd);
    train_cmd->add_option("--init", init_path, "checkpoint to initialize from");
    train_cmd->add_option("--labels-from", labels_from,
                          "soft-attention baseline checkpoint for chunk label extraction");

    auto* decode_cmd = app.add_subcommand("decode", "offline decoding to JSON lines");
    add_common(decode_cmd);
    decode_cmd->add_option("--ckpt", ckpt_path, "checkpoint to decode with");
    decode_cmd->add_option("--out", out_path, "output JSONL path");
    decode_cmd->add_option("--split", split, "dev (default) or train");

    auto* stream_cmd = app.add_subcommand("stream-sim", "simulated streaming decode with traces");
    add_common(stream_cmd);
    stream_cmd->add_option("--ckpt", ckpt_path, "checkpoint to decode with");
    stream_cmd->add_option("--out", out_path, "output JSONL path");
    stream_cmd->add_option("--trace", trace_path, "per-token trace CSV path");

    auto* extract_cmd =
        app.add_subcommand("extract-chunk-labels", "chunk-length targets from a baseline");
    add_common(extract_cmd);
    extract_cmd->add_option("--ckpt", ckpt_path, "baseline (soft attention) checkpoint");
    extract_cmd->add_option("--out", out_path, "output JSONL path");
    extract_cmd->add_option("--mode", mode, "greedy or beam");

    auto* table_cmd = app.add_subcommand("run-table", "toy-scale experiment grids");
    add_common(table_cmd);
    table_cmd->add_option("--table", table, "T1, T2 or T3")->required();
    table_cmd->add_option("--out", out_path, "output CSV path");
    table_cmd->add_option("--seeds", seeds, "comma-separated training seeds (T3)");
    table_cmd->add_flag("--no-train", no_train, "fail instead of training missing rows");

    auto* dump_cmd = app.add_subcommand("dump-attention", "teacher-forced attention heatmap data");
    add_common(dump_cmd);
    dump_cmd->add_option("--ckpt", ckpt_path, "checkpoint to inspect");
    dump_cmd->add_option("--utt", utt_id, "utterance id")->required();
    dump_cmd->add_option("--out", out_path, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        ExperimentConfig cfg = load_experiment_config(config_path);
        if (workers_flag > 0) cfg.workers = workers_flag;
        if (train_cmd->parsed()) return cmd_train(cfg, init_path, labels_from);
        if (decode_cmd->parsed()) return cmd_decode(cfg, ckpt_path, out_path, split);
        if (stream_cmd->parsed()) return cmd_stream_sim(cfg, ckpt_path, out_path, trace_path);
        if (extract_cmd->parsed()) return cmd_extract_labels(cfg, ckpt_path, out_path, mode);
        if (table_cmd->parsed())
            return cmd_run_table(cfg, table, out_path, no_train, seeds, cfg.workers);
        if (dump_cmd->parsed()) return cmd_dump_attention(cfg, ckpt_path, utt_id, out_path);
    } catch (const streamlas::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const streamlas::CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const streamlas::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
