#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>

#include "streamlas/config.hpp"

using namespace streamlas;

namespace {

std::string temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

#ifdef STREAMLAS_CLI_PATH
int run_cli(const std::string& args) {
    std::string cmd = std::string(STREAMLAS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}
#endif

}  // namespace

TEST_CASE("empty config yields the reference defaults", "[config]") {
    ExperimentConfig cfg = parse_experiment_config("{}");
    CHECK(cfg.decode.beam == 5);
    CHECK(cfg.decode.temperature == 1.0);
    CHECK(cfg.model.speller_hidden == 512);
    CHECK(cfg.model.emb_dim == 256);
    CHECK(cfg.model.vocab == 6812);
    CHECK(cfg.model.attention.energy_hidden == 512);
    CHECK(cfg.model.attention.chunk_len == 10);
    CHECK(cfg.model.attention.wmax == 40);
    REQUIRE(cfg.model.encoder.layers.size() == 4);
    for (const auto& l : cfg.model.encoder.layers) {
        CHECK(l.direction == Direction::Bi);
        CHECK(l.hidden == 256);
    }
    CHECK(cfg.model.encoder.layers[2].pyramid_input);
    CHECK(cfg.model.encoder.layers[3].pyramid_input);
    CHECK(cfg.model.encoder.lc_block_len == 64);
    CHECK(cfg.model.encoder.lc_right_context == 32);
    CHECK(cfg.recipe.epochs == 30);
    CHECK(cfg.recipe.teacher_force_epochs == 11);
    CHECK(cfg.recipe.ss_ramp_start == 12);
    CHECK(cfg.recipe.ss_ramp_end == 17);
    CHECK(cfg.recipe.ss_final_rate == 0.3);
    CHECK(cfg.recipe.lr == 2e-4);
    CHECK(cfg.recipe.lr_halve_from_epoch == 24);
    CHECK(cfg.recipe.weight_decay == 1e-5);
    CHECK(cfg.recipe.label_smoothing == 0.1);
    CHECK(cfg.recipe.chunk_label_threshold == 0.01);
    CHECK(cfg.data.generator.n_train == 2000);
    CHECK(cfg.data.generator.n_dev == 200);
    CHECK(cfg.data.generator.vocab_size == 20);
    CHECK(cfg.data.generator.noise_std == 0.1);
}

TEST_CASE("config sections parse and validate", "[config]") {
    std::string text = R"({
        "seed": 9,
        "model": {
            "feature_dim": 16, "vocab_size": 23,
            "encoder": {"layers": [
                {"direction": "uni", "hidden": 32},
                {"direction": "uni", "hidden": 32, "pyramid_input": true},
                {"direction": "lc", "hidden": 32, "pyramid_input": true}],
                "nc": 64, "nr": 32},
            "attention": {"kind": "amocha", "smoothing": "m2", "smooth_w": 10,
                          "predictor_mode": "unconstrained", "predictor_activation": "tanh"},
            "speller": {"hidden": 64, "emb_dim": 24}
        },
        "recipe": {"epochs": 3, "lambda": 0.02},
        "decode": {"beam": 2, "temperature": 1.5},
        "io": {"checkpoint_dir": "/tmp/x", "log_dir": "/tmp/y"}
    })";
    ExperimentConfig cfg = parse_experiment_config(text);
    CHECK(cfg.seed == 9);
    CHECK(cfg.model.attention.kind == AttentionKind::Amocha);
    CHECK(cfg.model.attention.smoothing == Smoothing::M2);
    CHECK(cfg.model.attention.predictor_mode == PredictorMode::Unconstrained);
    CHECK(cfg.model.attention.predictor_activation == Activation::Tanh);
    CHECK(cfg.model.encoder.layers[2].direction == Direction::LatencyControlled);
    CHECK(cfg.recipe.lambda == 0.02);
    CHECK(cfg.decode.temperature == 1.5);

    CHECK_THROWS_AS(parse_experiment_config("{\"decode\": {\"beam\": 0}}"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("{\"decode\": {\"temperature\": 0}}"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("{\"recipe\": {\"lambda\": 2}}"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("{\"model\": {\"vocab_size\": 1}}"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("{\"seed\": \"abc\"}"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("not json at all"), ConfigError);
}

TEST_CASE("unknown keys are rejected everywhere", "[config]") {
    // deterministic fuzz: inject a bogus key into every object of a nested config
    std::vector<std::string> paths = {
        R"({"bogus": 1})",
        R"({"model": {"bogus": 1}})",
        R"({"model": {"encoder": {"bogus": 1}}})",
        R"({"model": {"encoder": {"layers": [{"bogus": 1}]}}})",
        R"({"model": {"attention": {"bogus": 1}}})",
        R"({"model": {"speller": {"bogus": 1}}})",
        R"({"recipe": {"bogus": 1}})",
        R"({"data": {"bogus": 1}})",
        R"({"data": {"generator": {"bogus": 1}}})",
        R"({"decode": {"bogus": 1}})",
        R"({"io": {"bogus": 1}})",
    };
    int rejected = 0;
    for (const auto& text : paths) {
        try {
            parse_experiment_config(text);
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("bogus") != std::string::npos);
            ++rejected;
        }
    }
    CHECK(rejected == static_cast<int>(paths.size()));

    // randomized key names
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::string key = "k";
        for (int c = 0; c < 6; ++c) key += static_cast<char>('a' + rng.uniform_int(0, 25));
        std::string text = "{\"recipe\": {\"" + key + "\": 0}}";
        CHECK_THROWS_AS(parse_experiment_config(text), ConfigError);
    }
}

TEST_CASE("generator-backed data loading splits train and dev", "[config]") {
    ExperimentConfig cfg = parse_experiment_config(
        R"({"data": {"generator": {"n_train": 10, "n_dev": 4, "vocab_size": 5,
            "len_min": 2, "len_max": 3, "dur_min": 2, "dur_max": 3, "feature_dim": 4}}})");
    auto [train, dev] = load_data(cfg.data);
    CHECK(train.size() == 10);
    CHECK(dev.size() == 4);
    CHECK(train[0].id == "utt00000");
    CHECK(dev[0].id == "utt00010");
}

#ifdef STREAMLAS_CLI_PATH

TEST_CASE("cli exit codes and artifacts", "[cli]") {
    std::string dir = temp_dir("slas_cli_test");

    // config errors exit with 2
    atomic_write(dir + "/bad.json", "{\"bogus\": 1}");
    CHECK(run_cli("train --config " + dir + "/bad.json") == 2);
    CHECK(run_cli("train --config " + dir + "/does_not_exist.json") == 2);
    CHECK(run_cli("run-table --config " + dir + "/bad.json --table T9") == 2);

    std::string cfg = R"({
        "seed": 5,
        "model": {
            "feature_dim": 4, "vocab_size": 8,
            "encoder": {"layers": [{"direction": "uni", "hidden": 4}], "nc": 8, "nr": 4},
            "attention": {"kind": "mocha", "chunk_len": 2, "energy_hidden": 4,
                          "predictor_hidden": 4},
            "speller": {"hidden": 5, "emb_dim": 3}
        },
        "recipe": {"epochs": 1, "teacher_force_epochs": 1, "lr": 0.05, "batch_size": 4},
        "data": {"generator": {"n_train": 8, "n_dev": 3, "vocab_size": 5, "len_min": 2,
                               "len_max": 3, "dur_min": 2, "dur_max": 3, "noise_std": 0.05,
                               "feature_dim": 4}},
        "decode": {"beam": 2},
        "io": {"checkpoint_dir": "CKPT", "log_dir": "LOG"}
    })";
    // fill in absolute paths
    auto replace_all = [](std::string s, const std::string& from, const std::string& to) {
        size_t pos = 0;
        while ((pos = s.find(from, pos)) != std::string::npos) {
            s.replace(pos, from.size(), to);
            pos += to.size();
        }
        return s;
    };
    std::string cfg_text = replace_all(replace_all(cfg, "CKPT", dir + "/ckpts"), "LOG",
                                       dir + "/logs");
    atomic_write(dir + "/exp.json", cfg_text);

    // missing checkpoint exits with 4
    CHECK(run_cli("decode --config " + dir + "/exp.json") == 4);
    // missing data file exits with 3
    std::string data_cfg = replace_all(cfg_text, "\"data\": {\"generator\"",
                                       "\"data\": {\"train_path\": \"" + dir +
                                           "/missing.jsonl\", \"generator\"");
    atomic_write(dir + "/exp_missing_data.json", data_cfg);
    CHECK(run_cli("train --config " + dir + "/exp_missing_data.json") == 3);

    // a full train run succeeds and leaves artifacts behind
    REQUIRE(run_cli("train --config " + dir + "/exp.json") == 0);
    CHECK(std::filesystem::exists(dir + "/ckpts/ckpt_final.msckpt"));
    CHECK(std::filesystem::exists(dir + "/logs/metrics.csv"));

    // identical config + seed produce identical metrics artifacts
    std::string first = read_file(dir + "/logs/metrics.csv");
    REQUIRE(run_cli("train --config " + dir + "/exp.json") == 0);
    CHECK(read_file(dir + "/logs/metrics.csv") == first);

    // decode + stream-sim + dump-attention work off the checkpoint
    CHECK(run_cli("decode --config " + dir + "/exp.json") == 0);
    CHECK(std::filesystem::exists(dir + "/logs/decode.jsonl"));
    CHECK(run_cli("stream-sim --config " + dir + "/exp.json") == 0);
    CHECK(std::filesystem::exists(dir + "/logs/stream_decode.jsonl"));
    CHECK(std::filesystem::exists(dir + "/logs/stream_trace.csv"));
    std::string trace = read_file(dir + "/logs/stream_trace.csv");
    CHECK(trace.find("id,token,boundary_u,chunk_len,frames_consumed\n") == 0);
    CHECK(run_cli("dump-attention --config " + dir + "/exp.json --utt utt00008") == 0);
    std::string att = read_file(dir + "/logs/attention_utt00008.csv");
    CHECK(att.find("step,u,alpha,beta,chunk_len\n") == 0);

    // label extraction requires a soft-attention-compatible checkpoint; the
    // mocha checkpoint lacks no shared key, so extraction runs fine
    CHECK(run_cli("extract-chunk-labels --config " + dir + "/exp.json --mode greedy") == 0);
    CHECK(std::filesystem::exists(dir + "/logs/chunk_labels.jsonl"));
}

#endif
