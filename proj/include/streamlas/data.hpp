#pragma once

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "streamlas/io.hpp"
#include "streamlas/prng.hpp"
#include "streamlas/tensor.hpp"

// Synthetic toy utterances: every token is rendered as a run of noisy copies
// of a token-specific prototype vector. Generation is fully determined by a
// 64-bit seed with one split stream per utterance, so datasets are
// byte-identical across runs and platforms.

namespace streamlas {

struct ToyUtterance {
    std::string id;
    int T = 0;
    int d = 0;
    std::vector<real> frames;   // row-major [T, d]
    std::vector<int> targets;   // token ids (reserved ids 0..2 never appear)
    std::vector<int> durations; // per-token frame counts; sums to T
};

using Dataset = std::vector<ToyUtterance>;

struct GenSpec {
    std::uint64_t seed = 1234;
    int n_utts = 2200;
    int vocab_size = 20;  // distinct real tokens; ids start after SOS/EOS/UNK
    int len_min = 4, len_max = 12;
    int dur_min = 4, dur_max = 10;
    double noise_std = 0.1;
    int feature_dim = 16;
};

inline constexpr int kReservedTokens = 3;  // SOS, EOS, UNK

inline Dataset gen_toy_dataset(const GenSpec& spec) {
    if (spec.vocab_size < 2) throw DataError("gen_toy_dataset: vocab_size must be >= 2");
    if (spec.len_min < 1 || spec.len_max < spec.len_min || spec.dur_min < 1 ||
        spec.dur_max < spec.dur_min)
        throw DataError("gen_toy_dataset: invalid length/duration ranges");
    Rng root(spec.seed);
    Rng proto_rng = root.fork(0);
    std::vector<std::vector<real>> protos(spec.vocab_size);
    for (auto& p : protos) {
        p.resize(spec.feature_dim);
        for (auto& v : p) v = static_cast<real>(proto_rng.normal());
    }
    Dataset ds(spec.n_utts);
    for (int i = 0; i < spec.n_utts; ++i) {
        Rng rng = root.fork(static_cast<std::uint64_t>(i) + 1);
        ToyUtterance& u = ds[i];
        char buf[24];
        std::snprintf(buf, sizeof(buf), "utt%05d", i);
        u.id = buf;
        u.d = spec.feature_dim;
        int len = static_cast<int>(rng.uniform_int(spec.len_min, spec.len_max));
        for (int t = 0; t < len; ++t) {
            int sym = static_cast<int>(rng.uniform_int(0, spec.vocab_size - 1));
            int dur = static_cast<int>(rng.uniform_int(spec.dur_min, spec.dur_max));
            u.targets.push_back(kReservedTokens + sym);
            u.durations.push_back(dur);
            for (int f = 0; f < dur; ++f)
                for (int j = 0; j < spec.feature_dim; ++j) {
                    double v = protos[sym][j] + spec.noise_std * rng.normal();
                    // Quantize to binary32 so serialized datasets round-trip exactly.
                    u.frames.push_back(static_cast<real>(static_cast<float>(v)));
                }
            u.T += dur;
        }
    }
    return ds;
}

// Generator self-check: structural invariants of any well-formed dataset.
inline void audit_dataset(const Dataset& ds) {
    for (const auto& u : ds) {
        if (u.targets.empty()) throw DataError("dataset audit: empty targets in " + u.id);
        if (u.targets.size() != u.durations.size())
            throw DataError("dataset audit: targets/durations length mismatch in " + u.id);
        int total = 0;
        for (int dur : u.durations) {
            if (dur < 1) throw DataError("dataset audit: nonpositive duration in " + u.id);
            total += dur;
        }
        if (total != u.T) throw DataError("dataset audit: durations do not sum to T in " + u.id);
        if (u.frames.size() != static_cast<size_t>(u.T) * u.d)
            throw DataError("dataset audit: frame buffer size mismatch in " + u.id);
        for (int t : u.targets)
            if (t < kReservedTokens) throw DataError("dataset audit: reserved token id in " + u.id);
    }
}

// ---------------------------------------------------------------------------
// JSON-lines serialization (frames as base64 of little-endian binary32)

inline std::string utterance_to_jsonl(const ToyUtterance& u) {
    nlohmann::json j;
    j["id"] = u.id;
    j["T"] = u.T;
    j["d"] = u.d;
    j["targets"] = u.targets;
    j["durations"] = u.durations;
    auto bytes = pack_f32(u.frames);
    j["frames_b64"] = b64::encode(bytes.data(), bytes.size());
    return j.dump();
}

inline ToyUtterance utterance_from_jsonl(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("dataset: bad JSON line: ") + e.what());
    }
    ToyUtterance u;
    try {
        u.id = j.at("id").get<std::string>();
        u.T = j.at("T").get<int>();
        u.d = j.at("d").get<int>();
        u.targets = j.at("targets").get<std::vector<int>>();
        u.durations = j.at("durations").get<std::vector<int>>();
        auto bytes = b64::decode(j.at("frames_b64").get<std::string>());
        u.frames = unpack_f32(bytes.data(), bytes.size());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("dataset: missing or mistyped field: ") + e.what());
    }
    if (u.frames.size() != static_cast<size_t>(u.T) * u.d)
        throw DataError("dataset: frame payload does not match T x d for " + u.id);
    return u;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
    std::string out;
    for (const auto& u : ds) {
        out += utterance_to_jsonl(u);
        out += '\n';
    }
    atomic_write(path, out);
}

inline Dataset load_dataset(const std::string& path) {
    std::istringstream in(read_file(path));
    Dataset ds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ds.push_back(utterance_from_jsonl(line));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// character error rate

// Levenshtein(ref, hyp) / len(ref); substitutions, insertions and deletions
// all cost 1.
inline int levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
    size_t n = b.size();
    std::vector<int> prev(n + 1), cur(n + 1);
    for (size_t j = 0; j <= n; ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= n; ++j) {
            int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

inline double cer(const std::vector<int>& ref, const std::vector<int>& hyp) {
    if (ref.empty()) throw DataError("cer: empty reference");
    return static_cast<double>(levenshtein(ref, hyp)) / static_cast<double>(ref.size());
}

}  // namespace streamlas
