#pragma once

#include <cstring>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "streamlas/io.hpp"
#include "streamlas/tensor.hpp"

// Checkpoint container: a text manifest (key -> shape + byte offset) followed
// by a flat little-endian binary blob of 32-bit floats.
//
//   MSCKPT1
//   <entry count>
//   <key> <ndim> <dims...> <byte offset>
//   ...
//   DATA
//   <blob>

namespace streamlas {

inline std::string serialize_checkpoint(const ParamList& params) {
    std::ostringstream head;
    head << "MSCKPT1\n" << params.size() << "\n";
    std::string blob;
    for (const auto& [key, var] : params) {
        head << key << " " << var->shape.size();
        for (int d : var->shape) head << " " << d;
        head << " " << blob.size() << "\n";
        auto bytes = pack_f32(var->value);
        blob.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    }
    head << "DATA\n";
    return head.str() + blob;
}

inline void save_checkpoint(const std::string& path, const ParamList& params) {
    atomic_write(path, serialize_checkpoint(params));
}

struct CheckpointEntry {
    std::vector<int> shape;
    std::vector<real> values;
};

inline std::map<std::string, CheckpointEntry> parse_checkpoint(const std::string& contents) {
    std::istringstream in(contents);
    std::string tag;
    if (!std::getline(in, tag) || tag != "MSCKPT1")
        throw CheckpointError("checkpoint: bad format tag (expected MSCKPT1)");
    size_t count = 0;
    in >> count;
    struct RawEntry {
        std::string key;
        std::vector<int> shape;
        size_t offset;
    };
    std::vector<RawEntry> raw(count);
    for (size_t i = 0; i < count; ++i) {
        int ndim = 0;
        if (!(in >> raw[i].key >> ndim) || ndim < 0 || ndim > 2)
            throw CheckpointError("checkpoint: malformed manifest entry " + std::to_string(i));
        raw[i].shape.resize(ndim);
        for (int d = 0; d < ndim; ++d) in >> raw[i].shape[d];
        in >> raw[i].offset;
    }
    in >> tag;
    if (tag != "DATA") throw CheckpointError("checkpoint: missing DATA marker");
    in.get();  // newline after DATA
    size_t blob_start = static_cast<size_t>(in.tellg());
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(contents.data());
    std::map<std::string, CheckpointEntry> entries;
    for (const auto& r : raw) {
        size_t n = Node::numel_of(r.shape);
        if (blob_start + r.offset + n * 4 > contents.size())
            throw CheckpointError("checkpoint: blob truncated at key " + r.key);
        CheckpointEntry e;
        e.shape = r.shape;
        e.values = unpack_f32(bytes + blob_start + r.offset, n * 4);
        entries.emplace(r.key, std::move(e));
    }
    return entries;
}

struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> fresh;    // model keys absent from the checkpoint
    std::vector<std::string> ignored;  // checkpoint keys absent from the model
};

// Loads matching keys into the model parameters. Keys missing from the
// checkpoint keep their current (freshly initialized) values; a key present
// in both with a different shape is an error naming that key.
inline LoadReport load_checkpoint(const std::string& path, const ParamList& params) {
    std::string contents;
    try {
        contents = read_file(path);
    } catch (const DataError& e) {
        throw CheckpointError(e.what());
    }
    auto entries = parse_checkpoint(contents);
    LoadReport report;
    for (const auto& [key, var] : params) {
        auto it = entries.find(key);
        if (it == entries.end()) {
            report.fresh.push_back(key);
            continue;
        }
        if (it->second.shape != var->shape)
            throw CheckpointError("checkpoint: shape mismatch for key '" + key + "': file has " +
                                  shape_str(it->second.shape) + ", model has " +
                                  shape_str(var->shape));
        var->value = it->second.values;
        report.loaded.push_back(key);
        entries.erase(it);
    }
    for (const auto& [key, e] : entries) report.ignored.push_back(key);
    return report;
}

}  // namespace streamlas
