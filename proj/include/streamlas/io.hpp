#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "streamlas/common.hpp"

namespace streamlas {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and dataset formats assume a little-endian host");

// Shortest-roundtrip-ish decimal formatting used by all CSV/JSON writers so
// repeated runs produce byte-identical artifacts.
inline std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace b64 {

inline const char* alphabet() {
    return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string encode(const std::uint8_t* data, size_t n) {
    const char* tab = alphabet();
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= n; i += 3) {
        std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out += tab[(v >> 18) & 63];
        out += tab[(v >> 12) & 63];
        out += tab[(v >> 6) & 63];
        out += tab[v & 63];
    }
    if (i + 1 == n) {
        std::uint32_t v = data[i] << 16;
        out += tab[(v >> 18) & 63];
        out += tab[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == n) {
        std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
        out += tab[(v >> 18) & 63];
        out += tab[(v >> 12) & 63];
        out += tab[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

inline std::vector<std::uint8_t> decode(const std::string& s) {
    int rev[256];
    std::memset(rev, -1, sizeof(rev));
    const char* tab = alphabet();
    for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(tab[i])] = i;
    std::vector<std::uint8_t> out;
    out.reserve(s.size() / 4 * 3);
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : s) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        int v = rev[static_cast<unsigned char>(c)];
        if (v < 0) throw DataError("base64: invalid character in payload");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

}  // namespace b64

// Floats are serialized as little-endian IEEE-754 binary32 everywhere a file
// format stores numeric payloads.
inline std::vector<std::uint8_t> pack_f32(const std::vector<real>& vals) {
    std::vector<std::uint8_t> bytes(vals.size() * 4);
    for (size_t i = 0; i < vals.size(); ++i) {
        float f = static_cast<float>(vals[i]);
        std::memcpy(&bytes[i * 4], &f, 4);
    }
    return bytes;
}

inline std::vector<real> unpack_f32(const std::uint8_t* bytes, size_t nbytes) {
    if (nbytes % 4 != 0) throw DataError("float payload length not a multiple of 4");
    std::vector<real> vals(nbytes / 4);
    for (size_t i = 0; i < vals.size(); ++i) {
        float f;
        std::memcpy(&f, bytes + i * 4, 4);
        vals[i] = static_cast<real>(f);
    }
    return vals;
}

// All artifact writers go through this: write to a sibling temp file, then
// rename into place so a crash never leaves a half-written artifact.
inline void atomic_write(const std::string& path, const std::string& contents) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open for writing: " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw DataError("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

}  // namespace streamlas
