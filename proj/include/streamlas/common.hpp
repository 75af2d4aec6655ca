#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace streamlas {

// Library-wide scalar type. Tests and oracle tolerances assume 64-bit;
// define STREAMLAS_REAL32 to train in 32-bit instead.
#ifdef STREAMLAS_REAL32
using real = float;
#else
using real = double;
#endif

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct CheckpointError : Error {
    using Error::Error;
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace streamlas
