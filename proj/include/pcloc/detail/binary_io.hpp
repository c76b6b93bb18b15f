#pragma once

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace pcloc::detail {

// Little-endian binary file helpers (native on every supported target).

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T value;
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
        throw std::runtime_error("truncated binary file");
    return value;
}

inline void write_magic(std::ofstream& out, const std::string& magic) {
    out.write(magic.data(), std::streamsize(magic.size()));
}

inline void expect_magic(std::ifstream& in, const std::string& magic) {
    std::string buf(magic.size(), '\0');
    if (!in.read(buf.data(), std::streamsize(buf.size())) || buf != magic)
        throw std::runtime_error("bad file magic (expected " + magic + ")");
}

}  // namespace pcloc::detail
