#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "wonderland/core/error.hpp"

namespace wonderland::binary {

// Little-endian scalar and array I/O.

template <class T>
T byteswap_if_needed(T v) {
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        return v;
    } else {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
        return v;
    }
}

template <class T>
void put(std::ostream &os, T v) {
    v = byteswap_if_needed(v);
    os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <class T>
T get(std::istream &is, const std::string &what) {
    T v;
    if (!is.read(reinterpret_cast<char *>(&v), sizeof(T))) throw FormatError("truncated file while reading " + what);
    return byteswap_if_needed(v);
}

inline void put_floats(std::ostream &os, const float *data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char *>(data), static_cast<std::streamsize>(n * sizeof(float)));
    } else {
        for (std::size_t i = 0; i < n; ++i) put(os, data[i]);
    }
}

inline std::vector<float> get_floats(std::istream &is, std::size_t n, const std::string &what) {
    std::vector<float> v(n);
    if (!is.read(reinterpret_cast<char *>(v.data()), static_cast<std::streamsize>(n * sizeof(float))))
        throw FormatError("truncated file while reading " + what);
    if constexpr (std::endian::native != std::endian::little)
        for (auto &x : v) x = byteswap_if_needed(x);
    return v;
}

inline void expect_magic(std::istream &is, const char (&magic)[5], const std::string &source) {
    char buf[4];
    if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
        throw FormatError(source + ": not a " + std::string(magic, 4) + " file (bad magic)");
}

}  // namespace wonderland::binary
