#pragma once

#include <filesystem>
#include <fstream>

#include "wonderland/core/binary_io.hpp"
#include "wonderland/gsplat/cloud.hpp"

namespace wonderland::lalrm {

// WLND: "WLND", u32 version, u64 count, then positions (3n), scales (3n),
// quaternions (4n, w x y z), colors (3n), opacities (n); float32 little-endian.

constexpr std::uint32_t kSplatVersion = 1;

inline void write_splat(std::ostream &os, const gsplat::GaussianCloud &cloud) {
    cloud.check_shapes();
    os.write("WLND", 4);
    binary::put<std::uint32_t>(os, kSplatVersion);
    binary::put<std::uint64_t>(os, cloud.size());
    for (const Tensor *t : {&cloud.positions, &cloud.scales, &cloud.rotations, &cloud.colors, &cloud.opacities})
        binary::put_floats(os, t->data().data(), t->numel());
}

inline void write_splat(const std::filesystem::path &path, const gsplat::GaussianCloud &cloud) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_splat(os, cloud);
    if (!os) throw IoError("failed writing " + path.string());
}

inline gsplat::GaussianCloud read_splat(std::istream &is, const std::string &source = "<stream>") {
    binary::expect_magic(is, "WLND", source);
    const auto version = binary::get<std::uint32_t>(is, "version");
    if (version != kSplatVersion) throw FormatError(source + ": unsupported WLND version " + std::to_string(version));
    const auto n = static_cast<std::size_t>(binary::get<std::uint64_t>(is, "count"));
    gsplat::GaussianCloud c;
    c.positions = Tensor({n, 3}, binary::get_floats(is, n * 3, "positions"));
    c.scales = Tensor({n, 3}, binary::get_floats(is, n * 3, "scales"));
    c.rotations = Tensor({n, 4}, binary::get_floats(is, n * 4, "quaternions"));
    c.colors = Tensor({n, 3}, binary::get_floats(is, n * 3, "colors"));
    c.opacities = Tensor({n, 1}, binary::get_floats(is, n, "opacities"));
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError(source + ": trailing bytes after WLND payload");
    return c;
}

inline gsplat::GaussianCloud read_splat(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open splat " + path.string());
    return read_splat(is, path.string());
}

}  // namespace wonderland::lalrm
