#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "wonderland/codec/codec.hpp"
#include "wonderland/core/binary_io.hpp"
#include "wonderland/nn/module.hpp"

namespace wonderland::pipeline {

// WLCK layout (little endian):
//   "WLCK" u32 version
//   u64 n, n bytes of "key = value\n" config text
//   u32 count, then per tensor: u32 name length, name, u8 dtype (0 = f32), u8 rank, u64 shape[rank], u64 payload offset
//   float32 payload

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

struct Checkpoint {
    std::map<std::string, std::string> config;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor *find(const std::string &name) const {
        for (const auto &[n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
    const Tensor &at(const std::string &name) const {
        if (const Tensor *t = find(name)) return *t;
        throw FormatError("checkpoint has no tensor '" + name + "'");
    }
    const std::string &value(const std::string &key) const {
        auto it = config.find(key);
        if (it == config.end()) throw FormatError("checkpoint config has no key '" + key + "'");
        return it->second;
    }
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto &[n, _] : tensors) out.push_back(n);
        return out;
    }
};

inline Checkpoint checkpoint_of(const nn::Module &module, std::map<std::string, std::string> config) {
    Checkpoint ck;
    ck.config = std::move(config);
    for (const auto &[name, t] : module.named_parameters()) ck.tensors.emplace_back(name, t.detach());
    return ck;
}

/// Copies every tensor into the module; the module structure must match exactly.
inline void load_into(const Checkpoint &ck, nn::Module &module) {
    const auto params = module.named_parameters();
    if (params.size() != ck.tensors.size())
        throw StateError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model expects " + std::to_string(params.size()));
    std::map<std::string, Tensor> values;
    for (const auto &[n, t] : ck.tensors) values.emplace(n, t);
    const auto missing = module.load_values(values);
    if (!missing.empty()) throw StateError("checkpoint is missing tensor '" + missing.front() + "'");
}

inline void write_checkpoint(std::ostream &os, const Checkpoint &ck) {
    os.write("WLCK", 4);
    binary::put<std::uint32_t>(os, kCheckpointVersion);
    std::string text;
    for (const auto &[k, v] : ck.config) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw ContractError("config entry '" + k + "' cannot be stored");
        text += k + " = " + v + "\n";
    }
    binary::put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.tensors.size()));
    std::uint64_t offset = 0;
    for (const auto &[name, t] : ck.tensors) {
        binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        binary::put<std::uint8_t>(os, kDtypeF32);
        binary::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) binary::put<std::uint64_t>(os, d);
        binary::put<std::uint64_t>(os, offset);
        offset += t.numel() * sizeof(float);
    }
    for (const auto &[_, t] : ck.tensors) binary::put_floats(os, t.data().data(), t.numel());
}

inline Checkpoint read_checkpoint(std::istream &is, const std::string &source = "<stream>") {
    binary::expect_magic(is, "WLCK", source);
    const auto version = binary::get<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion) throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    const auto text_len = binary::get<std::uint64_t>(is, "config length");
    if (text_len > (1u << 24)) throw FormatError(source + ": implausible config block size");
    std::string text(text_len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(text_len))) throw FormatError(source + ": truncated config block");
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw FormatError(source + ": malformed config line '" + line + "'");
        ck.config[line.substr(0, eq)] = line.substr(eq + 3);
    }
    const auto count = binary::get<std::uint32_t>(is, "tensor count");
    std::vector<std::pair<Shape, std::uint64_t>> layout;
    std::uint64_t expected = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = binary::get<std::uint32_t>(is, "name length");
        if (len > 4096) throw FormatError(source + ": implausible tensor name length");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw FormatError(source + ": truncated manifest");
        if (binary::get<std::uint8_t>(is, "dtype") != kDtypeF32) throw FormatError(source + ": tensor '" + name + "' has an unknown dtype");
        const auto rank = binary::get<std::uint8_t>(is, "rank");
        Shape shape;
        std::uint64_t n = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            shape.push_back(binary::get<std::uint64_t>(is, "shape"));
            if (shape.back() > (1ull << 32)) throw FormatError(source + ": implausible shape for '" + name + "'");
            n *= shape.back();
        }
        const auto offset = binary::get<std::uint64_t>(is, "offset");
        if (offset != expected) throw FormatError(source + ": tensor '" + name + "' has offset " + std::to_string(offset) + ", expected " + std::to_string(expected));
        expected += n * sizeof(float);
        layout.emplace_back(shape, n);
        ck.tensors.emplace_back(std::move(name), Tensor());
    }
    for (std::size_t i = 0; i < layout.size(); ++i)
        ck.tensors[i].second = Tensor(layout[i].first, binary::get_floats(is, layout[i].second, ck.tensors[i].first));
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError(source + ": trailing bytes after payload");
    return ck;
}

inline void write_checkpoint(const std::filesystem::path &path, const Checkpoint &ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_checkpoint(os, ck);
    if (!os) throw IoError("failed writing " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    return read_checkpoint(is, path.string());
}

inline Checkpoint latent_checkpoint(const codec::VideoLatent &z) {
    Checkpoint ck;
    ck.config["kind"] = "latent";
    ck.config["codec_id"] = z.codec_id;
    ck.config["r_t"] = std::to_string(z.rates.r_t);
    ck.config["r_s"] = std::to_string(z.rates.r_s);
    ck.tensors.emplace_back("data", z.data.detach());
    return ck;
}

inline codec::VideoLatent latent_from(const Checkpoint &ck) {
    if (ck.config.count("kind") == 0 || ck.value("kind") != "latent") throw FormatError("checkpoint is not a latent file");
    codec::VideoLatent z;
    z.codec_id = ck.value("codec_id");
    try {
        z.rates.r_t = std::stoul(ck.value("r_t"));
        z.rates.r_s = std::stoul(ck.value("r_s"));
    } catch (const std::logic_error &) {
        throw FormatError("latent file has non-numeric rates");
    }
    z.data = ck.at("data");
    if (z.data.rank() != 4) throw FormatError("latent data must be rank 4, got " + to_string(z.data.shape()));
    return z;
}

}  // namespace wonderland::pipeline
