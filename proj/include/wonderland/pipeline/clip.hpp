#pragma once

#include <vector>

#include "wonderland/numerics/tensor.hpp"

namespace wonderland::pipeline {

struct ClipSample {
    std::vector<std::size_t> seen;
    std::vector<std::size_t> unseen;
    std::size_t stride = 1;
    std::size_t start = 0;
};

inline ClipSample sample_clip_at(std::size_t num_frames_src, std::size_t T, std::size_t s, std::size_t f0) {
    if (T == 0 || s == 0) throw ContractError("clip needs T >= 1 and stride >= 1");
    const std::size_t span = s * (T - 1);
    if (span >= num_frames_src || f0 + span >= num_frames_src)
        throw ContractError("clip of " + std::to_string(T) + " frames at stride " + std::to_string(s) + " needs " + std::to_string(f0 + span + 1) +
                            " source frames, have " + std::to_string(num_frames_src));
    ClipSample c;
    c.stride = s;
    c.start = f0;
    for (std::size_t k = 0; k < T; ++k) c.seen.push_back(f0 + k * s);
    for (std::size_t f = f0; f <= f0 + span; ++f)
        if ((f - f0) % s != 0) c.unseen.push_back(f);
    return c;
}

/// Uniformly random valid start frame.
inline ClipSample sample_clip(std::size_t num_frames_src, std::size_t T, std::size_t s, Generator &gen) {
    if (T == 0 || s == 0) throw ContractError("clip needs T >= 1 and stride >= 1");
    const std::size_t span = s * (T - 1);
    if (span >= num_frames_src)
        throw ContractError("clip of " + std::to_string(T) + " frames at stride " + std::to_string(s) + " needs " + std::to_string(span + 1) +
                            " source frames, have " + std::to_string(num_frames_src));
    return sample_clip_at(num_frames_src, T, s, gen.index(num_frames_src - span));
}

}  // namespace wonderland::pipeline
