#pragma once

#include <algorithm>
#include <filesystem>

#include "wonderland/camera/trajectory_io.hpp"
#include "wonderland/core/parallel.hpp"
#include "wonderland/lalrm/splat_io.hpp"
#include "wonderland/pipeline/image_io.hpp"
#include "wonderland/pipeline/scene.hpp"

namespace wonderland::pipeline {

// Dataset layout: DIR/scene_00000/{trajectory.txt, scene.wlnd, frames/frame_%05d.png}

struct SceneRecord {
    std::string name;
    gsplat::GaussianCloud cloud;
    camera::Trajectory trajectory;
    std::size_t height = 0, width = 0;
};

inline std::string scene_dir_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%05zu", i);
    return buf;
}

inline void write_scene(const std::filesystem::path &dir, const SyntheticScene &scene) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    camera::write_trajectory(dir / "trajectory.txt", scene.trajectory);
    lalrm::write_splat(dir / "scene.wlnd", scene.cloud);
    write_frames(dir / "frames", scene.video);
}

/// Generates and writes scenes seed, seed+1, ... in parallel.
inline void write_dataset(const std::filesystem::path &dir, std::size_t n, std::uint64_t seed, const SceneOptions &opt) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create dataset directory " + dir.string());
    parallel_chunks(n, 1, [&](std::size_t lo, std::size_t hi, std::size_t) {
        for (std::size_t i = lo; i < hi; ++i) write_scene(dir / scene_dir_name(i), generate_scene(seed + i, opt));
    });
}

inline SceneRecord read_scene(const std::filesystem::path &dir) {
    SceneRecord r;
    r.name = dir.filename().string();
    r.trajectory = camera::read_trajectory(dir / "trajectory.txt");
    r.cloud = lalrm::read_splat(dir / "scene.wlnd");
    const Tensor first = read_png(frame_path(dir / "frames", 0));
    r.height = first.dim(0);
    r.width = first.dim(1);
    return r;
}

inline std::vector<SceneRecord> read_dataset(const std::filesystem::path &dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
    std::vector<std::filesystem::path> dirs;
    for (const auto &e : std::filesystem::directory_iterator(dir))
        if (e.is_directory() && e.path().filename().string().rfind("scene_", 0) == 0) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    std::vector<SceneRecord> out;
    for (const auto &d : dirs) out.push_back(read_scene(d));
    return out;
}

}  // namespace wonderland::pipeline
