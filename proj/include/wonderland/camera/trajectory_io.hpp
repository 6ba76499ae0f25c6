#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "wonderland/camera/camera.hpp"

namespace wonderland::camera {

// One frame per line: f fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz
// Lines starting with '#' and blank lines are ignored.

inline void write_trajectory(std::ostream &os, const Trajectory &traj) {
    os << "# f fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n";
    os << std::setprecision(17);
    for (std::size_t f = 0; f < traj.size(); ++f) {
        const auto &p = traj[f];
        os << f << ' ' << p.K(0, 0) << ' ' << p.K(1, 1) << ' ' << p.K(0, 2) << ' ' << p.K(1, 2);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) os << ' ' << p.R(r, c);
        os << ' ' << p.t.x() << ' ' << p.t.y() << ' ' << p.t.z() << '\n';
    }
}

inline void write_trajectory(const std::filesystem::path &path, const Trajectory &traj) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_trajectory(os, traj);
    if (!os) throw IoError("failed writing " + path.string());
}

inline Trajectory read_trajectory(std::istream &is, const std::string &source = "<stream>") {
    Trajectory traj;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        std::size_t f = 0;
        double fx, fy, cx, cy, r[9], t[3];
        std::string where = source + ":" + std::to_string(lineno);
        if (!(ls >> f >> fx >> fy >> cx >> cy)) throw FormatError(where + ": expected frame index and intrinsics");
        for (double &x : r)
            if (!(ls >> x)) throw FormatError(where + ": expected 9 rotation entries");
        for (double &x : t)
            if (!(ls >> x)) throw FormatError(where + ": expected 3 translation entries");
        std::string extra;
        if (ls >> extra) throw FormatError(where + ": trailing field '" + extra + "'");
        if (f != traj.size()) throw FormatError(where + ": frame index " + std::to_string(f) + ", expected " + std::to_string(traj.size()));
        CameraPose p;
        p.K = intrinsics(fx, fy, cx, cy);
        p.R << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
        p.t = Vec3(t[0], t[1], t[2]);
        try {
            validate(p, 1e-4);
        } catch (const ContractError &e) {
            throw FormatError(where + ": " + e.what());
        }
        traj.poses.push_back(p);
    }
    if (traj.poses.empty()) throw FormatError(source + ": no frames");
    for (const auto &p : traj.poses)
        if (!p.K.isApprox(traj.poses.front().K, 1e-9)) traj.varying_intrinsics = true;
    return traj;
}

inline Trajectory read_trajectory(const std::filesystem::path &path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open trajectory " + path.string());
    return read_trajectory(is, path.string());
}

}  // namespace wonderland::camera
