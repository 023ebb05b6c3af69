#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "spinecycle/volume.hpp"

namespace testing {

using namespace spinecycle;

inline GridGeometry geom(std::size_t nx, std::size_t ny, std::size_t nz, double spacing = 1.0, Vec3 origin = {}) {
    GridGeometry g;
    g.sizes = {nx, ny, nz};
    g.spacing = {spacing, spacing, spacing};
    g.origin = origin;
    return g;
}

/// Sets voxels [lo, hi) on every axis.
inline void fill_box(MaskGrid& m, std::array<std::size_t, 3> lo, std::array<std::size_t, 3> hi) {
    for (std::size_t k = lo[2]; k < hi[2]; ++k)
        for (std::size_t j = lo[1]; j < hi[1]; ++j)
            for (std::size_t i = lo[0]; i < hi[0]; ++i) m.at(i, j, k) = 1;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static std::atomic<int> n{0};
        path = std::filesystem::temp_directory_path() /
               ("spinecycle-test-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace testing
