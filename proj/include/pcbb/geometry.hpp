#ifndef PCBB_GEOMETRY_HPP
#define PCBB_GEOMETRY_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pcbb/errors.hpp"

namespace pcbb::geometry {

struct Point3 {
    double x = 0.0, y = 0.0, z = 0.0;

    bool operator==(const Point3&) const = default;
};

// Ordered point set with every coordinate in [-1, 1].
struct PointCloud {
    std::vector<Point3> points;

    std::size_t size() const { return points.size(); }

    bool operator==(const PointCloud&) const = default;
};

// Binary occupancy cube of side 2^depth, flattened x-fastest.
struct VoxelGrid {
    int depth = 0;
    std::vector<std::uint8_t> occupancy;

    std::size_t side() const { return std::size_t{1} << depth; }
    std::size_t voxel_count() const { return std::size_t{1} << (3 * depth); }

    std::size_t raster_index(std::size_t ix, std::size_t iy, std::size_t iz) const {
        const std::size_t s = side();
        return ix + s * (iy + s * iz);
    }

    std::size_t occupied_count() const {
        std::size_t n = 0;
        for (auto v : occupancy) n += v;
        return n;
    }

    bool operator==(const VoxelGrid& other) const {
        return depth == other.depth && occupancy == other.occupancy;
    }
};

enum class ShapeKind { SphereSurface, BoxSurface, Plane, Cluster };

inline ShapeKind parse_shape_kind(const std::string& name) {
    if (name == "sphere-surface") return ShapeKind::SphereSurface;
    if (name == "box-surface") return ShapeKind::BoxSurface;
    if (name == "plane") return ShapeKind::Plane;
    if (name == "cluster") return ShapeKind::Cluster;
    throw InvalidInputError("unknown shape kind: " + name);
}

inline const char* shape_kind_name(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::SphereSurface: return "sphere-surface";
        case ShapeKind::BoxSurface: return "box-surface";
        case ShapeKind::Plane: return "plane";
        case ShapeKind::Cluster: return "cluster";
    }
    return "?";
}

// Radius / extent constants of the synthetic generators, exposed so tests
// can assert against them.
inline constexpr double kSphereRadius = 0.8;
inline constexpr double kBoxHalfSide = 0.8;

// Deterministic synthetic point clouds standing in for mesh-sampled data.
// Sphere and box families are dense around the center; plane and cluster
// families scatter along the axes.
inline PointCloud gen_synthetic(ShapeKind kind, std::size_t n_points, std::uint64_t seed) {
    if (n_points < 1) throw InvalidInputError("gen_synthetic: n_points must be >= 1");
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(kind) + 1)));
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::uniform_real_distribution<double> uni01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    PointCloud pc;
    pc.points.reserve(n_points);

    switch (kind) {
        case ShapeKind::SphereSurface: {
            for (std::size_t i = 0; i < n_points; ++i) {
                double gx = gauss(rng), gy = gauss(rng), gz = gauss(rng);
                double n = std::sqrt(gx * gx + gy * gy + gz * gz);
                if (n < 1e-12) { --i; continue; }
                pc.points.push_back({kSphereRadius * gx / n, kSphereRadius * gy / n,
                                     kSphereRadius * gz / n});
            }
            break;
        }
        case ShapeKind::BoxSurface: {
            std::uniform_int_distribution<int> face(0, 5);
            for (std::size_t i = 0; i < n_points; ++i) {
                int f = face(rng);
                double u = kBoxHalfSide * uni(rng);
                double v = kBoxHalfSide * uni(rng);
                double w = (f % 2 == 0) ? -kBoxHalfSide : kBoxHalfSide;
                Point3 p;
                switch (f / 2) {
                    case 0: p = {w, u, v}; break;
                    case 1: p = {u, w, v}; break;
                    default: p = {u, v, w}; break;
                }
                pc.points.push_back(p);
            }
            break;
        }
        case ShapeKind::Plane: {
            // Tilted planar patch spanning most of the cube.
            for (std::size_t i = 0; i < n_points; ++i) {
                double u = uni(rng) * 0.9;
                double v = uni(rng) * 0.9;
                pc.points.push_back({u, v, 0.35 * u - 0.2 * v});
            }
            break;
        }
        case ShapeKind::Cluster: {
            constexpr int kClusters = 5;
            std::array<Point3, kClusters> centers;
            for (auto& c : centers) c = {0.7 * uni(rng), 0.7 * uni(rng), 0.7 * uni(rng)};
            std::uniform_int_distribution<int> pick(0, kClusters - 1);
            for (std::size_t i = 0; i < n_points; ++i) {
                const Point3& c = centers[static_cast<std::size_t>(pick(rng))];
                Point3 p;
                do {
                    p = {c.x + 0.12 * gauss(rng), c.y + 0.12 * gauss(rng),
                         c.z + 0.12 * gauss(rng)};
                } while (std::abs(p.x) > 1.0 || std::abs(p.y) > 1.0 || std::abs(p.z) > 1.0);
                pc.points.push_back(p);
            }
            break;
        }
    }
    return pc;
}

inline std::size_t axis_bin(double coord, int depth) {
    const std::size_t side = std::size_t{1} << depth;
    // floor((c + 1) * 2^(d-1)); c == 1.0 clamps into the last bin so the
    // partition of [-1, 1] is exhaustive.
    double scaled = (coord + 1.0) * static_cast<double>(std::size_t{1} << depth) * 0.5;
    auto idx = static_cast<long long>(std::floor(scaled));
    if (idx < 0) idx = 0;
    if (idx >= static_cast<long long>(side)) idx = static_cast<long long>(side) - 1;
    return static_cast<std::size_t>(idx);
}

inline VoxelGrid voxelize(const PointCloud& pc, int depth) {
    if (depth < 1 || depth > 8) {
        throw InvalidInputError("voxelize: depth must be in [1, 8], got " +
                                std::to_string(depth));
    }
    VoxelGrid grid;
    grid.depth = depth;
    grid.occupancy.assign(std::size_t{1} << (3 * depth), 0);
    for (const Point3& p : pc.points) {
        std::size_t ix = axis_bin(p.x, depth);
        std::size_t iy = axis_bin(p.y, depth);
        std::size_t iz = axis_bin(p.z, depth);
        grid.occupancy[grid.raster_index(ix, iy, iz)] = 1;
    }
    return grid;
}

// One point per occupied voxel, at the voxel center.
inline PointCloud devoxelize(const VoxelGrid& grid) {
    const std::size_t side = grid.side();
    const double inv = 2.0 / static_cast<double>(side);
    PointCloud pc;
    for (std::size_t iz = 0; iz < side; ++iz)
        for (std::size_t iy = 0; iy < side; ++iy)
            for (std::size_t ix = 0; ix < side; ++ix) {
                if (!grid.occupancy[grid.raster_index(ix, iy, iz)]) continue;
                pc.points.push_back({(static_cast<double>(ix) + 0.5) * inv - 1.0,
                                     (static_cast<double>(iy) + 0.5) * inv - 1.0,
                                     (static_cast<double>(iz) + 0.5) * inv - 1.0});
            }
    if (pc.points.empty()) throw InvalidInputError("devoxelize: grid has no occupied voxel");
    return pc;
}

// Plain text, one "x y z" per line, 9 significant digits.
inline void save_points(const PointCloud& pc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << std::setprecision(9);
    for (const Point3& p : pc.points) out << p.x << " " << p.y << " " << p.z << "\n";
    if (!out) throw IoError("write failed: " + path);
}

inline PointCloud load_points(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    PointCloud pc;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Point3 p;
        std::string extra;
        if (!(ls >> p.x >> p.y >> p.z)) {
            throw InvalidInputError("parse error at line " + std::to_string(lineno) +
                                    " of " + path);
        }
        if (ls >> extra) {
            throw InvalidInputError("trailing tokens at line " + std::to_string(lineno) +
                                    " of " + path);
        }
        for (double c : {p.x, p.y, p.z}) {
            if (!std::isfinite(c) || c < -1.0 || c > 1.0) {
                throw InvalidInputError("coordinate outside [-1,1] at line " +
                                        std::to_string(lineno) + " of " + path);
            }
        }
        pc.points.push_back(p);
    }
    if (pc.points.empty()) throw InvalidInputError("no points in " + path);
    return pc;
}

}  // namespace pcbb::geometry

#endif  // PCBB_GEOMETRY_HPP
