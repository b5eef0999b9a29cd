#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cpnet/vec3.hpp"

namespace cpnet {

// Point cloud with optional unit normals and optional per-point part labels.
// Coordinates are unitless model coordinates.
struct PointCloud {
    std::vector<Vec3> points;
    std::optional<std::vector<Vec3>> normals;
    std::optional<std::vector<int>> part_labels;
    std::string id;

    std::size_t size() const { return points.size(); }

    // Throws Error if any structural invariant is violated (finite
    // coordinates, unit normals within 1e-6, label count matches N).
    void validate() const;
};

enum class ShapeKind { sphere, cube, torus, cylinder, barbell };

enum class CloudFormat { xyz, off, ply_ascii };

ShapeKind shape_kind_from_string(const std::string& s);
std::string to_string(ShapeKind k);
CloudFormat format_from_string(const std::string& s);
CloudFormat format_from_path(const std::string& path);

struct ShapeSpec {
    ShapeKind kind = ShapeKind::sphere;
    int n_points = 256;
    std::uint64_t seed = 0;
    double noise_std = 0.0;
};

PointCloud load_cloud(const std::string& path, CloudFormat fmt);
void save_cloud(const PointCloud& cloud, const std::string& path, CloudFormat fmt);

// Samples n_points uniformly on the surface named by spec.kind, attaches
// analytic normals and part labels, centers at the origin and scales into the
// unit sphere. Shape proportions (torus radii, cylinder aspect, barbell
// geometry) are drawn from the seed so no two seeds produce congruent clouds.
PointCloud gen_shape(const ShapeSpec& spec);

// Centers at the centroid and scales so the farthest point has norm 1.
// A cloud of coincident points maps to the origin.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

// Per-point PCA normals from the k nearest neighbors, oriented away from the
// cloud centroid (ties resolved toward +z, then +y, +x).
std::vector<Vec3> estimate_normals_pca(const PointCloud& cloud, int k);

}  // namespace cpnet
