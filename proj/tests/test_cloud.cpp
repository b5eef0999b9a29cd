#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cpnet/cloud.hpp"
#include "cpnet/errors.hpp"

using namespace cpnet;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("xyz: three columns, no normals") {
    const std::string path = temp_path("cpnet_3col.xyz");
    write_file(path, "0 0 0\n1 0 0\n0 1 0\n");
    const PointCloud c = load_cloud(path, CloudFormat::xyz);
    CHECK(c.points.size() == 3);
    CHECK_FALSE(c.normals.has_value());
    CHECK(c.points[1].x == 1.0);
}

TEST_CASE("xyz: six columns populate unit normals") {
    const std::string path = temp_path("cpnet_6col.xyz");
    write_file(path, "0 0 0 0 0 2\n1 0 0 3 0 0\n");
    const PointCloud c = load_cloud(path, CloudFormat::xyz);
    REQUIRE(c.normals.has_value());
    CHECK((*c.normals)[0].z == doctest::Approx(1.0));  // renormalized
    CHECK((*c.normals)[1].x == doctest::Approx(1.0));
}

TEST_CASE("xyz: malformed column count reports the line") {
    const std::string path = temp_path("cpnet_bad.xyz");
    write_file(path, "0 0 0\n1 2\n");
    try {
        load_cloud(path, CloudFormat::xyz);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("off: missing header is a line-1 parse error") {
    const std::string path = temp_path("cpnet_noheader.off");
    write_file(path, "3 0 0\n0 0 0\n1 0 0\n0 1 0\n");
    try {
        load_cloud(path, CloudFormat::off);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 1);
    }
}

TEST_CASE("load: missing file") {
    CHECK_THROWS_AS(load_cloud(temp_path("cpnet_missing_xyz_file.xyz"), CloudFormat::xyz),
                    FileNotFound);
}

TEST_CASE("load: zero points is EmptyCloud") {
    const std::string path = temp_path("cpnet_empty.off");
    write_file(path, "OFF\n0 0 0\n");
    CHECK_THROWS_AS(load_cloud(path, CloudFormat::off), EmptyCloud);
}

TEST_CASE("save/load round trip: unit cube corners") {
    PointCloud c;
    c.id = "cube8";
    for (const double x : {-1.0, 1.0})
        for (const double y : {-1.0, 1.0})
            for (const double z : {-1.0, 1.0}) c.points.push_back({x, y, z});
    for (const CloudFormat fmt : {CloudFormat::xyz, CloudFormat::off, CloudFormat::ply_ascii}) {
        const std::string path = temp_path("cpnet_cube8_roundtrip");
        save_cloud(c, path, fmt);
        const PointCloud back = load_cloud(path, fmt);
        REQUIRE(back.points.size() == 8);
        for (int i = 0; i < 8; ++i) {
            CHECK(std::abs(back.points[i].x - c.points[i].x) <= 1e-8);
            CHECK(std::abs(back.points[i].y - c.points[i].y) <= 1e-8);
            CHECK(std::abs(back.points[i].z - c.points[i].z) <= 1e-8);
        }
    }
}

TEST_CASE("save/load: second save is byte-identical for every format") {
    const PointCloud c = gen_shape({ShapeKind::torus, 64, 3, 0.0});
    for (const CloudFormat fmt : {CloudFormat::xyz, CloudFormat::off, CloudFormat::ply_ascii}) {
        const std::string p1 = temp_path("cpnet_rt1");
        const std::string p2 = temp_path("cpnet_rt2");
        save_cloud(c, p1, fmt);
        const PointCloud mid = load_cloud(p1, fmt);
        save_cloud(mid, p2, fmt);
        CHECK(read_file(p1) == read_file(p2));
    }
}

TEST_CASE("save: cloud with normals writes six xyz columns") {
    PointCloud c;
    c.points = {{0, 0, 0}};
    c.normals = std::vector<Vec3>{{0, 0, 1}};
    const std::string path = temp_path("cpnet_n1.xyz");
    save_cloud(c, path, CloudFormat::xyz);
    std::istringstream line(read_file(path));
    std::string tok;
    int cols = 0;
    while (line >> tok) ++cols;
    CHECK(cols == 6);
}

TEST_CASE("save: single-point cloud is a valid one-record file") {
    PointCloud c;
    c.points = {{0.5, -0.25, 0.125}};
    const std::string path = temp_path("cpnet_single.xyz");
    save_cloud(c, path, CloudFormat::xyz);
    const PointCloud back = load_cloud(path, CloudFormat::xyz);
    CHECK(back.points.size() == 1);
    CHECK(back.points[0].y == doctest::Approx(-0.25));
}

TEST_CASE("gen_shape: seeded determinism is bitwise") {
    const ShapeSpec spec{ShapeKind::sphere, 256, 7, 0.01};
    const PointCloud a = gen_shape(spec);
    const PointCloud b = gen_shape(spec);
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i] == b.points[i]);
        CHECK((*a.normals)[i] == (*b.normals)[i]);
        CHECK((*a.part_labels)[i] == (*b.part_labels)[i]);
    }
}

TEST_CASE("gen_shape: sphere normals equal point directions before noise") {
    const PointCloud c = gen_shape({ShapeKind::sphere, 256, 7, 0.0});
    for (std::size_t i = 0; i < c.points.size(); ++i) {
        const Vec3 dir = normalized(c.points[i]);
        CHECK(norm(dir - (*c.normals)[i]) < 1e-6);
    }
}

TEST_CASE("gen_shape: barbell carries exactly three part labels") {
    // Oracle: enumerate the labels of the generated cloud.
    const PointCloud c = gen_shape({ShapeKind::barbell, 512, 11, 0.0});
    const std::set<int> labels((*c.part_labels).begin(), (*c.part_labels).end());
    CHECK(labels == std::set<int>{0, 1, 2});
}

TEST_CASE("gen_shape: every kind generates, is centered and unit-bounded") {
    for (const ShapeKind k : {ShapeKind::sphere, ShapeKind::cube, ShapeKind::torus,
                              ShapeKind::cylinder, ShapeKind::barbell}) {
        const PointCloud c = gen_shape({k, 128, 5, 0.0});
        REQUIRE(c.points.size() == 128);
        double max_norm = 0.0;
        for (const Vec3& p : c.points) max_norm = std::max(max_norm, norm(p));
        CHECK(max_norm <= 1.0 + 1e-12);
        CHECK(max_norm > 0.5);
        c.validate();
    }
}

TEST_CASE("gen_shape: invalid specs") {
    CHECK_THROWS_AS(gen_shape({ShapeKind::sphere, 4, 0, 0.0}), InvalidSpec);
    CHECK_THROWS_AS(gen_shape({ShapeKind::sphere, 64, 0, -0.1}), InvalidSpec);
}

TEST_CASE("normalize_unit_sphere: forced centering and scaling") {
    PointCloud c;
    c.points = {{10, 0, 0}, {12, 0, 0}};
    const PointCloud n = normalize_unit_sphere(c);
    CHECK(norm(n.points[0] - Vec3{-1, 0, 0}) < 1e-9);
    CHECK(norm(n.points[1] - Vec3{1, 0, 0}) < 1e-9);
}

TEST_CASE("normalize_unit_sphere: idempotent, passes attributes through") {
    PointCloud c = gen_shape({ShapeKind::torus, 64, 2, 0.0});
    const PointCloud once = normalize_unit_sphere(c);
    const PointCloud twice = normalize_unit_sphere(once);
    for (std::size_t i = 0; i < once.points.size(); ++i)
        CHECK(norm(once.points[i] - twice.points[i]) < 1e-9);
    CHECK(once.normals == c.normals);
    CHECK(once.part_labels == c.part_labels);
}

TEST_CASE("normalize_unit_sphere: translation and scale covariance") {
    const PointCloud base = gen_shape({ShapeKind::cube, 64, 9, 0.0});
    PointCloud moved = base;
    for (Vec3& p : moved.points) p = p * 3.5 + Vec3{1.0, -2.0, 0.25};
    const PointCloud a = normalize_unit_sphere(base);
    const PointCloud b = normalize_unit_sphere(moved);
    for (std::size_t i = 0; i < a.points.size(); ++i) CHECK(norm(a.points[i] - b.points[i]) < 1e-9);
}

TEST_CASE("normalize_unit_sphere: coincident points collapse to origin") {
    PointCloud c;
    c.points = {{2, 2, 2}, {2, 2, 2}, {2, 2, 2}};
    const PointCloud n = normalize_unit_sphere(c);
    for (const Vec3& p : n.points) CHECK(norm(p) == 0.0);
}

TEST_CASE("estimate_normals_pca: planar grid points have +-z normals") {
    PointCloud c;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) c.points.push_back({static_cast<double>(i), static_cast<double>(j), 0.0});
    const auto normals = estimate_normals_pca(c, 8);
    // Interior point: index of (2,2) is 2*6+2.
    const Vec3 n = normals[14];
    CHECK(std::abs(std::abs(n.z) - 1.0) < 1e-6);
    CHECK(std::abs(n.x) < 1e-6);
    CHECK(std::abs(n.y) < 1e-6);
}

TEST_CASE("estimate_normals_pca: sphere accuracy within 15 degrees on average") {
    // Oracle: analytic normals from gen_shape.
    const PointCloud c = gen_shape({ShapeKind::sphere, 512, 3, 0.0});
    const auto est = estimate_normals_pca(c, 16);
    double sum_angle = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        const double cosang = std::clamp(dot(est[i], (*c.normals)[i]), -1.0, 1.0);
        sum_angle += std::acos(std::abs(cosang));  // orientation-agnostic angle
    }
    const double mean_deg = sum_angle / est.size() * 180.0 / 3.14159265358979323846;
    CHECK(mean_deg < 15.0);
}

TEST_CASE("estimate_normals_pca: k bounds") {
    const PointCloud c = gen_shape({ShapeKind::sphere, 16, 3, 0.0});
    CHECK_THROWS_AS(estimate_normals_pca(c, 16), TooFewPoints);
    CHECK_THROWS_AS(estimate_normals_pca(c, 2), TooFewPoints);
}
