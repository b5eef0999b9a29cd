#include "cpnet/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cpnet/errors.hpp"
#include "cpnet/geometry.hpp"
#include "cpnet/rng.hpp"

namespace cpnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

double parse_real(const std::string& tok, const std::string& path, int line_no) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
        throw ParseError(path, line_no, "expected a number, got '" + tok + "'");
    return v;
}

long parse_count(const std::string& tok, const std::string& path, int line_no) {
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    if (end == tok.c_str() || *end != '\0' || v < 0)
        throw ParseError(path, line_no, "expected a count, got '" + tok + "'");
    return v;
}

// Keeps normals already unit within the cloud invariant tolerance intact so
// that save -> load -> save is byte-identical; anything else is renormalized.
Vec3 as_unit_normal(const Vec3& n) {
    const double len = norm(n);
    return std::abs(len - 1.0) <= 1e-6 ? n : normalized(n);
}

bool is_comment_or_blank(const std::string& line) {
    for (const char c : line) {
        if (c == '#') return true;
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

PointCloud load_xyz(std::istream& in, const std::string& path) {
    PointCloud cloud;
    std::vector<Vec3> normals;
    std::string line;
    int line_no = 0;
    int width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_comment_or_blank(line)) continue;
        const auto toks = split_ws(line);
        if (toks.size() != 3 && toks.size() != 6)
            throw ParseError(path, line_no, "expected 3 or 6 columns, got " +
                                                std::to_string(toks.size()));
        if (width == 0)
            width = static_cast<int>(toks.size());
        else if (width != static_cast<int>(toks.size()))
            throw ParseError(path, line_no, "inconsistent column count");
        Vec3 p{parse_real(toks[0], path, line_no), parse_real(toks[1], path, line_no),
               parse_real(toks[2], path, line_no)};
        cloud.points.push_back(p);
        if (width == 6) {
            Vec3 n{parse_real(toks[3], path, line_no), parse_real(toks[4], path, line_no),
                   parse_real(toks[5], path, line_no)};
            normals.push_back(as_unit_normal(n));
        }
    }
    if (cloud.points.empty()) throw EmptyCloud("no points in " + path);
    if (width == 6) cloud.normals = std::move(normals);
    return cloud;
}

PointCloud load_off(std::istream& in, const std::string& path) {
    std::string line;
    int line_no = 0;

    auto next_content_line = [&](const char* what) {
        while (std::getline(in, line)) {
            ++line_no;
            if (!is_comment_or_blank(line)) return;
        }
        throw ParseError(path, line_no + 1, std::string("unexpected end of file, expected ") + what);
    };

    next_content_line("OFF header");
    auto toks = split_ws(line);
    bool has_normals = false;
    if (toks.size() == 1 && toks[0] == "OFF") {
        has_normals = false;
    } else if (toks.size() == 1 && toks[0] == "NOFF") {
        has_normals = true;
    } else {
        throw ParseError(path, line_no, "missing OFF header");
    }

    next_content_line("vertex/face/edge counts");
    toks = split_ws(line);
    if (toks.size() != 3) throw ParseError(path, line_no, "expected 'V F E' counts");
    const long n_vertices = parse_count(toks[0], path, line_no);
    if (n_vertices == 0) throw EmptyCloud("no points in " + path);

    PointCloud cloud;
    std::vector<Vec3> normals;
    for (long i = 0; i < n_vertices; ++i) {
        next_content_line("vertex record");
        toks = split_ws(line);
        const std::size_t want = has_normals ? 6 : 3;
        if (toks.size() != want)
            throw ParseError(path, line_no, "expected " + std::to_string(want) + " columns");
        cloud.points.push_back({parse_real(toks[0], path, line_no),
                                parse_real(toks[1], path, line_no),
                                parse_real(toks[2], path, line_no)});
        if (has_normals)
            normals.push_back(as_unit_normal({parse_real(toks[3], path, line_no),
                                              parse_real(toks[4], path, line_no),
                                              parse_real(toks[5], path, line_no)}));
    }
    if (has_normals) cloud.normals = std::move(normals);
    return cloud;  // face records, if any, are ignored
}

PointCloud load_ply(std::istream& in, const std::string& path) {
    std::string line;
    int line_no = 0;

    auto next_line = [&](const char* what) {
        if (!std::getline(in, line))
            throw ParseError(path, line_no + 1,
                             std::string("unexpected end of file, expected ") + what);
        ++line_no;
    };

    next_line("ply magic");
    if (split_ws(line) != std::vector<std::string>{"ply"})
        throw ParseError(path, line_no, "missing 'ply' magic");

    long n_vertices = -1;
    // Column role per vertex property: 0..2 = x,y,z, 3..5 = nx,ny,nz, -1 = skip.
    std::vector<int> columns;
    bool in_vertex_element = false;
    std::vector<long> trailing_element_counts;
    bool saw_format = false;

    for (;;) {
        next_line("header line");
        auto toks = split_ws(line);
        if (toks.empty() || toks[0] == "comment" || toks[0] == "obj_info") continue;
        if (toks[0] == "format") {
            if (toks.size() < 2 || toks[1] != "ascii")
                throw ParseError(path, line_no, "only ascii PLY is supported");
            saw_format = true;
        } else if (toks[0] == "element") {
            if (toks.size() != 3) throw ParseError(path, line_no, "malformed element line");
            const long count = parse_count(toks[2], path, line_no);
            if (toks[1] == "vertex") {
                n_vertices = count;
                in_vertex_element = true;
            } else {
                in_vertex_element = false;
                trailing_element_counts.push_back(count);
            }
        } else if (toks[0] == "property") {
            if (in_vertex_element) {
                if (toks.size() < 3) throw ParseError(path, line_no, "malformed property line");
                const std::string& name = toks.back();
                int role = -1;
                if (name == "x") role = 0;
                else if (name == "y") role = 1;
                else if (name == "z") role = 2;
                else if (name == "nx") role = 3;
                else if (name == "ny") role = 4;
                else if (name == "nz") role = 5;
                columns.push_back(role);
            }
        } else if (toks[0] == "end_header") {
            break;
        } else {
            throw ParseError(path, line_no, "unrecognized header line '" + toks[0] + "'");
        }
    }
    if (!saw_format) throw ParseError(path, line_no, "missing format line");
    if (n_vertices < 0) throw ParseError(path, line_no, "missing vertex element");
    if (n_vertices == 0) throw EmptyCloud("no points in " + path);

    bool has_xyz[3] = {false, false, false};
    bool has_n[3] = {false, false, false};
    for (const int role : columns) {
        if (role >= 0 && role < 3) has_xyz[role] = true;
        if (role >= 3) has_n[role - 3] = true;
    }
    if (!(has_xyz[0] && has_xyz[1] && has_xyz[2]))
        throw ParseError(path, line_no, "vertex element lacks x/y/z properties");
    const bool has_normals = has_n[0] && has_n[1] && has_n[2];

    PointCloud cloud;
    std::vector<Vec3> normals;
    for (long i = 0; i < n_vertices; ++i) {
        next_line("vertex record");
        auto toks = split_ws(line);
        if (toks.size() < columns.size())
            throw ParseError(path, line_no, "vertex record has too few columns");
        double v[6] = {0, 0, 0, 0, 0, 0};
        for (std::size_t c = 0; c < columns.size(); ++c)
            if (columns[c] >= 0) v[columns[c]] = parse_real(toks[c], path, line_no);
        cloud.points.push_back({v[0], v[1], v[2]});
        if (has_normals) normals.push_back(as_unit_normal({v[3], v[4], v[5]}));
    }
    if (has_normals) cloud.normals = std::move(normals);
    return cloud;  // remaining elements (faces etc.) are ignored
}

void save_xyz(const PointCloud& c, std::ostream& out) {
    const bool with_normals = c.normals.has_value();
    for (std::size_t i = 0; i < c.points.size(); ++i) {
        const Vec3& p = c.points[i];
        out << fmt_real(p.x) << ' ' << fmt_real(p.y) << ' ' << fmt_real(p.z);
        if (with_normals) {
            const Vec3& n = (*c.normals)[i];
            out << ' ' << fmt_real(n.x) << ' ' << fmt_real(n.y) << ' ' << fmt_real(n.z);
        }
        out << '\n';
    }
}

void save_off(const PointCloud& c, std::ostream& out) {
    const bool with_normals = c.normals.has_value();
    out << (with_normals ? "NOFF" : "OFF") << '\n';
    out << c.points.size() << " 0 0\n";
    save_xyz(c, out);
}

void save_ply(const PointCloud& c, std::ostream& out) {
    const bool with_normals = c.normals.has_value();
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << c.points.size() << '\n';
    out << "property double x\nproperty double y\nproperty double z\n";
    if (with_normals) out << "property double nx\nproperty double ny\nproperty double nz\n";
    out << "end_header\n";
    save_xyz(c, out);
}

struct SurfaceSample {
    Vec3 point;
    Vec3 normal;
    int label;
};

SurfaceSample sample_sphere(Rng& rng) {
    const double z = 1.0 - 2.0 * rng.uniform();
    const double phi = 2.0 * kPi * rng.uniform();
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Vec3 p{s * std::cos(phi), s * std::sin(phi), z};
    return {p, p, z >= 0.0 ? 0 : 1};
}

SurfaceSample sample_cube(Rng& rng) {
    const int face = static_cast<int>(rng.below(6));
    const double u = rng.uniform(-1.0, 1.0);
    const double v = rng.uniform(-1.0, 1.0);
    const int axis = face / 2;
    const double sign = (face % 2 == 0) ? 1.0 : -1.0;
    Vec3 p, n;
    p[axis] = sign;
    p[(axis + 1) % 3] = u;
    p[(axis + 2) % 3] = v;
    n[axis] = sign;
    return {p, n, face};
}

SurfaceSample sample_torus(Rng& rng, double major, double minor) {
    const double theta = 2.0 * kPi * rng.uniform();
    // Rejection on the tube angle keeps the areal density uniform.
    double phi;
    for (;;) {
        phi = 2.0 * kPi * rng.uniform();
        const double accept = (major + minor * std::cos(phi)) / (major + minor);
        if (rng.uniform() < accept) break;
    }
    const double cphi = std::cos(phi), sphi = std::sin(phi);
    const double ct = std::cos(theta), st = std::sin(theta);
    const Vec3 p{(major + minor * cphi) * ct, (major + minor * cphi) * st, minor * sphi};
    const Vec3 n{cphi * ct, cphi * st, sphi};
    return {p, n, cphi >= 0.0 ? 1 : 0};  // 1 = outer half, 0 = inner half
}

SurfaceSample sample_cylinder(Rng& rng, double radius, double half_height) {
    const double side_area = 2.0 * kPi * radius * (2.0 * half_height);
    const double cap_area = 2.0 * kPi * radius * radius;
    const double u = rng.uniform() * (side_area + cap_area);
    if (u < side_area) {
        const double theta = 2.0 * kPi * rng.uniform();
        const double z = rng.uniform(-half_height, half_height);
        return {{radius * std::cos(theta), radius * std::sin(theta), z},
                {std::cos(theta), std::sin(theta), 0.0},
                0};
    }
    const double theta = 2.0 * kPi * rng.uniform();
    const double r = radius * std::sqrt(rng.uniform());
    const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
    return {{r * std::cos(theta), r * std::sin(theta), sign * half_height},
            {0.0, 0.0, sign},
            1};
}

struct BarbellGeom {
    double r_left, r_right, r_bar, center_dist;
    double x_left_joint, x_right_joint;
};

BarbellGeom barbell_geom(Rng& rng) {
    BarbellGeom g;
    g.r_left = rng.uniform(0.34, 0.50);
    g.r_right = rng.uniform(0.34, 0.50);
    g.r_bar = rng.uniform(0.11, 0.19);
    g.center_dist = rng.uniform(0.60, 0.80);
    g.x_left_joint = -g.center_dist + std::sqrt(g.r_left * g.r_left - g.r_bar * g.r_bar);
    g.x_right_joint = g.center_dist - std::sqrt(g.r_right * g.r_right - g.r_bar * g.r_bar);
    return g;
}

SurfaceSample sample_barbell(Rng& rng, const BarbellGeom& g) {
    // Sample the three pieces proportionally to their exposed surface areas.
    // Sphere caps hidden inside the bar joint are excluded.
    auto sphere_area = [&](double r) {
        const double cap_h = r - std::sqrt(r * r - g.r_bar * g.r_bar);
        return 4.0 * kPi * r * r - 2.0 * kPi * r * cap_h;
    };
    const double a_left = sphere_area(g.r_left);
    const double a_right = sphere_area(g.r_right);
    const double a_bar = 2.0 * kPi * g.r_bar * (g.x_right_joint - g.x_left_joint);
    const double u = rng.uniform() * (a_left + a_bar + a_right);
    if (u < a_bar) {
        const double theta = 2.0 * kPi * rng.uniform();
        const double x = rng.uniform(g.x_left_joint, g.x_right_joint);
        return {{x, g.r_bar * std::cos(theta), g.r_bar * std::sin(theta)},
                {0.0, std::cos(theta), std::sin(theta)},
                1};
    }
    const bool left = u < a_bar + a_left;
    const double r = left ? g.r_left : g.r_right;
    const double cx = left ? -g.center_dist : g.center_dist;
    // Rejection: resample until the point is outside the joint cap.
    for (;;) {
        SurfaceSample s = sample_sphere(rng);
        Vec3 p = s.point * r;
        const double joint_x = left ? std::sqrt(r * r - g.r_bar * g.r_bar)
                                    : -std::sqrt(r * r - g.r_bar * g.r_bar);
        const bool in_cap = left ? (p.x > joint_x) : (p.x < joint_x);
        if (in_cap) continue;
        return {{p.x + cx, p.y, p.z}, s.point, left ? 0 : 2};
    }
}

}  // namespace

void PointCloud::validate() const {
    if (points.empty()) throw EmptyCloud();
    for (const Vec3& p : points)
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
            throw NonFinite("non-finite coordinate in cloud '" + id + "'");
    if (normals) {
        if (normals->size() != points.size())
            throw SizeMismatch("normal count does not match point count");
        for (const Vec3& n : *normals)
            if (std::abs(norm(n) - 1.0) > 1e-6)
                throw Error("normal is not unit length in cloud '" + id + "'");
    }
    if (part_labels && part_labels->size() != points.size())
        throw SizeMismatch("part label count does not match point count");
}

ShapeKind shape_kind_from_string(const std::string& s) {
    if (s == "sphere") return ShapeKind::sphere;
    if (s == "cube") return ShapeKind::cube;
    if (s == "torus") return ShapeKind::torus;
    if (s == "cylinder") return ShapeKind::cylinder;
    if (s == "barbell") return ShapeKind::barbell;
    throw InvalidSpec("unknown shape kind '" + s + "'");
}

std::string to_string(ShapeKind k) {
    switch (k) {
        case ShapeKind::sphere: return "sphere";
        case ShapeKind::cube: return "cube";
        case ShapeKind::torus: return "torus";
        case ShapeKind::cylinder: return "cylinder";
        case ShapeKind::barbell: return "barbell";
    }
    return "?";
}

CloudFormat format_from_string(const std::string& s) {
    if (s == "xyz") return CloudFormat::xyz;
    if (s == "off") return CloudFormat::off;
    if (s == "ply" || s == "ply_ascii") return CloudFormat::ply_ascii;
    throw InvalidSpec("unknown cloud format '" + s + "'");
}

CloudFormat format_from_path(const std::string& path) {
    const auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".xyz" || ext == ".txt") return CloudFormat::xyz;
    if (ext == ".off") return CloudFormat::off;
    if (ext == ".ply") return CloudFormat::ply_ascii;
    throw InvalidSpec("cannot infer cloud format from '" + path + "'");
}

PointCloud load_cloud(const std::string& path, CloudFormat fmt) {
    std::ifstream in(path);
    if (!in) throw FileNotFound(path);
    PointCloud cloud;
    switch (fmt) {
        case CloudFormat::xyz: cloud = load_xyz(in, path); break;
        case CloudFormat::off: cloud = load_off(in, path); break;
        case CloudFormat::ply_ascii: cloud = load_ply(in, path); break;
    }
    cloud.id = std::filesystem::path(path).stem().string();
    return cloud;
}

void save_cloud(const PointCloud& cloud, const std::string& path, CloudFormat fmt) {
    if (cloud.points.empty()) throw EmptyCloud("refusing to save an empty cloud");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    switch (fmt) {
        case CloudFormat::xyz: save_xyz(cloud, out); break;
        case CloudFormat::off: save_off(cloud, out); break;
        case CloudFormat::ply_ascii: save_ply(cloud, out); break;
    }
    if (!out) throw IoError("write failed: " + path);
}

PointCloud gen_shape(const ShapeSpec& spec) {
    if (spec.n_points < 8) throw InvalidSpec("n_points must be at least 8");
    if (spec.noise_std < 0.0) throw InvalidSpec("noise_std must be nonnegative");

    Rng shape_rng(substream(spec.seed, "shape"));
    Rng noise_rng(substream(spec.seed, "gen_noise"));

    // Seed-dependent proportions, drawn before any point.
    double torus_minor = 0.0, cyl_radius = 0.0, cyl_half_height = 0.0;
    BarbellGeom barbell{};
    switch (spec.kind) {
        case ShapeKind::torus: torus_minor = shape_rng.uniform(0.25, 0.45); break;
        case ShapeKind::cylinder: {
            cyl_radius = shape_rng.uniform(0.3, 0.6);
            cyl_half_height = shape_rng.uniform(0.5, 1.0);
            break;
        }
        case ShapeKind::barbell: barbell = barbell_geom(shape_rng); break;
        default: break;
    }

    PointCloud cloud;
    cloud.id = to_string(spec.kind) + "-" + std::to_string(spec.seed);
    cloud.points.reserve(spec.n_points);
    std::vector<Vec3> normals;
    normals.reserve(spec.n_points);
    std::vector<int> labels;
    labels.reserve(spec.n_points);

    for (int i = 0; i < spec.n_points; ++i) {
        SurfaceSample s{};
        switch (spec.kind) {
            case ShapeKind::sphere: s = sample_sphere(shape_rng); break;
            case ShapeKind::cube: s = sample_cube(shape_rng); break;
            case ShapeKind::torus: s = sample_torus(shape_rng, 1.0, torus_minor); break;
            case ShapeKind::cylinder:
                s = sample_cylinder(shape_rng, cyl_radius, cyl_half_height);
                break;
            case ShapeKind::barbell: s = sample_barbell(shape_rng, barbell); break;
        }
        cloud.points.push_back(s.point);
        normals.push_back(normalized(s.normal));
        labels.push_back(s.label);
    }

    // The analytic shapes are centered at the origin by construction; scale so
    // the surface fits in the unit sphere. Noise is applied after scaling, so
    // noise_std is in final coordinates.
    double max_norm = 0.0;
    for (const Vec3& p : cloud.points) max_norm = std::max(max_norm, norm(p));
    if (max_norm > 0.0)
        for (Vec3& p : cloud.points) p *= 1.0 / max_norm;
    if (spec.noise_std > 0.0)
        for (Vec3& p : cloud.points) {
            p.x += spec.noise_std * noise_rng.gaussian();
            p.y += spec.noise_std * noise_rng.gaussian();
            p.z += spec.noise_std * noise_rng.gaussian();
        }

    cloud.normals = std::move(normals);
    cloud.part_labels = std::move(labels);
    return cloud;
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
    if (cloud.points.empty()) throw EmptyCloud();
    PointCloud out = cloud;
    Vec3 centroid{0, 0, 0};
    for (const Vec3& p : out.points) centroid += p;
    centroid *= 1.0 / static_cast<double>(out.points.size());
    double max_norm = 0.0;
    for (Vec3& p : out.points) {
        p -= centroid;
        max_norm = std::max(max_norm, norm(p));
    }
    if (max_norm > 0.0) {
        const double inv = 1.0 / max_norm;
        for (Vec3& p : out.points) p *= inv;
    }
    return out;
}

std::vector<Vec3> estimate_normals_pca(const PointCloud& cloud, int k) {
    const int n = static_cast<int>(cloud.points.size());
    if (k < 3 || k >= n) throw TooFewPoints("estimate_normals_pca needs 3 <= k < N");

    const NeighborIndex nbr = knn(cloud.points, k);
    Vec3 centroid{0, 0, 0};
    for (const Vec3& p : cloud.points) centroid += p;
    centroid *= 1.0 / static_cast<double>(n);

    std::vector<Vec3> out(n);
    for (int i = 0; i < n; ++i) {
        Vec3 mean{0, 0, 0};
        for (int j = 0; j < k; ++j) mean += cloud.points[nbr.indices[i][j]];
        mean *= 1.0 / k;
        double c[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
        for (int j = 0; j < k; ++j) {
            const Vec3 d = cloud.points[nbr.indices[i][j]] - mean;
            const double dv[3] = {d.x, d.y, d.z};
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) c[a][b] += dv[a] * dv[b];
        }
        Vec3 normal = least_variance_direction(c);
        const double side = dot(normal, cloud.points[i] - centroid);
        if (side < -1e-12) {
            normal *= -1.0;
        } else if (std::abs(side) <= 1e-12) {
            // Degenerate orientation: prefer +z, then +y, then +x.
            if (normal.z < 0 || (normal.z == 0 && (normal.y < 0 || (normal.y == 0 && normal.x < 0))))
                normal *= -1.0;
        }
        out[i] = normal;
    }
    return out;
}

}  // namespace cpnet
