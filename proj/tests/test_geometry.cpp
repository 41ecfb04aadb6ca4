#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "hsfm/errors.hpp"
#include "hsfm/geometry.hpp"
#include "hsfm/rng.hpp"

using namespace hsfm;

namespace {

DomainPolygon square(double side) { return {{{0, 0}, {side, 0}, {side, side}, {0, side}}, {}}; }

double haversine(LatLon a, LatLon b) {
    constexpr double deg = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * deg, dlon = (b.lon - a.lon) * deg;
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * deg) * std::cos(b.lat * deg) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2 * kEarthRadius * std::asin(std::sqrt(h));
}

std::set<std::pair<std::uint32_t, std::uint32_t>> edges_of(const TriangleMesh& m) {
    std::set<std::pair<std::uint32_t, std::uint32_t>> e;
    for (const auto& t : m.triangles())
        for (int k = 0; k < 3; ++k) e.insert({std::min(t[k], t[(k + 1) % 3]), std::max(t[k], t[(k + 1) % 3])});
    return e;
}

double min_angle_deg(const TriangleMesh& m, std::size_t t) {
    const auto& tri = m.triangles()[t];
    double best = 180;
    for (int k = 0; k < 3; ++k) {
        const Point2 a = m.vertex(tri[k]), b = m.vertex(tri[(k + 1) % 3]), c = m.vertex(tri[(k + 2) % 3]);
        const double u = std::atan2(b.y - a.y, b.x - a.x), v = std::atan2(c.y - a.y, c.x - a.x);
        double d = std::fabs(u - v) * 180 / std::numbers::pi;
        if (d > 180) d = 360 - d;
        best = std::min(best, d);
    }
    return best;
}

// Every ring edge must be covered by a chain of collinear mesh edges.
bool ring_edges_present(const TriangleMesh& m, const Ring& ring) {
    const auto e = edges_of(m);
    for (std::size_t i = 0; i < ring.size(); ++i) {
        const Point2 a = ring[i], b = ring[(i + 1) % ring.size()];
        const double len = distance(a, b);
        std::vector<std::pair<double, std::uint32_t>> on;
        for (std::uint32_t k = 0; k < m.num_vertices(); ++k) {
            const Point2 p = m.vertex(k);
            if (std::fabs(cross(a, b, p)) > 1e-9 * len * len) continue;
            const double s = ((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / (len * len);
            if (s > -1e-12 && s < 1 + 1e-12) on.push_back({s, k});
        }
        std::sort(on.begin(), on.end());
        if (on.size() < 2) return false;
        for (std::size_t j = 0; j + 1 < on.size(); ++j) {
            const auto u = on[j].second, w = on[j + 1].second;
            if (!e.count({std::min(u, w), std::max(u, w)})) return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("project_coordinates maps origin to zero and one degree north to R*pi/180") {
    const LatLon origin{53.5, -113.5};
    const std::vector<LatLon> recs{{53.5, -113.5}, {54.5, -113.5}, {53.5, -113.6}, {53.5, -113.4}};
    const auto p = project_coordinates(recs, origin);
    CHECK(p[0].x == 0.0);
    CHECK(p[0].y == 0.0);
    CHECK(std::fabs(p[1].y - 111194.9) < 0.1);
    CHECK(p[2].x == doctest::Approx(-p[3].x));
}

TEST_CASE("project_coordinates rejects out-of-range records by index") {
    const std::vector<LatLon> recs{{10, 10}, {95, 0}};
    try {
        project_coordinates(recs, {0, 0});
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
}

TEST_CASE("projection is within 1% of haversine at city scale") {
    SplitMix64 rng(7);
    for (int i = 0; i < 200; ++i) {
        const LatLon o{rng.uniform(-60, 60), rng.uniform(-170, 170)};
        const LatLon a{o.lat + rng.uniform(-0.04, 0.04), o.lon + rng.uniform(-0.04, 0.04)};
        const LatLon b{o.lat + rng.uniform(-0.04, 0.04), o.lon + rng.uniform(-0.04, 0.04)};
        const double h = haversine(a, b);
        if (h > 10000 || h < 1) continue;
        const std::vector<LatLon> recs{a, b};
        const auto p = project_coordinates(recs, o);
        CHECK(std::fabs(distance(p[0], p[1]) - h) <= 0.01 * h);
    }
}

TEST_CASE("triangulate unit square without refinement gives two triangles") {
    const auto tri = triangulate(square(1.0), {1.0, 0.0});
    CHECK(tri.mesh.num_triangles() == 2);
    CHECK(tri.mesh.num_vertices() == 4);
    CHECK(tri.mesh.area() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("triangulate with max_area bound") {
    const auto tri = triangulate(square(1.0), {0.05, 0.0});
    CHECK(tri.mesh.num_triangles() >= 20);
    double sum = 0;
    for (std::size_t t = 0; t < tri.mesh.num_triangles(); ++t) {
        CHECK(tri.mesh.triangle_area(t) <= 0.05);
        sum += tri.mesh.triangle_area(t);
    }
    CHECK(std::fabs(sum - 1.0) < 1e-9);
    CHECK(ring_edges_present(tri.mesh, square(1.0).outer));
}

TEST_CASE("triangulate square with square hole keeps hole edges and leaves hole empty") {
    DomainPolygon d = square(10.0);
    d.holes.push_back({{4, 4}, {4, 6}, {6, 6}, {6, 4}});
    const auto tri = triangulate(d, {2.0, 25.0});
    CHECK(ring_edges_present(tri.mesh, d.holes[0]));
    CHECK(ring_edges_present(tri.mesh, d.outer));
    for (std::size_t t = 0; t < tri.mesh.num_triangles(); ++t) CHECK_FALSE(point_in_ring(d.holes[0], tri.mesh.centroid(t)));
    CHECK(std::fabs(tri.mesh.area() - d.area()) <= 1e-6 * d.area());
}

TEST_CASE("Ruppert refinement honors min angle on a convex polygon") {
    const DomainPolygon d{{{0, 0}, {7, 0}, {9, 3}, {4, 8}, {-1, 4}}, {}};
    const auto tri = triangulate(d, {1.0, 30.0});
    std::size_t below = 0;
    for (std::size_t t = 0; t < tri.mesh.num_triangles(); ++t) {
        CHECK(tri.mesh.triangle_area(t) <= 1.0);
        if (min_angle_deg(tri.mesh, t) < 30.0 - 1e-9) ++below;
    }
    CHECK(below == tri.skinny_triangles);
    CHECK(below == 0);
    CHECK(std::fabs(tri.mesh.area() - d.area()) <= 1e-6 * d.area());
}

TEST_CASE("sharp input corner terminates and reports exempt skinny triangles") {
    const DomainPolygon d{{{0, 0}, {10, 0}, {10, 0.8}}, {}};
    const auto tri = triangulate(d, {0.5, 25.0});
    CHECK(std::fabs(tri.mesh.area() - d.area()) <= 1e-6 * d.area());
    std::size_t below = 0;
    for (std::size_t t = 0; t < tri.mesh.num_triangles(); ++t)
        if (min_angle_deg(tri.mesh, t) < 25.0 - 1e-9) ++below;
    CHECK(below == tri.skinny_triangles);
}

TEST_CASE("triangulate error paths") {
    CHECK_THROWS_AS(triangulate(square(1.0), {0.0, 20.0}), InputError);
    CHECK_THROWS_AS(triangulate(square(1.0), {1.0, 40.0}), InputError);
    const DomainPolygon bowtie{{{0, 0}, {1, 1}, {1, 0}, {0, 1}}, {}};
    CHECK_THROWS_AS(triangulate(bowtie, {1.0, 20.0}), GeometryError);
    const DomainPolygon cw{{{0, 0}, {0, 1}, {1, 1}, {1, 0}}, {}};
    CHECK_THROWS_AS(triangulate(cw, {1.0, 20.0}), GeometryError);
    CHECK_THROWS_AS(triangulate(square(1000.0), {1e-4, 20.0, 1000}), ResourceError);
}

TEST_CASE("locate_point: vertices, centroids and outside") {
    const auto mesh = triangulate(square(4.0), {0.5, 25.0}).mesh;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto loc = locate_point(mesh, mesh.centroid(t));
        REQUIRE(loc);
        CHECK(loc->triangle_index == t);
        for (double c : loc->coords) CHECK(std::fabs(c - 1.0 / 3.0) < 1e-12);
    }
    for (std::size_t k = 0; k < mesh.num_vertices(); ++k) {
        const auto loc = locate_point(mesh, mesh.vertex(k));
        REQUIRE(loc);
        CHECK(*std::max_element(loc->coords.begin(), loc->coords.end()) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_FALSE(locate_point(mesh, {-10, -10}));
    CHECK_FALSE(locate_point(mesh, {4.5, 2}));
}

TEST_CASE("locate_point breaks shared-edge ties by lowest triangle index") {
    const auto mesh = triangulate(square(1.0), {1.0, 0.0}).mesh;
    const auto loc = locate_point(mesh, {0.5, 0.5});
    REQUIRE(loc);
    CHECK(loc->triangle_index == 0);
}

TEST_CASE("infer_domain of four square corners is the square") {
    const std::vector<Point2> pts{{0, 0}, {2, 0}, {2, 2}, {0, 2}};
    const auto d = infer_domain(pts, 20.0);
    CHECK(d.polygon.outer.size() == 4);
    CHECK(d.polygon.area() == doctest::Approx(4.0));
    CHECK(d.dropped_points == 0);
}

TEST_CASE("infer_domain keeps the larger of two separated clusters") {
    SplitMix64 rng(3);
    std::vector<Point2> pts;
    for (int i = 0; i < 12; ++i) pts.push_back({rng.uniform(0, 3), rng.uniform(0, 3)});
    for (int i = 0; i < 10; ++i) pts.push_back({100 + rng.uniform(0, 1), rng.uniform(0, 1)});
    const double alpha = 5.0;
    const auto d = infer_domain(pts, alpha);
    // Brute-force oracle: no triangle with circumradius <= alpha can bridge a
    // 97 m gap, so every second-cluster point is dropped.
    CHECK(d.dropped_points >= 10);
    for (const auto& p : d.polygon.outer) CHECK(p.x < 50);
    for (std::size_t i = 0; i < 12; ++i) {
        const bool on_boundary = std::find(d.polygon.outer.begin(), d.polygon.outer.end(), pts[i]) != d.polygon.outer.end();
        CHECK((on_boundary || d.polygon.contains(pts[i])));
    }
}

TEST_CASE("infer_domain follows a C-shaped cloud without closing the opening") {
    std::vector<Point2> pts;
    // C shape on a unit grid: 10x10 block minus the opening x in [3,10], y in [3,6].
    for (int x = 0; x <= 10; ++x)
        for (int y = 0; y <= 9; ++y)
            if (!(x >= 3 && y >= 3 && y <= 6)) pts.push_back({double(x), double(y)});
    const auto d = infer_domain(pts, 1.5);
    CHECK(d.polygon.holes.empty());
    const Ring& r = d.polygon.outer;
    // No boundary segment may pass through the empty region (3, 10) x (3, 6).
    for (std::size_t i = 0; i < r.size(); ++i) {
        const Point2 a = r[i], b = r[(i + 1) % r.size()];
        for (int s = 1; s < 20; ++s) {
            const Point2 m = a + (s / 20.0) * (b - a);
            CHECK_FALSE((m.x > 3.01 && m.x < 10 && m.y > 3.01 && m.y < 5.99));
        }
    }
    CHECK(d.polygon.area() < 10.0 * 9.0 - 6.0);
    d.polygon.validate();
}

TEST_CASE("infer_domain is permutation invariant") {
    SplitMix64 rng(11);
    std::vector<Point2> pts;
    for (int i = 0; i < 150; ++i) pts.push_back({rng.uniform(0, 100), rng.uniform(0, 60)});
    const auto a = infer_domain(pts, default_alpha(pts));
    auto shuffled = pts;
    shuffle(shuffled, rng);
    const auto b = infer_domain(shuffled, default_alpha(shuffled));
    CHECK(a.polygon.outer == b.polygon.outer);
    CHECK(a.polygon.holes.size() == b.polygon.holes.size());
    CHECK(a.dropped_points == b.dropped_points);
}

TEST_CASE("infer_domain rejects collinear points") {
    const std::vector<Point2> pts{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    CHECK_THROWS_AS(infer_domain(pts, 10.0), GeometryError);
}

TEST_CASE("inferred domains triangulate and match their shoelace area") {
    SplitMix64 rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<Point2> pts;
        for (int i = 0; i < 400; ++i) {
            Point2 p{rng.uniform(0, 1000), rng.uniform(0, 800)};
            if (distance(p, {500, 400}) < 150) continue; // a lake
            pts.push_back(p);
        }
        const auto d = infer_domain(pts, default_alpha(pts));
        d.polygon.validate();
        const auto tri = triangulate(d.polygon, {d.polygon.area() / 200.0, 25.0});
        CHECK(std::fabs(tri.mesh.area() - d.polygon.area()) <= 1e-6 * d.polygon.area());
        CHECK(ring_edges_present(tri.mesh, d.polygon.outer));
    }
}

TEST_CASE("mesh text format round-trips") {
    const auto mesh = triangulate(square(3.0), {0.7, 25.0}).mesh;
    std::stringstream ss;
    write_mesh_text(ss, mesh);
    const auto back = read_mesh_text(ss);
    CHECK(back.vertices() == mesh.vertices());
    CHECK(back.triangles() == mesh.triangles());
    CHECK(back.boundary_flags() == mesh.boundary_flags());
}

TEST_CASE("boundary flags mark exactly the vertices on the polygon boundary") {
    const auto mesh = triangulate(square(2.0), {0.1, 25.0}).mesh;
    for (std::size_t k = 0; k < mesh.num_vertices(); ++k) {
        const Point2 p = mesh.vertex(k);
        const bool on = p.x == 0 || p.y == 0 || std::fabs(p.x - 2) < 1e-12 || std::fabs(p.y - 2) < 1e-12;
        CHECK(bool(mesh.boundary_flags()[k]) == on);
    }
}
