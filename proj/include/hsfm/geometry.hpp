#ifndef HSFM_GEOMETRY_HPP
#define HSFM_GEOMETRY_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace hsfm {

// Projected planar coordinates in meters (easting, northing).
struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(Point2 a, Point2 b) = default;
};

double distance(Point2 a, Point2 b);
double cross(Point2 o, Point2 a, Point2 b);

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;
};

inline constexpr double kEarthRadius = 6371000.0;

using Ring = std::vector<Point2>;

double signed_area(const Ring& ring);
bool point_in_ring(const Ring& ring, Point2 p);

// Outer ring counter-clockwise, holes clockwise and strictly inside outer.
struct DomainPolygon {
    Ring outer;
    std::vector<Ring> holes;

    double area() const;
    bool contains(Point2 p) const;
    // Throws GeometryError when the ring invariants do not hold.
    void validate() const;
};

// Control points plus triangles. Construction validates the invariants and
// builds a uniform-grid point locator; the object is immutable afterwards.
class TriangleMesh {
  public:
    using Triangle = std::array<std::uint32_t, 3>;

    TriangleMesh() = default;
    TriangleMesh(std::vector<Point2> vertices, std::vector<Triangle> triangles, std::vector<std::uint8_t> boundary_flags);

    std::size_t num_vertices() const { return vertices_.size(); }
    std::size_t num_triangles() const { return triangles_.size(); }
    const std::vector<Point2>& vertices() const { return vertices_; }
    const std::vector<Triangle>& triangles() const { return triangles_; }
    const std::vector<std::uint8_t>& boundary_flags() const { return boundary_flags_; }
    Point2 vertex(std::size_t k) const { return vertices_[k]; }

    double triangle_area(std::size_t t) const;
    Point2 centroid(std::size_t t) const;
    double area() const;
    std::array<Point2, 2> bounding_box() const;

    // Candidate triangles for p in ascending index order.
    std::span<const std::uint32_t> candidates(Point2 p) const;
    std::size_t nearest_vertex(Point2 p) const;

  private:
    void build_locator();

    std::vector<Point2> vertices_;
    std::vector<Triangle> triangles_;
    std::vector<std::uint8_t> boundary_flags_;

    Point2 grid_origin_;
    double grid_cell_ = 1.0;
    std::size_t grid_nx_ = 0;
    std::size_t grid_ny_ = 0;
    std::vector<std::uint32_t> cell_start_;
    std::vector<std::uint32_t> cell_items_;
};

struct BarycentricLocation {
    std::size_t triangle_index = 0;
    std::array<double, 3> coords{};
};

inline constexpr double kBarycentricTolerance = 1e-10;

// Local equirectangular projection about origin.
std::vector<Point2> project_coordinates(std::span<const LatLon> records, LatLon origin);
LatLon unproject(Point2 p, LatLon origin);
// Mean latitude and longitude of the records.
LatLon centroid_origin(std::span<const LatLon> records);

struct InferredDomain {
    DomainPolygon polygon;
    std::size_t dropped_points = 0;
    double alpha = 0.0;
};

// Three times the median nearest-neighbor distance.
double default_alpha(std::span<const Point2> points);

// Alpha-shape of the points; the largest connected component is returned.
InferredDomain infer_domain(std::span<const Point2> points, double alpha);

struct TriangulateOptions {
    double max_area = 0.0;
    double min_angle = 25.0;
    std::size_t max_vertices = 100000;
};

struct Triangulation {
    TriangleMesh mesh;
    // Skinny triangles left unrefined because they are forced by small input
    // angles or by segments too short to split.
    std::size_t skinny_triangles = 0;
};

// Constrained Delaunay triangulation with Ruppert refinement.
Triangulation triangulate(const DomainPolygon& domain, const TriangulateOptions& options);

// Lowest-index triangle containing p, or nullopt when p is outside the mesh.
std::optional<BarycentricLocation> locate_point(const TriangleMesh& mesh, Point2 p);

void write_mesh_text(std::ostream& os, const TriangleMesh& mesh);
TriangleMesh read_mesh_text(std::istream& is);

nlohmann::json domain_to_geojson(const DomainPolygon& domain, LatLon origin);
DomainPolygon domain_from_geojson(const nlohmann::json& geojson, LatLon origin);

} // namespace hsfm

#endif
