#include "hsfm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "cdt.hpp"
#include "hsfm/errors.hpp"

namespace hsfm {

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

double cross(Point2 o, Point2 a, Point2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

double signed_area(const Ring& ring) {
    double s = 0.0;
    for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
        const Point2 a = ring[i], b = ring[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    return 0.5 * s;
}

bool point_in_ring(const Ring& ring, Point2 p) {
    bool in = false;
    for (std::size_t i = 0, n = ring.size(), j = n - 1; i < n; j = i++) {
        const Point2 a = ring[i], b = ring[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if (p.x < x) in = !in;
        }
    }
    return in;
}

double DomainPolygon::area() const {
    double a = signed_area(outer);
    for (const auto& h : holes) a += signed_area(h);
    return a;
}

bool DomainPolygon::contains(Point2 p) const {
    if (!point_in_ring(outer, p)) return false;
    for (const auto& h : holes)
        if (point_in_ring(h, p)) return false;
    return true;
}

namespace {

bool segments_touch(Point2 a, Point2 b, Point2 c, Point2 d) {
    const auto on = [](Point2 p, Point2 q, Point2 r) {
        return std::min(p.x, q.x) <= r.x && r.x <= std::max(p.x, q.x) && std::min(p.y, q.y) <= r.y &&
               r.y <= std::max(p.y, q.y);
    };
    const double d1 = cross(a, b, c), d2 = cross(a, b, d), d3 = cross(c, d, a), d4 = cross(c, d, b);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
    return (d1 == 0 && on(a, b, c)) || (d2 == 0 && on(a, b, d)) || (d3 == 0 && on(c, d, a)) || (d4 == 0 && on(c, d, b));
}

struct Seg {
    Point2 a, b;
    std::size_t ring, index;
};

void check_simple(const std::vector<Seg>& segs, const std::vector<std::size_t>& ring_sizes) {
    // Sweep on x to keep the pairwise check cheap for long rings.
    std::vector<std::size_t> order(segs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return std::min(segs[i].a.x, segs[i].b.x) < std::min(segs[j].a.x, segs[j].b.x); });
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const Seg& s = segs[order[oi]];
        const double xmax = std::max(s.a.x, s.b.x);
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            const Seg& t = segs[order[oj]];
            if (std::min(t.a.x, t.b.x) > xmax) break;
            if (s.ring == t.ring) {
                const std::size_t n = ring_sizes[s.ring];
                const bool adjacent = (s.index + 1) % n == t.index || (t.index + 1) % n == s.index;
                if (adjacent) continue;
            }
            if (segments_touch(s.a, s.b, t.a, t.b)) throw GeometryError("polygon rings self-intersect or touch");
        }
    }
}

} // namespace

void DomainPolygon::validate() const {
    if (outer.size() < 3) throw GeometryError("outer ring needs at least 3 vertices");
    if (!(signed_area(outer) > 0.0)) throw GeometryError("outer ring must be counter-clockwise with positive area");
    std::vector<Seg> segs;
    std::vector<std::size_t> sizes;
    const auto add_ring = [&](const Ring& r) {
        for (const auto& p : r)
            if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw GeometryError("non-finite polygon vertex");
        const std::size_t id = sizes.size();
        sizes.push_back(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) {
            const Point2 a = r[i], b = r[(i + 1) % r.size()];
            if (a == b) throw GeometryError("repeated consecutive polygon vertex");
            segs.push_back({a, b, id, i});
        }
    };
    add_ring(outer);
    for (const auto& h : holes) {
        if (h.size() < 3) throw GeometryError("hole needs at least 3 vertices");
        if (!(signed_area(h) < 0.0)) throw GeometryError("hole ring must be clockwise");
        if (!point_in_ring(outer, h.front())) throw GeometryError("hole lies outside the outer ring");
        for (const auto& other : holes)
            if (&other != &h && point_in_ring(other, h.front())) throw GeometryError("nested holes are not allowed");
        add_ring(h);
    }
    check_simple(segs, sizes);
}

// --- TriangleMesh ---------------------------------------------------------

TriangleMesh::TriangleMesh(std::vector<Point2> vertices, std::vector<Triangle> triangles, std::vector<std::uint8_t> boundary_flags)
    : vertices_(std::move(vertices)), triangles_(std::move(triangles)), boundary_flags_(std::move(boundary_flags)) {
    if (boundary_flags_.size() != vertices_.size()) throw GeometryError("boundary flag count does not match vertex count");
    if (triangles_.empty()) throw GeometryError("mesh has no triangles");
    std::vector<std::uint8_t> used(vertices_.size(), 0);
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
        for (auto k : triangles_[t]) {
            if (k >= vertices_.size()) throw GeometryError("triangle " + std::to_string(t) + " has an out-of-range vertex");
            used[k] = 1;
        }
        if (!(triangle_area(t) > 0.0)) throw GeometryError("triangle " + std::to_string(t) + " is not positively oriented");
    }
    for (std::size_t k = 0; k < used.size(); ++k)
        if (!used[k]) throw GeometryError("vertex " + std::to_string(k) + " is not referenced by any triangle");
    build_locator();
}

double TriangleMesh::triangle_area(std::size_t t) const {
    const auto& tri = triangles_[t];
    return 0.5 * cross(vertices_[tri[0]], vertices_[tri[1]], vertices_[tri[2]]);
}

Point2 TriangleMesh::centroid(std::size_t t) const {
    const auto& tri = triangles_[t];
    const Point2 a = vertices_[tri[0]], b = vertices_[tri[1]], c = vertices_[tri[2]];
    return {(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0};
}

double TriangleMesh::area() const {
    double a = 0.0;
    for (std::size_t t = 0; t < triangles_.size(); ++t) a += triangle_area(t);
    return a;
}

std::array<Point2, 2> TriangleMesh::bounding_box() const {
    Point2 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    Point2 hi{-lo.x, -lo.y};
    for (const auto& p : vertices_) {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    return {lo, hi};
}

void TriangleMesh::build_locator() {
    if (triangles_.empty()) return;
    const auto [lo, hi] = bounding_box();
    const double w = std::max(hi.x - lo.x, 1e-12);
    const double h = std::max(hi.y - lo.y, 1e-12);
    const double eps = 1e-9 * std::max(w, h);
    grid_origin_ = {lo.x - eps, lo.y - eps};
    grid_cell_ = std::sqrt(w * h / static_cast<double>(triangles_.size()));
    grid_cell_ = std::max(grid_cell_, std::max(w, h) / 2048.0);
    grid_nx_ = static_cast<std::size_t>(std::ceil((w + 2 * eps) / grid_cell_)) + 1;
    grid_ny_ = static_cast<std::size_t>(std::ceil((h + 2 * eps) / grid_cell_)) + 1;

    const auto cell_range = [&](std::size_t t) {
        const auto& tri = triangles_[t];
        double x0 = vertices_[tri[0]].x, x1 = x0, y0 = vertices_[tri[0]].y, y1 = y0;
        for (auto k : tri) {
            x0 = std::min(x0, vertices_[k].x);
            x1 = std::max(x1, vertices_[k].x);
            y0 = std::min(y0, vertices_[k].y);
            y1 = std::max(y1, vertices_[k].y);
        }
        const auto ix = [&](double x) {
            return std::min(grid_nx_ - 1, static_cast<std::size_t>(std::max(0.0, std::floor((x - grid_origin_.x) / grid_cell_))));
        };
        const auto iy = [&](double y) {
            return std::min(grid_ny_ - 1, static_cast<std::size_t>(std::max(0.0, std::floor((y - grid_origin_.y) / grid_cell_))));
        };
        return std::array<std::size_t, 4>{ix(x0 - eps), ix(x1 + eps), iy(y0 - eps), iy(y1 + eps)};
    };

    std::vector<std::uint32_t> counts(grid_nx_ * grid_ny_ + 1, 0);
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
        const auto r = cell_range(t);
        for (std::size_t y = r[2]; y <= r[3]; ++y)
            for (std::size_t x = r[0]; x <= r[1]; ++x) ++counts[y * grid_nx_ + x + 1];
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    cell_start_ = counts;
    cell_items_.assign(cell_start_.back(), 0);
    std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
        const auto r = cell_range(t);
        for (std::size_t y = r[2]; y <= r[3]; ++y)
            for (std::size_t x = r[0]; x <= r[1]; ++x) cell_items_[fill[y * grid_nx_ + x]++] = static_cast<std::uint32_t>(t);
    }
}

std::span<const std::uint32_t> TriangleMesh::candidates(Point2 p) const {
    if (cell_start_.empty()) return {};
    const double fx = std::floor((p.x - grid_origin_.x) / grid_cell_);
    const double fy = std::floor((p.y - grid_origin_.y) / grid_cell_);
    if (!(fx >= 0 && fy >= 0 && fx < static_cast<double>(grid_nx_) && fy < static_cast<double>(grid_ny_))) return {};
    const std::size_t c = static_cast<std::size_t>(fy) * grid_nx_ + static_cast<std::size_t>(fx);
    return {cell_items_.data() + cell_start_[c], cell_items_.data() + cell_start_[c + 1]};
}

std::size_t TriangleMesh::nearest_vertex(Point2 p) const {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < vertices_.size(); ++k) {
        const double d = (vertices_[k].x - p.x) * (vertices_[k].x - p.x) + (vertices_[k].y - p.y) * (vertices_[k].y - p.y);
        if (d < bd) {
            bd = d;
            best = k;
        }
    }
    return best;
}

std::optional<BarycentricLocation> locate_point(const TriangleMesh& mesh, Point2 p) {
    const auto& vs = mesh.vertices();
    for (auto t : mesh.candidates(p)) {
        const auto& tri = mesh.triangles()[t];
        const Point2 a = vs[tri[0]], b = vs[tri[1]], c = vs[tri[2]];
        const double det = cross(a, b, c);
        std::array<double, 3> l{cross(p, b, c) / det, cross(a, p, c) / det, cross(a, b, p) / det};
        if (l[0] < -kBarycentricTolerance || l[1] < -kBarycentricTolerance || l[2] < -kBarycentricTolerance) continue;
        double s = 0.0;
        for (auto& x : l) {
            x = std::clamp(x, 0.0, 1.0);
            s += x;
        }
        for (auto& x : l) x /= s;
        return BarycentricLocation{t, l};
    }
    return std::nullopt;
}

// --- Projection -----------------------------------------------------------

std::vector<Point2> project_coordinates(std::span<const LatLon> records, LatLon origin) {
    constexpr double deg = std::numbers::pi / 180.0;
    const double coslat = std::cos(origin.lat * deg);
    std::vector<Point2> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (!(r.lat >= -90.0 && r.lat <= 90.0) || !(r.lon >= -180.0 && r.lon <= 180.0))
            throw InputError("record " + std::to_string(i) + " has out-of-range coordinates");
        out.push_back({kEarthRadius * (r.lon - origin.lon) * coslat * deg, kEarthRadius * (r.lat - origin.lat) * deg});
    }
    return out;
}

LatLon unproject(Point2 p, LatLon origin) {
    constexpr double deg = std::numbers::pi / 180.0;
    const double coslat = std::cos(origin.lat * deg);
    return {origin.lat + p.y / (kEarthRadius * deg), origin.lon + p.x / (kEarthRadius * coslat * deg)};
}

LatLon centroid_origin(std::span<const LatLon> records) {
    if (records.empty()) throw InputError("no coordinates to center on");
    double lat = 0.0, lon = 0.0;
    for (const auto& r : records) {
        lat += r.lat;
        lon += r.lon;
    }
    return {lat / static_cast<double>(records.size()), lon / static_cast<double>(records.size())};
}

// --- Domain inference -----------------------------------------------------

double default_alpha(std::span<const Point2> points) {
    if (points.size() < 2) throw InputError("need at least two points to size alpha");
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return points[a].x < points[b].x; });
    std::vector<double> nn(points.size(), std::numeric_limits<double>::infinity());
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const Point2 p = points[order[oi]];
        double& best = nn[order[oi]];
        for (std::size_t oj = oi + 1; oj < order.size() && points[order[oj]].x - p.x < best; ++oj) {
            const double d = distance(p, points[order[oj]]);
            if (d > 0 && d < best) best = d;
        }
        for (std::size_t oj = oi; oj-- > 0 && p.x - points[order[oj]].x < best;) {
            const double d = distance(p, points[order[oj]]);
            if (d > 0 && d < best) best = d;
        }
    }
    std::vector<double> finite;
    for (double d : nn)
        if (std::isfinite(d)) finite.push_back(d);
    if (finite.empty()) throw GeometryError("all points coincide");
    std::nth_element(finite.begin(), finite.begin() + finite.size() / 2, finite.end());
    return 3.0 * finite[finite.size() / 2];
}

namespace {

void require_non_collinear(std::span<const Point2> points) {
    const Point2 p0 = points[0];
    std::size_t far = 0;
    double fd = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double d = distance(p0, points[i]);
        if (d > fd) {
            fd = d;
            far = i;
        }
    }
    if (fd == 0.0) throw GeometryError("all points coincide");
    for (const auto& p : points)
        if (std::fabs(cross(p0, points[far], p)) > 1e-12 * fd * fd) return;
    throw GeometryError("all points are collinear");
}

void rotate_to_lowest(Ring& r) {
    auto it = std::min_element(r.begin(), r.end(), [](Point2 a, Point2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    std::rotate(r.begin(), it, r.end());
}

} // namespace

InferredDomain infer_domain(std::span<const Point2> points, double alpha) {
    if (!(alpha > 0.0)) throw InputError("alpha must be positive");
    if (points.size() < 3) throw InputError("need at least 3 points to infer a domain");
    for (std::size_t i = 0; i < points.size(); ++i)
        if (!std::isfinite(points[i].x) || !std::isfinite(points[i].y))
            throw InputError("point " + std::to_string(i) + " is not finite");
    require_non_collinear(points);

    // Insert in lexicographic order so the result does not depend on input order.
    std::vector<Point2> sorted(points.begin(), points.end());
    std::sort(sorted.begin(), sorted.end(), [](Point2 a, Point2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

    Point2 lo = sorted.front(), hi = sorted.front();
    for (const auto& p : sorted) {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    detail::Cdt cdt(lo, hi);
    std::vector<int> vid;
    vid.reserve(sorted.size());
    for (const auto& p : sorted) vid.push_back(cdt.insert_point(p));

    const auto& tris = cdt.tris();
    const std::size_t nt = tris.size();
    const auto real = [&](std::size_t t) {
        return !cdt.is_super(tris[t].v[0]) && !cdt.is_super(tris[t].v[1]) && !cdt.is_super(tris[t].v[2]);
    };
    std::vector<std::uint8_t> kept(nt, 0);
    for (std::size_t t = 0; t < nt; ++t) kept[t] = real(t) && cdt.circumradius(static_cast<int>(t)) <= alpha;

    const auto components = [&](const std::vector<std::uint8_t>& member) {
        std::vector<int> comp(nt, -1);
        int nc = 0;
        for (std::size_t s = 0; s < nt; ++s) {
            if (!member[s] || comp[s] >= 0) continue;
            std::vector<int> stack{static_cast<int>(s)};
            comp[s] = nc;
            while (!stack.empty()) {
                const int t = stack.back();
                stack.pop_back();
                for (int u : tris[t].nbr)
                    if (u >= 0 && member[u] && comp[u] < 0) {
                        comp[u] = nc;
                        stack.push_back(u);
                    }
            }
            ++nc;
        }
        return std::pair{comp, nc};
    };

    const auto keep_largest = [&]() {
        auto [comp, nc] = components(kept);
        if (nc == 0) throw GeometryError("alpha too small: no triangle has circumradius <= alpha");
        std::vector<double> area(nc, 0.0);
        for (std::size_t t = 0; t < nt; ++t)
            if (comp[t] >= 0) area[comp[t]] += cdt.area(static_cast<int>(t));
        const int best = static_cast<int>(std::max_element(area.begin(), area.end()) - area.begin());
        for (std::size_t t = 0; t < nt; ++t) kept[t] = comp[t] == best;
    };

    keep_largest();

    // Fill holes smaller than 4 alpha^2.
    {
        std::vector<std::uint8_t> free(nt);
        for (std::size_t t = 0; t < nt; ++t) free[t] = !kept[t];
        auto [comp, nc] = components(free);
        std::vector<double> area(nc, 0.0);
        std::vector<std::uint8_t> exterior(nc, 0);
        for (std::size_t t = 0; t < nt; ++t) {
            if (comp[t] < 0) continue;
            area[comp[t]] += cdt.area(static_cast<int>(t));
            if (!real(t)) exterior[comp[t]] = 1;
            for (int u : tris[t].nbr)
                if (u < 0) exterior[comp[t]] = 1;
        }
        for (std::size_t t = 0; t < nt; ++t)
            if (comp[t] >= 0 && !exterior[comp[t]] && area[comp[t]] < 4.0 * alpha * alpha) kept[t] = 1;
    }

    // Resolve pinch vertices: keep only the largest wedge of kept triangles around a vertex.
    std::vector<std::vector<int>> incident(cdt.points().size());
    for (std::size_t t = 0; t < nt; ++t)
        for (int v : tris[t].v) incident[v].push_back(static_cast<int>(t));
    for (int round = 0; round < 1000; ++round) {
        bool changed = false;
        for (std::size_t v = 3; v < incident.size(); ++v) {
            std::vector<int> around;
            for (int t : incident[v])
                if (kept[t]) around.push_back(t);
            if (around.size() < 2) continue;
            std::map<int, int> wedge;
            int nw = 0;
            for (int s : around) {
                if (wedge.count(s)) continue;
                std::vector<int> stack{s};
                wedge[s] = nw;
                while (!stack.empty()) {
                    const int t = stack.back();
                    stack.pop_back();
                    for (int k = 0; k < 3; ++k) {
                        const int u = tris[t].nbr[k];
                        if (tris[t].v[k] == static_cast<int>(v) || u < 0 || !kept[u] || wedge.count(u)) continue;
                        wedge[u] = nw;
                        stack.push_back(u);
                    }
                }
                ++nw;
            }
            if (nw < 2) continue;
            std::vector<double> area(nw, 0.0);
            for (auto [t, w] : wedge) area[w] += cdt.area(t);
            const int best = static_cast<int>(std::max_element(area.begin(), area.end()) - area.begin());
            for (auto [t, w] : wedge)
                if (w != best) kept[t] = 0;
            changed = true;
        }
        if (!changed) break;
        keep_largest();
    }

    // Chain directed boundary edges into rings.
    std::map<int, int> next_vertex;
    for (std::size_t t = 0; t < nt; ++t) {
        if (!kept[t]) continue;
        for (int k = 0; k < 3; ++k) {
            const int u = tris[t].nbr[k];
            if (u >= 0 && kept[u]) continue;
            next_vertex[tris[t].v[(k + 1) % 3]] = tris[t].v[(k + 2) % 3];
        }
    }
    InferredDomain out;
    out.alpha = alpha;
    std::vector<Ring> rings;
    while (!next_vertex.empty()) {
        const int start = next_vertex.begin()->first;
        Ring ring;
        int v = start;
        do {
            ring.push_back(cdt.points()[v]);
            auto it = next_vertex.find(v);
            if (it == next_vertex.end()) throw GeometryError("alpha-shape boundary is not closed");
            const int w = it->second;
            next_vertex.erase(it);
            v = w;
        } while (v != start);
        rotate_to_lowest(ring);
        rings.push_back(std::move(ring));
    }
    for (auto& r : rings) {
        if (signed_area(r) > 0.0) {
            if (!out.polygon.outer.empty()) throw GeometryError("alpha-shape produced more than one outer boundary");
            out.polygon.outer = std::move(r);
        } else {
            out.polygon.holes.push_back(std::move(r));
        }
    }
    std::sort(out.polygon.holes.begin(), out.polygon.holes.end(),
              [](const Ring& a, const Ring& b) { return a.front().x < b.front().x || (a.front().x == b.front().x && a.front().y < b.front().y); });

    std::vector<std::uint8_t> covered(cdt.points().size(), 0);
    for (std::size_t t = 0; t < nt; ++t)
        if (kept[t])
            for (int v : tris[t].v) covered[v] = 1;
    for (const auto& p : points) {
        const auto it = std::lower_bound(sorted.begin(), sorted.end(), p,
                                         [](Point2 a, Point2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
        const int v = vid[static_cast<std::size_t>(it - sorted.begin())];
        if (!covered[v]) ++out.dropped_points;
    }
    return out;
}

// --- Triangulation --------------------------------------------------------

Triangulation triangulate(const DomainPolygon& domain, const TriangulateOptions& options) {
    if (!(options.max_area > 0.0)) throw InputError("max_area must be positive");
    if (!(options.min_angle >= 0.0 && options.min_angle <= 33.0)) throw InputError("min_angle must lie in [0, 33] degrees");
    domain.validate();

    Point2 lo = domain.outer.front(), hi = lo;
    for (const auto& p : domain.outer) {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    detail::Cdt cdt(lo, hi);
    std::vector<std::vector<int>> ids;
    const auto insert_ring = [&](const Ring& r) {
        std::vector<int> v;
        for (const auto& p : r) {
            const int id = cdt.insert_point(p);
            cdt.mark_input(id);
            v.push_back(id);
        }
        ids.push_back(std::move(v));
    };
    insert_ring(domain.outer);
    for (const auto& h : domain.holes) insert_ring(h);
    for (const auto& v : ids) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            const int a = v[i], b = v[(i + 1) % v.size()];
            cdt.add_original_segment(a, b);
            cdt.insert_segment(a, b);
        }
    }
    cdt.classify();
    const auto stats = cdt.refine(options.max_area, options.min_angle, options.max_vertices);

    const auto& tris = cdt.tris();
    const auto& pts = cdt.points();
    std::vector<int> remap(pts.size(), -1);
    std::vector<Point2> vertices;
    std::vector<std::uint8_t> flags;
    std::vector<TriangleMesh::Triangle> triangles;
    for (const auto& tri : tris) {
        if (!tri.inside) continue;
        TriangleMesh::Triangle out{};
        for (int k = 0; k < 3; ++k) {
            const int v = tri.v[k];
            if (remap[v] < 0) {
                remap[v] = static_cast<int>(vertices.size());
                vertices.push_back(pts[v]);
                flags.push_back(0);
            }
            out[k] = static_cast<std::uint32_t>(remap[v]);
        }
        for (int k = 0; k < 3; ++k) {
            if (!tri.constrained[k]) continue;
            flags[out[(k + 1) % 3]] = 1;
            flags[out[(k + 2) % 3]] = 1;
        }
        triangles.push_back(out);
    }
    return {TriangleMesh(std::move(vertices), std::move(triangles), std::move(flags)), stats.skinny};
}

// --- IO -------------------------------------------------------------------

void write_mesh_text(std::ostream& os, const TriangleMesh& mesh) {
    os << mesh.num_vertices() << ' ' << mesh.num_triangles() << '\n';
    os << std::setprecision(17);
    for (std::size_t k = 0; k < mesh.num_vertices(); ++k)
        os << mesh.vertex(k).x << ' ' << mesh.vertex(k).y << ' ' << int(mesh.boundary_flags()[k]) << '\n';
    for (const auto& t : mesh.triangles()) os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

TriangleMesh read_mesh_text(std::istream& is) {
    std::size_t k = 0, t = 0;
    if (!(is >> k >> t)) throw IoError("mesh header 'K T' missing");
    std::vector<Point2> v(k);
    std::vector<std::uint8_t> flags(k);
    for (std::size_t i = 0; i < k; ++i) {
        int f = 0;
        if (!(is >> v[i].x >> v[i].y >> f)) throw IoError("mesh vertex line " + std::to_string(i) + " malformed");
        flags[i] = static_cast<std::uint8_t>(f != 0);
    }
    std::vector<TriangleMesh::Triangle> tris(t);
    for (std::size_t i = 0; i < t; ++i)
        if (!(is >> tris[i][0] >> tris[i][1] >> tris[i][2])) throw IoError("mesh triangle line " + std::to_string(i) + " malformed");
    return TriangleMesh(std::move(v), std::move(tris), std::move(flags));
}

nlohmann::json domain_to_geojson(const DomainPolygon& domain, LatLon origin) {
    const auto ring_json = [&](const Ring& r) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& p : r) {
            const LatLon ll = unproject(p, origin);
            arr.push_back({ll.lon, ll.lat});
        }
        const LatLon first = unproject(r.front(), origin);
        arr.push_back({first.lon, first.lat});
        return arr;
    };
    nlohmann::json coords = nlohmann::json::array();
    coords.push_back(ring_json(domain.outer));
    for (const auto& h : domain.holes) coords.push_back(ring_json(h));
    return {{"type", "Polygon"}, {"coordinates", coords}};
}

DomainPolygon domain_from_geojson(const nlohmann::json& geojson, LatLon origin) {
    const nlohmann::json* g = &geojson;
    if (g->value("type", "") == "FeatureCollection") {
        if (!g->contains("features") || (*g)["features"].empty()) throw InputError("GeoJSON FeatureCollection is empty");
        g = &(*g)["features"][0];
    }
    if (g->value("type", "") == "Feature") g = &(*g)["geometry"];
    if (g->value("type", "") != "Polygon") throw InputError("GeoJSON geometry must be a Polygon");
    const auto& coords = (*g)["coordinates"];
    if (!coords.is_array() || coords.empty()) throw InputError("GeoJSON Polygon has no rings");
    DomainPolygon out;
    for (std::size_t r = 0; r < coords.size(); ++r) {
        std::vector<LatLon> ll;
        for (const auto& c : coords[r]) ll.push_back({c.at(1).get<double>(), c.at(0).get<double>()});
        if (ll.size() > 1 && ll.front().lat == ll.back().lat && ll.front().lon == ll.back().lon) ll.pop_back();
        Ring ring = project_coordinates(ll, origin);
        const double a = signed_area(ring);
        if ((r == 0 && a < 0) || (r > 0 && a > 0)) std::reverse(ring.begin(), ring.end());
        if (r == 0)
            out.outer = std::move(ring);
        else
            out.holes.push_back(std::move(ring));
    }
    out.validate();
    return out;
}

} // namespace hsfm
