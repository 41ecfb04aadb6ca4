#include "cdt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "hsfm/errors.hpp"

namespace hsfm::detail {

namespace {

constexpr int next(int i) { return (i + 1) % 3; }
constexpr int prev(int i) { return (i + 2) % 3; }

constexpr double kMinSegmentLength = 1e-6;

bool properly_intersect(Point2 a, Point2 b, Point2 c, Point2 d) {
    const double d1 = cross(a, b, c);
    const double d2 = cross(a, b, d);
    const double d3 = cross(c, d, a);
    const double d4 = cross(c, d, b);
    return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

Point2 circumcenter(Point2 a, Point2 b, Point2 c) {
    const double bx = b.x - a.x, by = b.y - a.y;
    const double cx = c.x - a.x, cy = c.y - a.y;
    const double d = 2.0 * (bx * cy - by * cx);
    const double b2 = bx * bx + by * by;
    const double c2 = cx * cx + cy * cy;
    return {a.x + (cy * b2 - by * c2) / d, a.y + (bx * c2 - cx * b2) / d};
}

std::array<int, 3> sorted(std::array<int, 3> v) {
    std::sort(v.begin(), v.end());
    return v;
}

} // namespace

Cdt::Cdt(Point2 lo, Point2 hi) {
    scale_ = std::max({hi.x - lo.x, hi.y - lo.y, 1e-9});
    const Point2 c{0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y)};
    const double m = 100.0 * scale_;
    add_vertex({c.x - m, c.y - m});
    add_vertex({c.x + m, c.y - m});
    add_vertex({c.x, c.y + m});
    const int t = new_tri();
    set_tri(t, {0, 1, 2}, {-1, -1, -1}, {false, false, false}, false);
}

double Cdt::orient(Point2 a, Point2 b, Point2 c) const {
    const long double abx = static_cast<long double>(b.x) - a.x;
    const long double aby = static_cast<long double>(b.y) - a.y;
    const long double acx = static_cast<long double>(c.x) - a.x;
    const long double acy = static_cast<long double>(c.y) - a.y;
    return static_cast<double>(abx * acy - aby * acx);
}

double Cdt::orient(int a, int b, int c) const { return orient(pts_[a], pts_[b], pts_[c]); }

bool Cdt::in_circle(int t, Point2 p) const {
    const auto& v = tris_[t].v;
    long double m[3][3];
    long double mag = 0;
    for (int k = 0; k < 3; ++k) {
        const long double dx = static_cast<long double>(pts_[v[k]].x) - p.x;
        const long double dy = static_cast<long double>(pts_[v[k]].y) - p.y;
        m[k][0] = dx;
        m[k][1] = dy;
        m[k][2] = dx * dx + dy * dy;
    }
    const long double t0 = m[0][2] * (m[1][0] * m[2][1] - m[2][0] * m[1][1]);
    const long double t1 = m[1][2] * (m[2][0] * m[0][1] - m[0][0] * m[2][1]);
    const long double t2 = m[2][2] * (m[0][0] * m[1][1] - m[1][0] * m[0][1]);
    mag = std::fabs(t0) + std::fabs(t1) + std::fabs(t2);
    return t0 + t1 + t2 > 1e-14L * mag;
}

int Cdt::add_vertex(Point2 p) {
    pts_.push_back(p);
    vtri_.push_back(-1);
    is_input_.push_back(0);
    seg_origin_.push_back(-1);
    return static_cast<int>(pts_.size()) - 1;
}

int Cdt::new_tri() {
    tris_.emplace_back();
    return static_cast<int>(tris_.size()) - 1;
}

void Cdt::set_tri(int t, std::array<int, 3> v, std::array<int, 3> nbr, std::array<bool, 3> c, bool inside) {
    auto& tri = tris_[t];
    tri.v = v;
    tri.nbr = nbr;
    tri.constrained = c;
    tri.inside = inside;
    for (int k : v) vtri_[k] = t;
    touched_.push_back(t);
}

void Cdt::replace_neighbor(int t, int old_nbr, int new_nbr) {
    if (t < 0) return;
    for (auto& n : tris_[t].nbr) {
        if (n == old_nbr) {
            n = new_nbr;
            return;
        }
    }
}

double Cdt::area(int t) const {
    const auto& v = tris_[t].v;
    return 0.5 * orient(v[0], v[1], v[2]);
}

double Cdt::circumradius(int t) const {
    const auto& v = tris_[t].v;
    const double a = distance(pts_[v[0]], pts_[v[1]]);
    const double b = distance(pts_[v[1]], pts_[v[2]]);
    const double c = distance(pts_[v[2]], pts_[v[0]]);
    const double ar = area(t);
    if (ar <= 0) return std::numeric_limits<double>::infinity();
    return a * b * c / (4.0 * ar);
}

Cdt::Location Cdt::locate(Point2 p, int start, bool stop_at_constrained) const {
    int t = (start >= 0 && start < static_cast<int>(tris_.size())) ? start : last_;
    const std::size_t max_steps = 4 * tris_.size() + 64;
    for (std::size_t step = 0; step < max_steps; ++step) {
        const auto& tri = tris_[t];
        double o[3];
        bool zero[3];
        int neg = -1;
        for (int k = 0; k < 3; ++k) {
            const int i = static_cast<int>((k + step) % 3);
            const Point2 a = pts_[tri.v[next(i)]];
            const Point2 b = pts_[tri.v[prev(i)]];
            o[i] = orient(a, b, p);
            const double tol = 1e-12 * distance(a, b) * std::max(distance(p, a), distance(p, b));
            zero[i] = std::fabs(o[i]) <= tol;
            if (o[i] < 0 && !zero[i] && neg < 0) neg = i;
        }
        if (neg >= 0) {
            if (stop_at_constrained && tri.constrained[neg]) return {Where::outside, t, neg};
            if (tri.nbr[neg] < 0) return {Where::outside, t, neg};
            t = tri.nbr[neg];
            continue;
        }
        const int nz = zero[0] + zero[1] + zero[2];
        if (nz >= 2) {
            for (int k = 0; k < 3; ++k)
                if (!zero[k]) return {Where::vertex, t, k};
            return {Where::vertex, t, 0};
        }
        if (nz == 1) {
            for (int k = 0; k < 3; ++k)
                if (zero[k]) return {Where::edge, t, k};
        }
        return {Where::inside, t, -1};
    }
    // Walk failed to converge; fall back to a scan.
    for (int s = 0; s < static_cast<int>(tris_.size()); ++s) {
        const auto& tri = tris_[s];
        bool in = true;
        for (int i = 0; i < 3 && in; ++i) in = orient(pts_[tri.v[next(i)]], pts_[tri.v[prev(i)]], p) >= 0;
        if (in) return locate(p, s, stop_at_constrained);
    }
    return {Where::outside, -1, -1};
}

int Cdt::split_triangle(int t, Point2 p) {
    const int v = add_vertex(p);
    const Tri old = tris_[t];
    const int a = old.v[0], b = old.v[1], c = old.v[2];
    const int t1 = new_tri();
    const int t2 = new_tri();
    set_tri(t, {a, b, v}, {t1, t2, old.nbr[2]}, {false, false, old.constrained[2]}, old.inside);
    set_tri(t1, {b, c, v}, {t2, t, old.nbr[0]}, {false, false, old.constrained[0]}, old.inside);
    set_tri(t2, {c, a, v}, {t, t1, old.nbr[1]}, {false, false, old.constrained[1]}, old.inside);
    replace_neighbor(old.nbr[0], t, t1);
    replace_neighbor(old.nbr[1], t, t2);
    vtri_[v] = t;
    return v;
}

int Cdt::split_edge(int t, int i, Point2 p) {
    const int v = add_vertex(p);
    const Tri told = tris_[t];
    const int c = told.v[i], a = told.v[next(i)], b = told.v[prev(i)];
    const int t_na = told.nbr[next(i)];
    const int t_nb = told.nbr[prev(i)];
    const bool cab = told.constrained[i];
    const int u = told.nbr[i];

    const int t2 = new_tri();
    if (u < 0) {
        set_tri(t, {c, a, v}, {-1, t2, t_nb}, {cab, false, told.constrained[prev(i)]}, told.inside);
        set_tri(t2, {c, v, b}, {-1, t_na, t}, {cab, told.constrained[next(i)], false}, told.inside);
        replace_neighbor(t_na, t, t2);
        return v;
    }
    const Tri uold = tris_[u];
    int j = 0;
    while (uold.nbr[j] != t) ++j;
    const int d = uold.v[j];
    const int u_na = uold.nbr[prev(j)];
    const int u_nb = uold.nbr[next(j)];
    const int u2 = new_tri();

    set_tri(t, {c, a, v}, {u2, t2, t_nb}, {cab, false, told.constrained[prev(i)]}, told.inside);
    set_tri(t2, {c, v, b}, {u, t_na, t}, {cab, told.constrained[next(i)], false}, told.inside);
    set_tri(u, {d, b, v}, {t2, u2, u_na}, {cab, false, uold.constrained[prev(j)]}, uold.inside);
    set_tri(u2, {d, v, a}, {t, u_nb, u}, {cab, uold.constrained[next(j)], false}, uold.inside);
    replace_neighbor(t_na, t, t2);
    replace_neighbor(u_nb, u, u2);
    return v;
}

void Cdt::flip(int t, int i) {
    const Tri told = tris_[t];
    const int u = told.nbr[i];
    const Tri uold = tris_[u];
    int j = 0;
    while (uold.nbr[j] != t) ++j;
    const int c = told.v[i], a = told.v[next(i)], b = told.v[prev(i)];
    const int d = uold.v[j];
    const int t_na = told.nbr[next(i)];
    const int t_nb = told.nbr[prev(i)];
    const int u_nb = uold.nbr[next(j)];
    const int u_na = uold.nbr[prev(j)];
    set_tri(t, {c, a, d}, {u_nb, u, t_nb}, {uold.constrained[next(j)], false, told.constrained[prev(i)]}, told.inside);
    set_tri(u, {c, d, b}, {u_na, t_na, t}, {uold.constrained[prev(j)], told.constrained[next(i)], false}, told.inside);
    replace_neighbor(u_nb, u, t);
    replace_neighbor(t_na, t, u);
}

void Cdt::legalize(int v) {
    legalize_stack_.clear();
    for (int t : triangles_around(v)) legalize_stack_.push_back(t);
    std::size_t guard = 0;
    while (!legalize_stack_.empty() && guard++ < 1000000) {
        const int t = legalize_stack_.back();
        legalize_stack_.pop_back();
        const auto& tri = tris_[t];
        int i = -1;
        for (int k = 0; k < 3; ++k)
            if (tri.v[k] == v) i = k;
        if (i < 0 || tri.constrained[i] || tri.nbr[i] < 0) continue;
        const int u = tri.nbr[i];
        const auto& utri = tris_[u];
        int j = 0;
        while (utri.nbr[j] != t) ++j;
        if (!in_circle(t, pts_[utri.v[j]])) continue;
        flip(t, i);
        legalize_stack_.push_back(t);
        legalize_stack_.push_back(u);
    }
}

std::vector<int> Cdt::triangles_around(int v) const {
    std::vector<int> out;
    const int start = vtri_[v];
    if (start < 0) return out;
    std::vector<int> stack{start};
    while (!stack.empty()) {
        const int t = stack.back();
        stack.pop_back();
        if (std::find(out.begin(), out.end(), t) != out.end()) continue;
        out.push_back(t);
        const auto& tri = tris_[t];
        for (int k = 0; k < 3; ++k) {
            if (tri.v[k] == v || tri.nbr[k] < 0) continue;
            stack.push_back(tri.nbr[k]);
        }
    }
    return out;
}

bool Cdt::find_edge(int a, int b, int& t, int& i) const {
    for (int s : triangles_around(a)) {
        const auto& tri = tris_[s];
        int ia = -1, ib = -1;
        for (int k = 0; k < 3; ++k) {
            if (tri.v[k] == a) ia = k;
            if (tri.v[k] == b) ib = k;
        }
        if (ia >= 0 && ib >= 0) {
            t = s;
            i = 3 - ia - ib;
            return true;
        }
    }
    return false;
}

int Cdt::insert_point(Point2 p) {
    const Location loc = locate(p, last_, false);
    if (loc.tri < 0) throw GeometryError("point outside triangulation bounds");
    const auto& tri = tris_[loc.tri];
    for (int k : tri.v)
        if (distance(pts_[k], p) <= 1e-12 * scale_) return k;
    int v = -1;
    switch (loc.where) {
        case Where::vertex:
            return tri.v[loc.index];
        case Where::edge:
            v = split_edge(loc.tri, loc.index, p);
            break;
        case Where::inside:
            v = split_triangle(loc.tri, p);
            break;
        case Where::outside:
            throw GeometryError("point outside triangulation bounds");
    }
    legalize(v);
    last_ = vtri_[v];
    touched_.clear();
    return v;
}

void Cdt::insert_segment(int a, int b) {
    if (a == b) return;
    int t = -1, i = -1;
    const auto mark = [&]() {
        tris_[t].constrained[i] = true;
        const int u = tris_[t].nbr[i];
        if (u >= 0)
            for (int k = 0; k < 3; ++k)
                if (tris_[u].nbr[k] == t) tris_[u].constrained[k] = true;
    };
    if (find_edge(a, b, t, i)) {
        mark();
        return;
    }

    const Point2 pa = pts_[a], pb = pts_[b];
    const double len = distance(pa, pb);
    int split = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int v = 3; v < static_cast<int>(pts_.size()); ++v) {
        if (v == a || v == b) continue;
        const Point2 pv = pts_[v];
        if (std::fabs(orient(pa, pb, pv)) > 1e-12 * len * len) continue;
        const double s = ((pv.x - pa.x) * (pb.x - pa.x) + (pv.y - pa.y) * (pb.y - pa.y)) / (len * len);
        if (s <= 0.0 || s >= 1.0) continue;
        if (s < best) {
            best = s;
            split = v;
        }
    }
    if (split >= 0) {
        insert_segment(a, split);
        insert_segment(split, b);
        return;
    }

    std::deque<std::array<int, 2>> crossing;
    for (int s = 0; s < static_cast<int>(tris_.size()); ++s) {
        const auto& tri = tris_[s];
        for (int k = 0; k < 3; ++k) {
            const int u = tri.v[next(k)], w = tri.v[prev(k)];
            if (tri.nbr[k] >= 0 && tri.nbr[k] < s) continue;
            if (!properly_intersect(pa, pb, pts_[u], pts_[w])) continue;
            if (tri.constrained[k]) throw GeometryError("boundary segments intersect");
            crossing.push_back({u, w});
        }
    }

    std::vector<std::array<int, 2>> created;
    std::size_t guard = 0;
    const std::size_t guard_max = 1000 * (crossing.size() + 10);
    while (!crossing.empty()) {
        if (++guard > guard_max) throw GeometryError("segment recovery did not converge");
        const auto e = crossing.front();
        crossing.pop_front();
        int s, k;
        if (!find_edge(e[0], e[1], s, k)) continue;
        const int c = tris_[s].v[k];
        const int u = tris_[s].nbr[k];
        int j = 0;
        while (tris_[u].nbr[j] != s) ++j;
        const int d = tris_[u].v[j];
        if (!properly_intersect(pts_[c], pts_[d], pts_[e[0]], pts_[e[1]])) {
            crossing.push_back(e);
            continue;
        }
        flip(s, k);
        if ((c == a || c == b || d == a || d == b) || !properly_intersect(pa, pb, pts_[c], pts_[d])) {
            created.push_back({c, d});
        } else {
            crossing.push_back({c, d});
        }
    }
    if (!find_edge(a, b, t, i)) throw GeometryError("segment recovery failed");
    mark();

    bool changed = true;
    std::size_t rounds = 0;
    while (changed && rounds++ < 100) {
        changed = false;
        for (auto& e : created) {
            if ((e[0] == a && e[1] == b) || (e[0] == b && e[1] == a)) continue;
            int s, k;
            if (!find_edge(e[0], e[1], s, k)) continue;
            if (tris_[s].constrained[k] || tris_[s].nbr[k] < 0) continue;
            const int u = tris_[s].nbr[k];
            int j = 0;
            while (tris_[u].nbr[j] != s) ++j;
            const int d = tris_[u].v[j];
            if (!in_circle(s, pts_[d])) continue;
            const int c = tris_[s].v[k];
            flip(s, k);
            e = {c, d};
            changed = true;
        }
    }
    touched_.clear();
}

void Cdt::classify() {
    std::vector<std::int8_t> parity(tris_.size(), -1);
    const int start = vtri_[0];
    std::vector<int> stack{start};
    parity[start] = 0;
    while (!stack.empty()) {
        const int t = stack.back();
        stack.pop_back();
        const auto& tri = tris_[t];
        for (int k = 0; k < 3; ++k) {
            const int u = tri.nbr[k];
            if (u < 0 || parity[u] >= 0) continue;
            parity[u] = static_cast<std::int8_t>(parity[t] ^ (tri.constrained[k] ? 1 : 0));
            stack.push_back(u);
        }
    }
    for (std::size_t t = 0; t < tris_.size(); ++t) tris_[t].inside = parity[t] == 1;
}

bool Cdt::is_bad(int t, double max_area, double min_angle_cos) const {
    const auto& tri = tris_[t];
    if (!tri.inside) return false;
    if (area(t) > max_area) return true;
    if (min_angle_cos >= 1.0) return false;
    double l2[3];
    for (int k = 0; k < 3; ++k) {
        const Point2 a = pts_[tri.v[next(k)]], b = pts_[tri.v[prev(k)]];
        l2[k] = (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y);
    }
    const int s = static_cast<int>(std::min_element(l2, l2 + 3) - l2);
    const double bb = l2[next(s)], cc = l2[prev(s)];
    const double cos_min = (bb + cc - l2[s]) / (2.0 * std::sqrt(bb * cc));
    return cos_min > min_angle_cos;
}

bool Cdt::is_seditious(int t) const {
    const auto& tri = tris_[t];
    int s = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
        const double l = distance(pts_[tri.v[next(k)]], pts_[tri.v[prev(k)]]);
        if (l < best) {
            best = l;
            s = k;
        }
    }
    const int p = tri.v[next(s)], q = tri.v[prev(s)];
    const int sp = seg_origin_[p], sq = seg_origin_[q];
    if (sp < 0 || sq < 0 || sp == sq) return false;
    const auto& e1 = original_segments_[sp];
    const auto& e2 = original_segments_[sq];
    int apex = -1;
    for (int x : e1)
        for (int y : e2)
            if (x == y) apex = x;
    if (apex < 0) return false;
    const Point2 c = pts_[apex];
    const Point2 o1 = pts_[e1[0] == apex ? e1[1] : e1[0]];
    const Point2 o2 = pts_[e2[0] == apex ? e2[1] : e2[0]];
    const double dot = (o1.x - c.x) * (o2.x - c.x) + (o1.y - c.y) * (o2.y - c.y);
    const double cosang = dot / (distance(o1, c) * distance(o2, c));
    if (cosang < 0.5) return false; // angle >= 60 degrees
    const double dp = distance(pts_[p], c), dq = distance(pts_[q], c);
    return std::fabs(dp - dq) <= 1e-3 * std::max(dp, dq);
}

bool Cdt::encroached(int t, int i) const {
    const auto& tri = tris_[t];
    const Point2 a = pts_[tri.v[next(i)]], b = pts_[tri.v[prev(i)]];
    const auto test = [&](int apex) {
        const Point2 c = pts_[apex];
        return (a.x - c.x) * (b.x - c.x) + (a.y - c.y) * (b.y - c.y) < 0.0;
    };
    if (tri.inside && test(tri.v[i])) return true;
    const int u = tri.nbr[i];
    if (u >= 0 && tris_[u].inside) {
        for (int k = 0; k < 3; ++k)
            if (tris_[u].nbr[k] == t) return test(tris_[u].v[k]);
    }
    return false;
}

int Cdt::segment_origin(int a, int b) const {
    if (seg_origin_[a] >= 0) return seg_origin_[a];
    if (seg_origin_[b] >= 0) return seg_origin_[b];
    for (std::size_t s = 0; s < original_segments_.size(); ++s) {
        const auto& e = original_segments_[s];
        if ((e[0] == a && e[1] == b) || (e[0] == b && e[1] == a)) return static_cast<int>(s);
    }
    return -1;
}

bool Cdt::split_segment(int a, int b) {
    const Point2 pa = pts_[a], pb = pts_[b];
    const double len = distance(pa, pb);
    if (len < 2.0 * kMinSegmentLength) return false;
    int t, i;
    if (!find_edge(a, b, t, i) || !tris_[t].constrained[i]) return false;
    Point2 p = 0.5 * (pa + pb);
    // Concentric shells around input vertices so that repeated splits near a
    // small input angle land at matching radii.
    if (is_input_[a] != is_input_[b]) {
        const Point2 c = is_input_[a] ? pa : pb;
        const Point2 o = is_input_[a] ? pb : pa;
        const double d = std::exp2(std::round(std::log2(0.5 * len)));
        p = c + (d / len) * (o - c);
    }
    const int origin = segment_origin(a, b);
    const int v = split_edge(t, i, p);
    seg_origin_[v] = origin;
    legalize(v);
    return true;
}

void Cdt::queue_touched() {
    std::sort(touched_.begin(), touched_.end());
    touched_.erase(std::unique(touched_.begin(), touched_.end()), touched_.end());
    for (int t : touched_) {
        const auto& tri = tris_[t];
        for (int k = 0; k < 3; ++k)
            if (tri.constrained[k] && encroached(t, k)) encroach_queue_.push_back({tri.v[next(k)], tri.v[prev(k)]});
        if (is_bad(t, ref_max_area_, ref_min_cos_)) bad_queue_.push_back({t, tri.v});
    }
    touched_.clear();
}

Cdt::RefineStats Cdt::refine(double max_area, double min_angle_deg, std::size_t max_vertices) {
    ref_max_area_ = max_area;
    ref_min_cos_ = min_angle_deg > 0 ? std::cos(min_angle_deg * std::numbers::pi / 180.0) : 1.0;
    std::set<std::array<int, 3>> exempt;

    touched_.clear();
    for (int t = 0; t < static_cast<int>(tris_.size()); ++t) touched_.push_back(t);
    queue_touched();

    const auto check_cap = [&]() {
        if (pts_.size() - 3 > max_vertices)
            throw ResourceError("mesh refinement exceeded the vertex cap of " + std::to_string(max_vertices));
    };

    while (true) {
        if (!encroach_queue_.empty()) {
            const auto [a, b] = encroach_queue_.front();
            encroach_queue_.pop_front();
            int t, i;
            if (!find_edge(a, b, t, i) || !tris_[t].constrained[i] || !encroached(t, i)) continue;
            if (split_segment(a, b)) check_cap();
            queue_touched();
            continue;
        }
        if (bad_queue_.empty()) break;
        const auto [t, verts] = bad_queue_.front();
        bad_queue_.pop_front();
        if (tris_[t].v != verts || !is_bad(t, max_area, ref_min_cos_)) continue;
        const auto key = sorted(verts);
        if (exempt.count(key)) continue;

        const bool area_bad = area(t) > max_area;
        if (!area_bad && is_seditious(t)) {
            exempt.insert(key);
            continue;
        }
        const auto& v = tris_[t].v;
        const Point2 cc = circumcenter(pts_[v[0]], pts_[v[1]], pts_[v[2]]);
        const Location loc = locate(cc, t, true);
        if (loc.where == Where::outside) {
            bool split = false;
            if (loc.tri >= 0 && tris_[loc.tri].constrained[loc.index]) {
                const auto& bt = tris_[loc.tri];
                split = split_segment(bt.v[next(loc.index)], bt.v[prev(loc.index)]);
            }
            if (split) {
                check_cap();
                bad_queue_.push_back({t, verts});
            } else {
                exempt.insert(key);
            }
            queue_touched();
            continue;
        }
        if (loc.where == Where::vertex) {
            exempt.insert(key);
            continue;
        }

        // Constrained edges bounding the cavity of cc.
        std::vector<std::array<int, 2>> hit;
        std::vector<int> cavity{loc.tri};
        std::vector<int> stack{loc.tri};
        while (!stack.empty()) {
            const int s = stack.back();
            stack.pop_back();
            const auto& tri = tris_[s];
            for (int k = 0; k < 3; ++k) {
                const Point2 a = pts_[tri.v[next(k)]], b = pts_[tri.v[prev(k)]];
                if (tri.constrained[k]) {
                    if ((a.x - cc.x) * (b.x - cc.x) + (a.y - cc.y) * (b.y - cc.y) < 0.0)
                        hit.push_back({tri.v[next(k)], tri.v[prev(k)]});
                    continue;
                }
                const int u = tri.nbr[k];
                if (u < 0 || std::find(cavity.begin(), cavity.end(), u) != cavity.end()) continue;
                if (!in_circle(u, cc)) continue;
                cavity.push_back(u);
                stack.push_back(u);
            }
        }
        if (loc.where == Where::edge && tris_[loc.tri].constrained[loc.index]) {
            const auto& bt = tris_[loc.tri];
            hit.push_back({bt.v[next(loc.index)], bt.v[prev(loc.index)]});
        }
        if (!hit.empty()) {
            bool any = false;
            for (const auto& e : hit) any = split_segment(e[0], e[1]) || any;
            if (any) {
                check_cap();
                bad_queue_.push_back({t, verts});
            } else {
                exempt.insert(key);
            }
            queue_touched();
            continue;
        }

        const int nv = loc.where == Where::edge ? split_edge(loc.tri, loc.index, cc) : split_triangle(loc.tri, cc);
        legalize(nv);
        check_cap();
        queue_touched();
    }

    RefineStats stats;
    for (int t = 0; t < static_cast<int>(tris_.size()); ++t)
        if (tris_[t].inside && is_bad(t, std::numeric_limits<double>::infinity(), ref_min_cos_)) ++stats.skinny;
    return stats;
}

} // namespace hsfm::detail
