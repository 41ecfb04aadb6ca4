#ifndef HSFM_CDT_HPP
#define HSFM_CDT_HPP

#include <array>
#include <cstdint>
#include <deque>
#include <utility>
#include <vector>

#include "hsfm/geometry.hpp"

namespace hsfm::detail {

// Incremental constrained Delaunay triangulation over a large enclosing
// triangle (vertices 0, 1, 2). Edge i of a triangle is the edge opposite
// v[i]; nbr[i] is the triangle across it.
class Cdt {
  public:
    struct Tri {
        std::array<int, 3> v{};
        std::array<int, 3> nbr{-1, -1, -1};
        std::array<bool, 3> constrained{};
        bool inside = false;
    };

    explicit Cdt(Point2 lo, Point2 hi);

    // Returns the vertex index; an existing vertex is returned for duplicates.
    int insert_point(Point2 p);
    // Forces segment a-b into the triangulation. Vertices lying on the segment
    // split it.
    void insert_segment(int a, int b);
    // Flood-fills inside flags: crossing a constrained edge toggles parity.
    void classify();

    struct RefineStats {
        std::size_t skinny = 0;
    };
    RefineStats refine(double max_area, double min_angle_deg, std::size_t max_vertices);

    bool is_super(int v) const { return v < 3; }
    const std::vector<Point2>& points() const { return pts_; }
    const std::vector<Tri>& tris() const { return tris_; }
    double circumradius(int t) const;
    double area(int t) const;

    void mark_input(int v) { is_input_[v] = 1; }
    void add_original_segment(int a, int b) { original_segments_.push_back({a, b}); }

  private:
    enum class Where { inside, edge, vertex, outside };
    struct Location {
        Where where = Where::outside;
        int tri = -1;
        int index = -1; // edge or vertex index inside tri
    };

    // Walks from start toward p. If stop_at_constrained and the walk would
    // cross a constrained edge, the blocking (tri, edge) is returned with
    // Where::outside.
    Location locate(Point2 p, int start, bool stop_at_constrained) const;
    int add_vertex(Point2 p);
    int new_tri();
    void set_tri(int t, std::array<int, 3> v, std::array<int, 3> nbr, std::array<bool, 3> c, bool inside);
    void replace_neighbor(int t, int old_nbr, int new_nbr);
    int split_triangle(int t, Point2 p);
    int split_edge(int t, int i, Point2 p);
    void flip(int t, int i);
    void legalize(int v);
    bool find_edge(int a, int b, int& t, int& i) const;
    std::vector<int> triangles_around(int v) const;
    double orient(int a, int b, int c) const;
    double orient(Point2 a, Point2 b, Point2 c) const;
    bool in_circle(int t, Point2 p) const;

    // Refinement helpers.
    bool is_bad(int t, double max_area, double min_angle_cos) const;
    bool is_seditious(int t) const;
    bool encroached(int t, int i) const;
    bool split_segment(int a, int b);
    int segment_origin(int a, int b) const;
    void queue_touched();

    std::vector<Point2> pts_;
    std::vector<Tri> tris_;
    std::vector<int> vtri_;
    std::vector<std::uint8_t> is_input_;
    std::vector<int> seg_origin_;
    std::vector<std::array<int, 2>> original_segments_;
    std::vector<int> touched_;
    std::vector<int> legalize_stack_;
    double scale_ = 1.0;
    int last_ = 0;

    std::deque<std::pair<int, int>> encroach_queue_;
    std::deque<std::pair<int, std::array<int, 3>>> bad_queue_;
    double ref_max_area_ = 0.0;
    double ref_min_cos_ = 1.0;
};

} // namespace hsfm::detail

#endif
