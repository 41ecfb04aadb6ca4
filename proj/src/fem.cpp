#include "hsfm/fem.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <vector>

#include "hsfm/errors.hpp"

namespace hsfm {

namespace {

constexpr double kDegenerateArea = 1e-12;
constexpr double kDropValue = 1e-14;

using Triplets = std::vector<Eigen::Triplet<double>>;

SparseMatrix from_triplets(Eigen::Index rows, Eigen::Index cols, const Triplets& trips) {
    SparseMatrix m(rows, cols);
    m.setFromTriplets(trips.begin(), trips.end());
    m.prune([](Eigen::Index, Eigen::Index, double v) { return std::fabs(v) >= 1e-15; });
    m.makeCompressed();
    return m;
}

void check_area(const TriangleMesh& mesh, std::size_t t) {
    if (mesh.triangle_area(t) < kDegenerateArea)
        throw GeometryError("triangle " + std::to_string(t) + " is degenerate (area < 1e-12)");
}

} // namespace

std::optional<BasisRow> eval_basis(const TriangleMesh& mesh, Point2 p) {
    const auto loc = locate_point(mesh, p);
    if (!loc) return std::nullopt;
    const auto& tri = mesh.triangles()[loc->triangle_index];
    BasisRow row;
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
        if (loc->coords[k] <= kDropValue) continue;
        row.vertex[row.size] = tri[k];
        row.value[row.size] = loc->coords[k];
        s += loc->coords[k];
        ++row.size;
    }
    for (std::size_t k = 0; k < row.size; ++k) row.value[k] /= s;
    return row;
}

SparseMatrix assemble_psi(const TriangleMesh& mesh, std::span<const Point2> points) {
    Triplets trips;
    trips.reserve(3 * points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto row = eval_basis(mesh, points[i]);
        if (!row) throw InputError("point " + std::to_string(i) + " lies outside the mesh");
        for (std::size_t k = 0; k < row->size; ++k)
            trips.emplace_back(static_cast<Eigen::Index>(i), row->vertex[k], row->value[k]);
    }
    return from_triplets(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(mesh.num_vertices()), trips);
}

SparseMatrix assemble_mass(const TriangleMesh& mesh) {
    Triplets trips;
    trips.reserve(9 * mesh.num_triangles());
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        check_area(mesh, t);
        const double a = mesh.triangle_area(t);
        const auto& tri = mesh.triangles()[t];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) trips.emplace_back(tri[i], tri[j], (i == j ? 2.0 : 1.0) * a / 12.0);
    }
    const auto k = static_cast<Eigen::Index>(mesh.num_vertices());
    return from_triplets(k, k, trips);
}

std::array<std::array<double, 2>, 3> barycentric_gradients(const TriangleMesh& mesh, std::size_t t) {
    const auto& tri = mesh.triangles()[t];
    const Point2 p0 = mesh.vertex(tri[0]), p1 = mesh.vertex(tri[1]), p2 = mesh.vertex(tri[2]);
    const double two_a = 2.0 * mesh.triangle_area(t);
    return {{{(p1.y - p2.y) / two_a, (p2.x - p1.x) / two_a},
             {(p2.y - p0.y) / two_a, (p0.x - p2.x) / two_a},
             {(p0.y - p1.y) / two_a, (p1.x - p0.x) / two_a}}};
}

SparseMatrix assemble_stiffness(const TriangleMesh& mesh) {
    Triplets trips;
    trips.reserve(9 * mesh.num_triangles());
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        check_area(mesh, t);
        const double a = mesh.triangle_area(t);
        const auto g = barycentric_gradients(mesh, t);
        const auto& tri = mesh.triangles()[t];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) trips.emplace_back(tri[i], tri[j], a * (g[i][0] * g[j][0] + g[i][1] * g[j][1]));
    }
    const auto k = static_cast<Eigen::Index>(mesh.num_vertices());
    return from_triplets(k, k, trips);
}

SparseMatrix assemble_boundary_flux(const TriangleMesh& mesh) {
    // Boundary edges are the edges used by exactly one triangle.
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> use;
    for (const auto& tri : mesh.triangles())
        for (int k = 0; k < 3; ++k) {
            const auto a = tri[k], b = tri[(k + 1) % 3];
            ++use[{std::min(a, b), std::max(a, b)}];
        }
    Triplets trips;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        check_area(mesh, t);
        const auto& tri = mesh.triangles()[t];
        const auto g = barycentric_gradients(mesh, t);
        for (int k = 0; k < 3; ++k) {
            const auto a = tri[k], b = tri[(k + 1) % 3];
            if (use[{std::min(a, b), std::max(a, b)}] != 1) continue;
            // Counter-clockwise edge a->b: outward normal times length is (dy, -dx).
            const Point2 pa = mesh.vertex(a), pb = mesh.vertex(b);
            const double nx = pb.y - pa.y, ny = -(pb.x - pa.x);
            for (int j = 0; j < 3; ++j) {
                const double flux = 0.5 * (g[j][0] * nx + g[j][1] * ny);
                trips.emplace_back(a, tri[j], flux);
                trips.emplace_back(b, tri[j], flux);
            }
        }
    }
    const auto k = static_cast<Eigen::Index>(mesh.num_vertices());
    return from_triplets(k, k, trips);
}

void write_matrix_market(std::ostream& os, const SparseMatrix& m) {
    os << "%%MatrixMarket matrix coordinate real general\n";
    os << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n';
    os << std::setprecision(17);
    for (Eigen::Index c = 0; c < m.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(m, c); it; ++it) os << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
}

} // namespace hsfm
