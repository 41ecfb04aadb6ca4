#ifndef HSFM_FEM_HPP
#define HSFM_FEM_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>

#include <Eigen/Sparse>

#include "hsfm/geometry.hpp"

namespace hsfm {

using SparseMatrix = Eigen::SparseMatrix<double>;

// Nonzero P1 basis values at a point: at most three (vertex, value) pairs.
// For linear elements the values are the barycentric coordinates.
struct BasisRow {
    std::array<std::uint32_t, 3> vertex{};
    std::array<double, 3> value{};
    std::size_t size = 0;

    double sum() const { return value[0] + value[1] + value[2]; }
};

std::optional<BasisRow> eval_basis(const TriangleMesh& mesh, Point2 p);

// n x K evaluation matrix; throws InputError naming the first point outside the mesh.
SparseMatrix assemble_psi(const TriangleMesh& mesh, std::span<const Point2> points);

// Consistent P1 mass matrix, R0_ij = integral of psi_i psi_j.
SparseMatrix assemble_mass(const TriangleMesh& mesh);

// P1 stiffness matrix, R1_ij = integral of grad psi_i . grad psi_j.
SparseMatrix assemble_stiffness(const TriangleMesh& mesh);

// Boundary normal-flux matrix, B_ij = boundary integral of psi_i (grad psi_j . n),
// with grad psi_j taken from the triangle owning each boundary edge. R1 - B
// annihilates affine fields at every vertex, including boundary vertices.
SparseMatrix assemble_boundary_flux(const TriangleMesh& mesh);

// Gradients of the three barycentric coordinates of triangle t.
std::array<std::array<double, 2>, 3> barycentric_gradients(const TriangleMesh& mesh, std::size_t t);

// MatrixMarket coordinate format, 1-based indices.
void write_matrix_market(std::ostream& os, const SparseMatrix& m);

} // namespace hsfm

#endif
