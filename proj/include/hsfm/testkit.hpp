#ifndef HSFM_TESTKIT_HPP
#define HSFM_TESTKIT_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hsfm/data.hpp"
#include "hsfm/fem.hpp"
#include "hsfm/geometry.hpp"
#include "hsfm/ssr.hpp"

namespace hsfm {

// Isotropic Gaussian bump added to a field.
struct Bump {
    Point2 center;
    double amplitude = 0.0;
    double radius = 1.0;
};

// c + gx*x + gy*y + sum of bumps.
struct FieldSpec {
    double constant = 0.0;
    double gx = 0.0;
    double gy = 0.0;
    std::vector<Bump> bumps;

    double operator()(Point2 p) const;
};

struct SyntheticRegion {
    DomainPolygon polygon;
    FieldSpec field;
    std::vector<double> beta_offset;
};

struct SyntheticSpec {
    DomainPolygon domain;
    std::vector<SyntheticRegion> regions;
    FieldSpec global_field;
    std::vector<double> global_beta;
    double noise_sd = 0.0;
    std::size_t n = 0;
    std::uint64_t seed = 1;
    // Used to attach lat/lon to the generated planar points.
    LatLon origin{53.45, -113.55};
};

struct SyntheticTruth {
    // 1-based region of each point, 0 when it lies in no region.
    std::vector<int> labels;
    std::vector<double> noiseless;
    std::vector<double> global_part;
    std::vector<double> local_part;
};

// Covariates are independent standard normals; points are uniform in the domain.
std::pair<Dataset, SyntheticTruth> gen_synthetic(const SyntheticSpec& spec);

nlohmann::json truth_to_json(const SyntheticSpec& spec, const SyntheticTruth& truth);

// 8 km x 5 km rectangle split at x = 4 km into two regions whose prices
// differ by a 120-unit step and whose covariate effects differ. Price scale
// 500, noise 5% of scale, three covariates.
SyntheticSpec two_region_step_spec(std::size_t n = 2000, std::uint64_t seed = 20150101);

#ifdef HSFM_WITH_TESTKIT

struct OracleFit {
    Eigen::VectorXd beta;
    Eigen::VectorXd field;
};

// Reduced dense solve of the penalized problem with P = L' R0^-1 L:
// (Psi' Q Psi + lambda P) f = Psi' Q z, beta = (W'W)^-1 W'(z - Psi f).
// Intended for K <= 200.
OracleFit dense_oracle_fit(const SparseMatrix& psi, const Eigen::MatrixXd& W, const Eigen::VectorXd& z,
                           const SparseMatrix& mass, const SparseMatrix& laplacian, double lambda);

// Dense penalty energy f' L' R0^-1 L f.
double penalty_energy(const SparseMatrix& mass, const SparseMatrix& laplacian, const Eigen::VectorXd& f);

// Sum over interior grid cells of (5-point Laplacian)^2 * cell^2. A cell is
// interior when it and its four neighbours lie inside the mesh. Trend check
// only: a P1 field's Laplacian lives on the mesh edges.
double fd_penalty_check(const SsrFit& fit, double cell);

#endif

} // namespace hsfm

#endif
