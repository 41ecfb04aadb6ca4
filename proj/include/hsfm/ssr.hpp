#ifndef HSFM_SSR_HPP
#define HSFM_SSR_HPP

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hsfm/fem.hpp"
#include "hsfm/geometry.hpp"

namespace hsfm {

// One fitted semi-parametric model z = w'beta + f(p) + e. A fit without a
// mesh is a plain linear model (field contributes zero).
struct SsrFit {
    Eigen::VectorXd beta;
    Eigen::VectorXd field_coeffs;
    double lambda = 0.0;
    std::shared_ptr<const TriangleMesh> mesh;
    std::vector<std::string> feature_names;
    bool target_is_log = false;
    // Optional standardization applied to raw covariates before beta.
    std::vector<double> feature_mean;
    std::vector<double> feature_scale;
    // Training residuals z - W beta - Psi f (diagnostic, not persisted).
    Eigen::VectorXd residuals;

    std::size_t q() const { return static_cast<std::size_t>(beta.size()); }
    bool has_field() const { return mesh != nullptr; }
};

struct SsrPrediction {
    double value = 0.0;
    bool extrapolated = false;
};

// The penalty operators of the mixed formulation.
struct PenaltyMatrices {
    SparseMatrix mass;      // R0
    SparseMatrix laplacian; // R1 - B, zero on affine fields

    explicit PenaltyMatrices(const TriangleMesh& mesh);
};

std::vector<std::string> default_feature_names(std::size_t q);

SsrFit fit_ssr(std::shared_ptr<const TriangleMesh> mesh, const SparseMatrix& psi, const Eigen::MatrixXd& W,
               const Eigen::VectorXd& z, double lambda);

// Same as fit_ssr with precomputed penalty matrices (CV reuses them).
SsrFit fit_ssr(std::shared_ptr<const TriangleMesh> mesh, const PenaltyMatrices& penalty, const SparseMatrix& psi,
               const Eigen::MatrixXd& W, const Eigen::VectorXd& z, double lambda);

// Ordinary least squares through the normal equations. W must carry its own
// intercept column when one is wanted.
SsrFit fit_linear_baseline(const Eigen::MatrixXd& W, const Eigen::VectorXd& z);

// A fit that predicts zero everywhere (used for regions too small to fit).
SsrFit zero_fit(std::size_t q);

// Applies the fit's standardization to raw covariates.
Eigen::VectorXd standardize(const SsrFit& fit, std::span<const double> w);

// w'beta + f(p). Outside the mesh the field term uses the nearest vertex.
SsrPrediction predict_ssr(const SsrFit& fit, std::span<const double> w, Point2 p);

// Field value only; nullopt outside the mesh.
std::optional<double> field_value(const SsrFit& fit, Point2 p);

// Throws CollinearityError naming the dependent columns when W is rank deficient.
void require_full_column_rank(const Eigen::MatrixXd& W, std::span<const std::string> names = {});

struct Raster {
    Point2 origin; // lower-left corner; row 0 is the southernmost row
    double cell_size = 1.0;
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> values; // row-major, NaN outside the domain

    double at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
    Point2 cell_center(std::size_t row, std::size_t col) const {
        return {origin.x + (static_cast<double>(col) + 0.5) * cell_size, origin.y + (static_cast<double>(row) + 0.5) * cell_size};
    }
};

Raster evaluate_surface_grid(const SsrFit& fit, double cell_size);

struct LambdaScore {
    double lambda = 0.0;
    std::vector<double> fold_mse;
    double mean_mse = std::numeric_limits<double>::infinity();
};

struct LambdaSelection {
    double lambda = 0.0;
    std::vector<LambdaScore> table;
};

// k-fold cross-validation of the held-out mean squared prediction error.
LambdaSelection select_lambda(std::shared_ptr<const TriangleMesh> mesh, const SparseMatrix& psi, const Eigen::MatrixXd& W,
                              const Eigen::VectorXd& z, std::span<const double> candidates, int folds,
                              std::uint64_t seed = 0x5EEDULL);

// Rows of a sparse matrix selected by index, in the given order.
SparseMatrix select_rows(const SparseMatrix& m, std::span<const std::size_t> rows);

nlohmann::json to_json(const SsrFit& fit);
SsrFit ssr_fit_from_json(const nlohmann::json& j);

} // namespace hsfm

#endif
