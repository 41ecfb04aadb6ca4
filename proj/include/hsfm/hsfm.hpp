#ifndef HSFM_HSFM_HPP
#define HSFM_HSFM_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hsfm/data.hpp"
#include "hsfm/geometry.hpp"
#include "hsfm/partition.hpp"
#include "hsfm/ssr.hpp"

namespace hsfm {

// Smoothing levels are given per unit domain area: the penalty integral
// carries units of value^2 / m^2, so lambda * area is what enters the fit.
double effective_lambda(double lambda, double area);

// Target points per mesh vertex when no max triangle area is given.
inline constexpr double kPointsPerVertex = 3.0;

// Triangulates domain with max_area derived from n when max_area <= 0.
Triangulation mesh_for_points(const DomainPolygon& domain, std::size_t n, double max_area = 0.0, double min_angle = 25.0,
                              std::size_t max_vertices = 100000);

// SSR on standardized covariates (statistics stored in the fit); lambda is dimensionless.
SsrFit fit_ssr_on(std::shared_ptr<const TriangleMesh> mesh, std::span<const Point2> points, const Eigen::MatrixXd& W_raw,
                  const Eigen::VectorXd& z, double lambda, const Standardizer* standardizer = nullptr);

struct HsfmConfig {
    double lambda_global = 1.0;
    // Unset: same as lambda_global.
    std::optional<double> lambda_local;
    // Select each region's lambda by k-fold CV over lambda_candidates instead.
    bool lambda_local_cv = false;
    std::vector<double> lambda_candidates{1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1, 10, 100};
    int cv_folds = 5;
    double lambda_partition_surface = 1e-2;
    double dc_quantile = 0.02;
    std::optional<int> J;
    double alpha_penalty = 4.0;
    int samples_per_edge = 16;
    int contiguity_k = 10;
    bool target_is_log = false;
    // 0: max(30, 3q).
    std::size_t min_region_size = 0;
    // Mesh controls for the global and local meshes; 0 = automatic.
    double max_area = 0.0;
    double min_angle = 25.0;
    std::size_t max_vertices = 100000;
    double local_alpha = 0.0;
    unsigned threads = 0;
};

nlohmann::json to_json(const HsfmConfig& config);
HsfmConfig hsfm_config_from_json(const nlohmann::json& j);

struct HsfmModel {
    SsrFit global_fit;
    Partition partition;
    std::vector<SsrFit> local_fits; // local_fits[j - 1] belongs to region j
    HsfmConfig config;
    LatLon origin;
    double mean_residual = 0.0;
    // Diagnostics from the geo-partition stage.
    CfsfdpState cfsfdp;
    std::vector<std::size_t> region_sizes;
};

// r = z - W beta - f(p) for the fit's own transformation of W.
Eigen::VectorXd compute_residuals(const SsrFit& fit, const Eigen::MatrixXd& W_raw, const Eigen::VectorXd& z,
                                  std::span<const Point2> points);

// Global fit, residuals, geo-partition and one local fit per region.
// train must be projected; every point must lie inside the domain.
HsfmModel fit_hsfm(const Dataset& train, const DomainPolygon& domain, const HsfmConfig& config);

struct HsfmPrediction {
    double value = 0.0;  // exponentiated in log mode
    double global = 0.0; // model scale
    double local = 0.0;  // model scale
    int region = 0;
    bool extrapolated = false;
};

HsfmPrediction predict_hsfm(const HsfmModel& model, std::span<const double> w, Point2 p);

// Directory with model.json, partition.csv and local_<j>.json.
void save_hsfm(const HsfmModel& model, const std::string& dir, std::span<const std::string> ids = {});
HsfmModel load_hsfm(const std::string& dir);

} // namespace hsfm

#endif
