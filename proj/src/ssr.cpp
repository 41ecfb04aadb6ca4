#include "hsfm/ssr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SparseLU>
#include <nlohmann/json.hpp>

#include "hsfm/errors.hpp"
#include "hsfm/rng.hpp"

namespace hsfm {

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

// Dense fallback bound on the block system size.
constexpr Eigen::Index kDenseFallbackLimit = 2000;

Eigen::VectorXd solve_symmetric_block(const SparseMatrix& m, const Eigen::VectorXd& rhs, Eigen::Index dense_limit) {
    const Eigen::Index n = m.rows();
    // Symmetric Jacobi-style equilibration by the largest entry of each row.
    Eigen::VectorXd d = Eigen::VectorXd::Ones(n);
    {
        Eigen::VectorXd rmax = Eigen::VectorXd::Zero(n);
        for (Eigen::Index c = 0; c < m.outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(m, c); it; ++it)
                rmax[it.row()] = std::max(rmax[it.row()], std::fabs(it.value()));
        for (Eigen::Index i = 0; i < n; ++i)
            if (rmax[i] > 0) d[i] = 1.0 / std::sqrt(rmax[i]);
    }
    const SparseMatrix scaled = d.asDiagonal() * m * d.asDiagonal();
    const Eigen::VectorXd srhs = d.cwiseProduct(rhs);

    const double rhs_norm = rhs.norm();
    const auto acceptable = [&](const Eigen::VectorXd& x) {
        if (!x.allFinite()) return false;
        const double res = (m * x - rhs).norm();
        return res <= 1e-8 * (rhs_norm + 1e-300) || (rhs_norm == 0.0 && x.norm() == 0.0);
    };

    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
    lu.compute(scaled);
    if (lu.info() == Eigen::Success) {
        Eigen::VectorXd x = d.cwiseProduct(lu.solve(srhs));
        if (lu.info() == Eigen::Success && acceptable(x)) return x;
    }
    if (n <= dense_limit) {
        const Eigen::MatrixXd dense(scaled);
        Eigen::FullPivLU<Eigen::MatrixXd> dlu(dense);
        if (dlu.isInvertible()) {
            Eigen::VectorXd x = d.cwiseProduct(dlu.solve(srhs));
            if (acceptable(x)) return x;
        }
    }
    throw ConditioningError(
        "penalized block system is singular or ill-conditioned; use a larger lambda or drop covariates collinear with "
        "the spatial field (for example an intercept column)");
}

} // namespace

PenaltyMatrices::PenaltyMatrices(const TriangleMesh& mesh)
    : mass(assemble_mass(mesh)), laplacian(assemble_stiffness(mesh) - assemble_boundary_flux(mesh)) {}

std::vector<std::string> default_feature_names(std::size_t q) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < q; ++i) names.push_back("w" + std::to_string(i + 1));
    return names;
}

void require_full_column_rank(const Eigen::MatrixXd& W, std::span<const std::string> names) {
    if (W.cols() == 0) return;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(W);
    qr.setThreshold(1e-10);
    const Eigen::Index rank = qr.rank();
    if (rank == W.cols()) return;
    std::ostringstream msg;
    msg << "covariate matrix has rank " << rank << " < " << W.cols() << "; dependent columns:";
    const auto& perm = qr.colsPermutation().indices();
    std::vector<int> bad(perm.data() + rank, perm.data() + perm.size());
    std::sort(bad.begin(), bad.end());
    for (int c : bad) {
        msg << ' ' << c;
        if (static_cast<std::size_t>(c) < names.size()) msg << " (" << names[c] << ')';
    }
    throw CollinearityError(msg.str());
}

SsrFit fit_ssr(std::shared_ptr<const TriangleMesh> mesh, const SparseMatrix& psi, const Eigen::MatrixXd& W,
               const Eigen::VectorXd& z, double lambda) {
    if (!mesh) throw InputError("fit_ssr needs a mesh");
    const PenaltyMatrices penalty(*mesh);
    return fit_ssr(std::move(mesh), penalty, psi, W, z, lambda);
}

SsrFit fit_ssr(std::shared_ptr<const TriangleMesh> mesh, const PenaltyMatrices& penalty, const SparseMatrix& psi,
               const Eigen::MatrixXd& W, const Eigen::VectorXd& z, double lambda) {
    if (!mesh) throw InputError("fit_ssr needs a mesh");
    const Eigen::Index n = z.size();
    const Eigen::Index K = static_cast<Eigen::Index>(mesh->num_vertices());
    const Eigen::Index q = W.cols();
    if (psi.rows() != n || W.rows() != n) throw InputError("psi, W and z must have the same number of rows");
    if (psi.cols() != K) throw InputError("psi must have one column per mesh vertex");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InputError("lambda must be finite and nonnegative");
    if (K > n && lambda == 0.0) throw InputError("lambda must be positive when there are more control points than data");
    if (n < q + 3) throw InputError("need at least q + 3 observations");
    if (!z.allFinite() || !W.allFinite()) throw InputError("non-finite values in W or z");
    require_full_column_rank(W, default_feature_names(static_cast<std::size_t>(q)));

    const bool penalized = lambda > 0.0;
    const Eigen::Index N = q + (penalized ? 2 * K : K);
    Triplets trips;
    const SparseMatrix ptp = SparseMatrix(psi.transpose()) * psi;
    const Eigen::MatrixXd ptw = psi.transpose() * W;
    const Eigen::MatrixXd wtw = W.transpose() * W;
    trips.reserve(static_cast<std::size_t>(q * q + 2 * K * q + ptp.nonZeros() + 3 * penalty.laplacian.nonZeros()));
    for (Eigen::Index i = 0; i < q; ++i)
        for (Eigen::Index j = 0; j < q; ++j) trips.emplace_back(i, j, wtw(i, j));
    for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index j = 0; j < q; ++j) {
            if (ptw(k, j) == 0.0) continue;
            trips.emplace_back(q + k, j, ptw(k, j));
            trips.emplace_back(j, q + k, ptw(k, j));
        }
    for (Eigen::Index c = 0; c < ptp.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(ptp, c); it; ++it) trips.emplace_back(q + it.row(), q + it.col(), it.value());
    if (penalized) {
        const Eigen::Index g0 = q + K;
        // Unknown lambda * g in place of g: [L; -R0 / lambda] stays well scaled
        // both for tiny lambda and as lambda grows without bound.
        for (Eigen::Index c = 0; c < penalty.laplacian.outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(penalty.laplacian, c); it; ++it) {
                trips.emplace_back(g0 + it.row(), q + it.col(), it.value());
                trips.emplace_back(q + it.col(), g0 + it.row(), it.value());
            }
        for (Eigen::Index c = 0; c < penalty.mass.outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(penalty.mass, c); it; ++it)
                trips.emplace_back(g0 + it.row(), g0 + it.col(), -it.value() / lambda);
    }
    SparseMatrix m(N, N);
    m.setFromTriplets(trips.begin(), trips.end());
    m.makeCompressed();

    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N);
    rhs.head(q) = W.transpose() * z;
    rhs.segment(q, K) = psi.transpose() * z;

    const Eigen::VectorXd x = solve_symmetric_block(m, rhs, kDenseFallbackLimit + q);

    SsrFit fit;
    fit.beta = x.head(q);
    fit.field_coeffs = x.segment(q, K);
    fit.lambda = lambda;
    fit.mesh = std::move(mesh);
    fit.feature_names = default_feature_names(static_cast<std::size_t>(q));
    fit.residuals = z - W * fit.beta - psi * fit.field_coeffs;
    return fit;
}

SsrFit fit_linear_baseline(const Eigen::MatrixXd& W, const Eigen::VectorXd& z) {
    const Eigen::Index n = z.size();
    if (W.rows() != n) throw InputError("W and z must have the same number of rows");
    if (n <= W.cols()) throw InputError("linear regression needs more observations than covariates");
    require_full_column_rank(W, default_feature_names(static_cast<std::size_t>(W.cols())));
    const Eigen::MatrixXd wtw = W.transpose() * W;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(wtw);
    if (ldlt.info() != Eigen::Success) throw ConditioningError("normal equations could not be factorized");
    SsrFit fit;
    fit.beta = ldlt.solve(W.transpose() * z);
    fit.field_coeffs.resize(0);
    fit.feature_names = default_feature_names(static_cast<std::size_t>(W.cols()));
    fit.residuals = z - W * fit.beta;
    return fit;
}

SsrFit zero_fit(std::size_t q) {
    SsrFit fit;
    fit.beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));
    fit.feature_names = default_feature_names(q);
    return fit;
}

Eigen::VectorXd standardize(const SsrFit& fit, std::span<const double> w) {
    if (w.size() != fit.q())
        throw InputError("covariate vector has length " + std::to_string(w.size()) + ", expected " + std::to_string(fit.q()));
    Eigen::VectorXd out(static_cast<Eigen::Index>(w.size()));
    for (std::size_t i = 0; i < w.size(); ++i) {
        double v = w[i];
        if (!fit.feature_mean.empty()) v = (v - fit.feature_mean[i]) / fit.feature_scale[i];
        out[static_cast<Eigen::Index>(i)] = v;
    }
    return out;
}

std::optional<double> field_value(const SsrFit& fit, Point2 p) {
    if (!fit.has_field()) return 0.0;
    const auto row = eval_basis(*fit.mesh, p);
    if (!row) return std::nullopt;
    double f = 0.0;
    for (std::size_t k = 0; k < row->size; ++k) f += row->value[k] * fit.field_coeffs[row->vertex[k]];
    return f;
}

SsrPrediction predict_ssr(const SsrFit& fit, std::span<const double> w, Point2 p) {
    const Eigen::VectorXd ws = standardize(fit, w);
    SsrPrediction out;
    out.value = ws.dot(fit.beta);
    if (!fit.has_field()) return out;
    if (const auto f = field_value(fit, p)) {
        out.value += *f;
    } else {
        out.value += fit.field_coeffs[static_cast<Eigen::Index>(fit.mesh->nearest_vertex(p))];
        out.extrapolated = true;
    }
    return out;
}

Raster evaluate_surface_grid(const SsrFit& fit, double cell_size) {
    if (!(cell_size > 0.0)) throw InputError("cell size must be positive");
    if (!fit.has_field()) throw InputError("fit has no spatial field to rasterize");
    const auto [lo, hi] = fit.mesh->bounding_box();
    Raster r;
    r.origin = lo;
    r.cell_size = cell_size;
    r.width = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((hi.x - lo.x) / cell_size)));
    r.height = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((hi.y - lo.y) / cell_size)));
    r.values.assign(r.width * r.height, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t row = 0; row < r.height; ++row)
        for (std::size_t col = 0; col < r.width; ++col)
            if (const auto f = field_value(fit, r.cell_center(row, col))) r.values[row * r.width + col] = *f;
    return r;
}

SparseMatrix select_rows(const SparseMatrix& m, std::span<const std::size_t> rows) {
    std::vector<std::vector<Eigen::Index>> dup(static_cast<std::size_t>(m.rows()));
    for (std::size_t i = 0; i < rows.size(); ++i) dup[rows[i]].push_back(static_cast<Eigen::Index>(i));
    std::vector<Eigen::Triplet<double>> trips;
    for (Eigen::Index c = 0; c < m.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(m, c); it; ++it)
            for (Eigen::Index r : dup[static_cast<std::size_t>(it.row())]) trips.emplace_back(r, it.col(), it.value());
    SparseMatrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    out.setFromTriplets(trips.begin(), trips.end());
    out.makeCompressed();
    return out;
}

LambdaSelection select_lambda(std::shared_ptr<const TriangleMesh> mesh, const SparseMatrix& psi, const Eigen::MatrixXd& W,
                              const Eigen::VectorXd& z, std::span<const double> candidates, int folds, std::uint64_t seed) {
    if (candidates.empty()) throw InputError("no lambda candidates");
    if (folds < 2) throw InputError("need at least 2 folds");
    const auto n = static_cast<std::size_t>(z.size());
    if (n < static_cast<std::size_t>(folds)) throw InputError("fewer observations than folds");
    for (double c : candidates)
        if (!(c > 0.0) || !std::isfinite(c)) throw InputError("lambda candidates must be positive");
    if (!mesh) throw InputError("select_lambda needs a mesh");

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    SplitMix64 rng(seed);
    shuffle(perm, rng);
    std::vector<int> fold_of(n);
    for (std::size_t i = 0; i < n; ++i) fold_of[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));

    const PenaltyMatrices penalty(*mesh);
    struct FoldData {
        SparseMatrix psi_train, psi_test;
        Eigen::MatrixXd w_train, w_test;
        Eigen::VectorXd z_train, z_test;
    };
    std::vector<FoldData> data(static_cast<std::size_t>(folds));
    for (int f = 0; f < folds; ++f) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < n; ++i) (fold_of[i] == f ? test : train).push_back(i);
        auto& d = data[static_cast<std::size_t>(f)];
        d.psi_train = select_rows(psi, train);
        d.psi_test = select_rows(psi, test);
        d.w_train.resize(static_cast<Eigen::Index>(train.size()), W.cols());
        d.w_test.resize(static_cast<Eigen::Index>(test.size()), W.cols());
        d.z_train.resize(static_cast<Eigen::Index>(train.size()));
        d.z_test.resize(static_cast<Eigen::Index>(test.size()));
        for (std::size_t i = 0; i < train.size(); ++i) {
            d.w_train.row(static_cast<Eigen::Index>(i)) = W.row(static_cast<Eigen::Index>(train[i]));
            d.z_train[static_cast<Eigen::Index>(i)] = z[static_cast<Eigen::Index>(train[i])];
        }
        for (std::size_t i = 0; i < test.size(); ++i) {
            d.w_test.row(static_cast<Eigen::Index>(i)) = W.row(static_cast<Eigen::Index>(test[i]));
            d.z_test[static_cast<Eigen::Index>(i)] = z[static_cast<Eigen::Index>(test[i])];
        }
    }

    LambdaSelection out;
    for (double lambda : candidates) {
        LambdaScore score;
        score.lambda = lambda;
        double total = 0.0;
        for (const auto& d : data) {
            double mse = std::numeric_limits<double>::infinity();
            try {
                const SsrFit fit = fit_ssr(mesh, penalty, d.psi_train, d.w_train, d.z_train, lambda);
                const Eigen::VectorXd pred = d.w_test * fit.beta + d.psi_test * fit.field_coeffs;
                mse = (pred - d.z_test).squaredNorm() / static_cast<double>(d.z_test.size());
            } catch (const CollinearityError&) {
            } catch (const ConditioningError&) {
            }
            score.fold_mse.push_back(mse);
            total += mse;
        }
        score.mean_mse = total / static_cast<double>(folds);
        out.table.push_back(score);
    }

    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : out.table) best = std::min(best, s.mean_mse);
    if (!std::isfinite(best)) throw ConditioningError("every lambda candidate failed in cross-validation");
    // Scores within round-off of the minimum count as ties; the smaller lambda wins.
    const double tol = 1e-9 * best + 1e-12 * z.squaredNorm() / static_cast<double>(n);
    out.lambda = std::numeric_limits<double>::infinity();
    for (const auto& s : out.table)
        if (s.mean_mse <= best + tol) out.lambda = std::min(out.lambda, s.lambda);
    return out;
}

nlohmann::json to_json(const SsrFit& fit) {
    nlohmann::json j;
    j["lambda"] = fit.lambda;
    j["beta"] = std::vector<double>(fit.beta.data(), fit.beta.data() + fit.beta.size());
    j["feature_names"] = fit.feature_names;
    j["field_coeffs"] = std::vector<double>(fit.field_coeffs.data(), fit.field_coeffs.data() + fit.field_coeffs.size());
    if (fit.mesh) {
        std::ostringstream os;
        write_mesh_text(os, *fit.mesh);
        j["mesh"] = os.str();
    } else {
        j["mesh"] = nullptr;
    }
    j["target_is_log"] = fit.target_is_log;
    j["feature_mean"] = fit.feature_mean;
    j["feature_scale"] = fit.feature_scale;
    if (fit.feature_scale.size() == fit.q()) {
        // Per unit of the raw covariate; informational, not read back.
        std::vector<double> raw(fit.q());
        for (std::size_t k = 0; k < raw.size(); ++k) raw[k] = fit.beta[static_cast<Eigen::Index>(k)] / fit.feature_scale[k];
        j["beta_original_units"] = raw;
    }
    return j;
}

SsrFit ssr_fit_from_json(const nlohmann::json& j) {
    SsrFit fit;
    try {
        fit.lambda = j.at("lambda").get<double>();
        const auto beta = j.at("beta").get<std::vector<double>>();
        fit.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
        const auto f = j.at("field_coeffs").get<std::vector<double>>();
        fit.field_coeffs = Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
        fit.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        fit.target_is_log = j.at("target_is_log").get<bool>();
        fit.feature_mean = j.value("feature_mean", std::vector<double>{});
        fit.feature_scale = j.value("feature_scale", std::vector<double>{});
        if (!j.at("mesh").is_null()) {
            std::istringstream is(j.at("mesh").get<std::string>());
            fit.mesh = std::make_shared<const TriangleMesh>(read_mesh_text(is));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed fit JSON: ") + e.what());
    }
    if (fit.feature_names.size() != fit.q()) throw IoError("fit JSON: feature_names and beta lengths differ");
    if (fit.mesh && static_cast<std::size_t>(fit.field_coeffs.size()) != fit.mesh->num_vertices())
        throw IoError("fit JSON: field_coeffs length differs from mesh vertex count");
    if (!fit.feature_mean.empty() && (fit.feature_mean.size() != fit.q() || fit.feature_scale.size() != fit.q()))
        throw IoError("fit JSON: standardization vectors have the wrong length");
    return fit;
}

} // namespace hsfm
