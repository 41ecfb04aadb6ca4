#include "doctest.h"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hsfm/errors.hpp"
#include "hsfm/fem.hpp"
#include "hsfm/ssr.hpp"
#include "hsfm/testkit.hpp"
#include "test_support.hpp"

using namespace hsfm;
using hsfm::test::points_in;
using hsfm::test::random_mesh;

namespace {

struct Problem {
    std::shared_ptr<const TriangleMesh> mesh;
    std::vector<Point2> pts;
    SparseMatrix psi;
    Eigen::MatrixXd W;
    Eigen::VectorXd z;
};

Problem make_problem(std::uint64_t seed, std::size_t n, int q, double noise = 1.0) {
    Problem p;
    p.mesh = random_mesh(seed);
    p.pts = points_in(*p.mesh, n, seed + 100);
    p.psi = assemble_psi(*p.mesh, p.pts);
    SplitMix64 rng(seed + 200);
    p.W.resize(static_cast<Eigen::Index>(n), q);
    for (Eigen::Index i = 0; i < p.W.rows(); ++i)
        for (int k = 0; k < q; ++k) p.W(i, k) = rng.normal();
    const auto [lo, hi] = p.mesh->bounding_box();
    const double s = std::max(hi.x - lo.x, hi.y - lo.y);
    p.z.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const double u = (p.pts[i].x - lo.x) / s, v = (p.pts[i].y - lo.y) / s;
        double val = 100 + 30 * std::sin(3 * u) * std::cos(2 * v) + noise * rng.normal();
        for (int k = 0; k < q; ++k) val += (k + 1.5) * p.W(static_cast<Eigen::Index>(i), k);
        p.z[static_cast<Eigen::Index>(i)] = val;
    }
    return p;
}

double rel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (b.size() == 0) return 0.0;
    return (a - b).norm() / std::max(b.norm(), 1e-300);
}

} // namespace

TEST_CASE("fit_ssr matches the dense oracle") {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        for (int q : {0, 3}) {
            const Problem p = make_problem(seed, 80, q);
            const PenaltyMatrices pen(*p.mesh);
            for (double l : {1e-4, 1e-2, 1.0}) {
                const double lambda = l * p.mesh->area();
                const SsrFit fit = fit_ssr(p.mesh, p.psi, p.W, p.z, lambda);
                const OracleFit o = dense_oracle_fit(p.psi, p.W, p.z, pen.mass, pen.laplacian, lambda);
                CAPTURE(seed);
                CAPTURE(q);
                CAPTURE(l);
                CHECK(rel(fit.field_coeffs, o.field) < 1e-8);
                CHECK(rel(fit.beta, o.beta) < 1e-8);
            }
        }
    }
}

TEST_CASE("affine target is reproduced for lambda across sixteen decades") {
    const auto mesh = random_mesh(9);
    const auto pts = points_in(*mesh, 60, 3);
    const SparseMatrix psi = assemble_psi(*mesh, pts);
    Eigen::VectorXd z(60);
    for (int i = 0; i < 60; ++i) z[i] = 250 + 0.03 * pts[static_cast<std::size_t>(i)].x - 0.02 * pts[static_cast<std::size_t>(i)].y;
    for (double lambda : {1e-8, 1.0, 1e8}) {
        const SsrFit fit = fit_ssr(mesh, psi, Eigen::MatrixXd(60, 0), z, lambda);
        for (std::size_t k = 0; k < mesh->num_vertices(); ++k) {
            const Point2 v = mesh->vertex(k);
            const double truth = 250 + 0.03 * v.x - 0.02 * v.y;
            CHECK(std::fabs(fit.field_coeffs[static_cast<Eigen::Index>(k)] - truth) < 1e-6 * std::fabs(truth));
        }
        const Point2 c = mesh->centroid(0);
        CHECK(predict_ssr(fit, {}, c).value == doctest::Approx(250 + 0.03 * c.x - 0.02 * c.y).epsilon(1e-6));
    }
}

TEST_CASE("large lambda with z = W beta recovers beta and an affine field") {
    const Problem p = make_problem(5, 300, 2, 0.0);
    Eigen::VectorXd z = p.W * Eigen::Vector2d(4.0, -1.5);
    const SsrFit fit = fit_ssr(p.mesh, p.psi, p.W, z, 1e6);
    CHECK(fit.beta[0] == doctest::Approx(4.0).epsilon(1e-3));
    CHECK(fit.beta[1] == doctest::Approx(-1.5).epsilon(1e-3));
    CHECK(fit.field_coeffs.cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("residual orthogonality and penalty monotone in lambda") {
    const Problem p = make_problem(2, 120, 3);
    const PenaltyMatrices pen(*p.mesh);
    double prev = std::numeric_limits<double>::infinity();
    for (double l : {1e-5, 1e-3, 1e-1}) {
        const SsrFit fit = fit_ssr(p.mesh, p.psi, p.W, p.z, l * p.mesh->area());
        const Eigen::VectorXd r = p.z - p.W * fit.beta - p.psi * fit.field_coeffs;
        CHECK((p.W.transpose() * r).norm() < 1e-8 * p.z.norm());
        CHECK((fit.residuals - r).norm() < 1e-8 * p.z.norm());
        const double e = penalty_energy(pen.mass, pen.laplacian, fit.field_coeffs);
        CHECK(e <= prev * (1 + 1e-9));
        prev = e;
    }
}

TEST_CASE("collinear covariates name the offending column") {
    Problem p = make_problem(3, 60, 3);
    p.W.col(2) = 2.0 * p.W.col(0) - p.W.col(1);
    try {
        fit_ssr(p.mesh, p.psi, p.W, p.z, 1.0);
        FAIL("expected CollinearityError");
    } catch (const CollinearityError& e) {
        CHECK(std::string(e.what()).find("w") != std::string::npos);
    }
}

TEST_CASE("predict_ssr at vertices, centroids and outside the mesh") {
    const Problem p = make_problem(4, 90, 0);
    const SsrFit fit = fit_ssr(p.mesh, p.psi, p.W, p.z, 1e-2 * p.mesh->area());
    for (std::size_t k = 0; k < p.mesh->num_vertices(); k += 5)
        CHECK(predict_ssr(fit, {}, p.mesh->vertex(k)).value == doctest::Approx(fit.field_coeffs[static_cast<Eigen::Index>(k)]));
    const auto& tri = p.mesh->triangles()[2];
    const double mean = (fit.field_coeffs[tri[0]] + fit.field_coeffs[tri[1]] + fit.field_coeffs[tri[2]]) / 3.0;
    CHECK(predict_ssr(fit, {}, p.mesh->centroid(2)).value == doctest::Approx(mean));

    const auto [lo, hi] = p.mesh->bounding_box();
    const Point2 far{hi.x + 1000, hi.y + 1000};
    const SsrPrediction out = predict_ssr(fit, {}, far);
    CHECK(out.extrapolated);
    CHECK(out.value == fit.field_coeffs[static_cast<Eigen::Index>(p.mesh->nearest_vertex(far))]);
    const double w[1] = {1.0};
    CHECK_THROWS_AS(predict_ssr(fit, w, far), InputError);
    CHECK(predict_ssr(fit, {}, p.pts[3]).value == predict_ssr(fit, {}, p.pts[3]).value);
}

TEST_CASE("fit_linear_baseline examples") {
    Eigen::MatrixXd W(5, 1);
    W << 1, 2, 3, 4, 5;
    Eigen::VectorXd z = 2 * W.col(0);
    CHECK(fit_linear_baseline(W, z).beta[0] == doctest::Approx(2.0).epsilon(1e-12));

    const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(5, 1);
    Eigen::VectorXd noise(5);
    noise << 3, -1, 4, 1, -5;
    CHECK(fit_linear_baseline(one, noise).beta[0] == doctest::Approx(0.4).epsilon(1e-12));

    // z = a + b x on x = 1..5, z = {2, 3, 5, 4, 6}: normal equations by hand give b = 0.9, a = 1.3.
    Eigen::MatrixXd X(5, 2);
    X << 1, 1, 1, 2, 1, 3, 1, 4, 1, 5;
    Eigen::VectorXd y(5);
    y << 2, 3, 5, 4, 6;
    const SsrFit lr = fit_linear_baseline(X, y);
    CHECK(lr.beta[0] == doctest::Approx(1.3).epsilon(1e-12));
    CHECK(lr.beta[1] == doctest::Approx(0.9).epsilon(1e-12));
    CHECK_FALSE(lr.has_field());

    Eigen::MatrixXd dup(5, 2);
    dup << 1, 2, 2, 4, 3, 6, 4, 8, 5, 10;
    CHECK_THROWS_AS(fit_linear_baseline(dup, y), CollinearityError);
}

TEST_CASE("evaluate_surface_grid on affine and constant fields") {
    const auto mesh = random_mesh(6);
    SsrFit fit;
    fit.mesh = mesh;
    fit.beta.resize(0);
    fit.field_coeffs.resize(static_cast<Eigen::Index>(mesh->num_vertices()));
    for (std::size_t k = 0; k < mesh->num_vertices(); ++k) fit.field_coeffs[static_cast<Eigen::Index>(k)] = 1 + 0.5 * mesh->vertex(k).x + 0.25 * mesh->vertex(k).y;
    const auto [lo, hi] = mesh->bounding_box();
    const double cell = (hi.x - lo.x) / 37.3;
    const Raster r = evaluate_surface_grid(fit, cell);
    CHECK(r.width == static_cast<std::size_t>(std::ceil((hi.x - lo.x) / cell)));
    CHECK(r.height == static_cast<std::size_t>(std::ceil((hi.y - lo.y) / cell)));
    CHECK(r.values.size() == r.width * r.height);
    std::size_t inside = 0;
    for (std::size_t row = 0; row < r.height; ++row)
        for (std::size_t col = 0; col < r.width; ++col) {
            const Point2 c = r.cell_center(row, col);
            const double v = r.at(row, col);
            CHECK(std::isnan(v) == !locate_point(*mesh, c).has_value());
            if (!std::isnan(v)) {
                ++inside;
                CHECK(std::fabs(v - (1 + 0.5 * c.x + 0.25 * c.y)) < 1e-9 * (1 + std::fabs(v)));
            }
        }
    CHECK(inside > 0);

    fit.field_coeffs.setConstant(7.0);
    for (double v : evaluate_surface_grid(fit, cell).values)
        if (!std::isnan(v)) CHECK(v == doctest::Approx(7.0));
}

TEST_CASE("select_lambda: single candidate, ties, affine data") {
    const auto mesh = random_mesh(8);
    const auto pts = points_in(*mesh, 100, 8);
    const SparseMatrix psi = assemble_psi(*mesh, pts);
    Eigen::VectorXd z(100);
    for (int i = 0; i < 100; ++i) z[i] = 10 + 0.1 * pts[static_cast<std::size_t>(i)].x;
    const Eigen::MatrixXd W(100, 0);

    const double one[] = {0.5};
    CHECK(select_lambda(mesh, psi, W, z, one, 5).lambda == 0.5);
    const double same[] = {0.3, 0.3};
    CHECK(select_lambda(mesh, psi, W, z, same, 4).lambda == 0.3);
    const double pair[] = {1e3, 1e-6};
    const LambdaSelection s = select_lambda(mesh, psi, W, z, pair, 5);
    CHECK(s.lambda == 1e-6);
    REQUIRE(s.table.size() == 2);
    for (const auto& row : s.table) {
        CHECK(row.fold_mse.size() == 5);
        CHECK(row.mean_mse < 1e-12 * z.squaredNorm());
    }
    const LambdaSelection again = select_lambda(mesh, psi, W, z, pair, 5);
    CHECK(again.table[0].mean_mse == s.table[0].mean_mse);
    const double bad[] = {-1.0};
    CHECK_THROWS_AS(select_lambda(mesh, psi, W, z, bad, 5), InputError);
    CHECK_THROWS_AS(select_lambda(mesh, psi, W, z, one, 1), InputError);
}

TEST_CASE("SsrFit JSON round trip") {
    const Problem p = make_problem(2, 70, 2);
    SsrFit fit = fit_ssr(p.mesh, p.psi, p.W, p.z, 0.5);
    fit.target_is_log = true;
    const SsrFit back = ssr_fit_from_json(nlohmann::json::parse(to_json(fit).dump()));
    CHECK(back.beta == fit.beta);
    CHECK(back.field_coeffs == fit.field_coeffs);
    CHECK(back.feature_names == fit.feature_names);
    CHECK(back.target_is_log);
    CHECK(back.mesh->num_vertices() == fit.mesh->num_vertices());
    const double w[2] = {0.3, -0.2};
    CHECK(predict_ssr(back, w, p.pts[5]).value == predict_ssr(fit, w, p.pts[5]).value);
    nlohmann::json broken = to_json(fit);
    broken["beta"] = {1.0};
    CHECK_THROWS_AS(ssr_fit_from_json(broken), IoError);
}
