#include "doctest.h"

#include <cmath>

#include <nlohmann/json.hpp>

#include "hsfm/errors.hpp"
#include "hsfm/fem.hpp"
#include "hsfm/testkit.hpp"
#include "test_support.hpp"

using namespace hsfm;
using hsfm::test::rect;

namespace {

SyntheticSpec base_spec() {
    SyntheticSpec s;
    s.domain = rect(0, 0, 1000, 500);
    s.n = 200;
    s.seed = 5;
    return s;
}

SsrFit field_fit(const TriangleMesh& mesh, double (*f)(Point2)) {
    SsrFit fit;
    fit.mesh = std::make_shared<const TriangleMesh>(mesh);
    fit.beta.resize(0);
    fit.field_coeffs.resize(static_cast<Eigen::Index>(mesh.num_vertices()));
    for (std::size_t k = 0; k < mesh.num_vertices(); ++k) fit.field_coeffs[static_cast<Eigen::Index>(k)] = f(mesh.vertex(k));
    return fit;
}

} // namespace

TEST_CASE("constant and affine synthetic fields without noise") {
    SyntheticSpec s = base_spec();
    s.regions.push_back({s.domain, {42.0}, {}});
    auto [d, t] = gen_synthetic(s);
    REQUIRE(d.size() == 200);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(d.records[i].value == 42.0);
        CHECK(t.labels[i] == 1);
    }

    SyntheticSpec a = base_spec();
    a.global_field = {500.0, 0.5, -0.25, {}};
    a.global_beta = {2.0};
    auto [e, u] = gen_synthetic(a);
    CHECK(e.q() == 1);
    for (std::size_t i = 0; i < e.size(); ++i) {
        const Point2 p = e.projected_points[i];
        CHECK(e.records[i].value == doctest::Approx(500 + 0.5 * p.x - 0.25 * p.y + 2.0 * e.records[i].features[0]));
        CHECK(u.labels[i] == 0);
    }
}

TEST_CASE("two-region step preset") {
    const SyntheticSpec s = two_region_step_spec(2000, 3);
    auto [d, t] = gen_synthetic(s);
    CHECK(d.size() == 2000);
    CHECK(s.noise_sd == doctest::Approx(0.05 * 500));
    std::size_t counts[3] = {0, 0, 0};
    for (int l : t.labels) ++counts[l];
    CHECK(counts[0] == 0);
    CHECK(counts[1] > 800);
    CHECK(counts[2] > 800);
    // Local parts just west and east of the split differ by the designed step.
    const double west = s.regions[0].field({3999, 2500}), east = s.regions[1].field({4001, 2500});
    CHECK(std::fabs(east - west) > 100);
    double max_noise = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(t.noiseless[i] == doctest::Approx(t.global_part[i] + t.local_part[i]));
        max_noise = std::max(max_noise, std::fabs(d.records[i].value - t.noiseless[i]));
    }
    CHECK(max_noise < 6 * s.noise_sd);

    auto [d2, t2] = gen_synthetic(s);
    CHECK(d2.records[17].value == d.records[17].value);
    CHECK(t2.labels == t.labels);
    const nlohmann::json j = truth_to_json(s, t);
    CHECK(j.at("labels").size() == 2000);
}

TEST_CASE("synthetic spec errors") {
    SyntheticSpec s = base_spec();
    s.n = 49;
    CHECK_THROWS_AS(gen_synthetic(s), InputError);
    SyntheticSpec thin = base_spec();
    thin.domain = {{{0, 0}, {1e6, 1e6}, {1e6, 1e6 + 1e-3}}, {}};
    CHECK_THROWS_AS(gen_synthetic(thin), GeometryError);
}

TEST_CASE("dense oracle: interpolation at lambda 0 and affine data") {
    const TriangleMesh sq({{0, 0}, {1, 0}, {1, 1}, {0, 1}}, {{{0, 1, 2}}, {{0, 2, 3}}}, {1, 1, 1, 1});
    const PenaltyMatrices pen(sq);
    const SparseMatrix psi = assemble_psi(sq, sq.vertices());
    Eigen::VectorXd z(4);
    z << 1, 5, 2, 7;
    const OracleFit o = dense_oracle_fit(psi, Eigen::MatrixXd(4, 0), z, pen.mass, pen.laplacian, 0.0);
    CHECK((o.field - z).norm() < 1e-12);

    const auto mesh = test::random_mesh(2);
    const PenaltyMatrices p2(*mesh);
    const auto pts = test::points_in(*mesh, 80, 1);
    Eigen::VectorXd za(80);
    for (int i = 0; i < 80; ++i) za[i] = 4 + 0.01 * pts[static_cast<std::size_t>(i)].x + 0.02 * pts[static_cast<std::size_t>(i)].y;
    const OracleFit a = dense_oracle_fit(assemble_psi(*mesh, pts), Eigen::MatrixXd(80, 0), za, p2.mass, p2.laplacian, 10.0);
    for (std::size_t k = 0; k < mesh->num_vertices(); ++k) {
        const Point2 v = mesh->vertex(k);
        CHECK(a.field[static_cast<Eigen::Index>(k)] == doctest::Approx(4 + 0.01 * v.x + 0.02 * v.y).epsilon(1e-6));
    }
}

TEST_CASE("finite-difference penalty check") {
    TriangulateOptions o;
    o.max_area = 1.0;
    const TriangleMesh mesh = triangulate(rect(0, 0, 60, 60), o).mesh;
    const SsrFit affine = field_fit(mesh, [](Point2 p) { return 3 + 2 * p.x - p.y; });
    CHECK(fd_penalty_check(affine, 2.0) < 1e-6 * 180.0 * 180.0);

    const double cell = 3.0;
    const SsrFit sq = field_fit(mesh, [](Point2 p) { return p.x * p.x; });
    CHECK(fd_penalty_check(sq, cell) == doctest::Approx(4 * 60.0 * 60.0).epsilon(0.2));
    CHECK_THROWS_AS(fd_penalty_check(sq, 25.0), InputError);

    // Noisy data: the penalty drops as lambda grows.
    const auto m = std::make_shared<const TriangleMesh>(triangulate(rect(0, 0, 60, 60), TriangulateOptions{20.0}).mesh);
    const auto pts = test::points_in(*m, 400, 9);
    SplitMix64 rng(4);
    Eigen::VectorXd z(400);
    for (int i = 0; i < 400; ++i) z[i] = std::sin(pts[static_cast<std::size_t>(i)].x / 10) + 0.3 * rng.normal();
    const SparseMatrix psi = assemble_psi(*m, pts);
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {1.0, 100.0, 1e4}) {
        const double e = fd_penalty_check(fit_ssr(m, psi, Eigen::MatrixXd(400, 0), z, lambda), 1.5);
        CHECK(e < prev);
        prev = e;
    }
}
