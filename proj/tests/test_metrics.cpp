#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "hsfm/errors.hpp"
#include "hsfm/metrics.hpp"
#include "hsfm/rng.hpp"

using namespace hsfm;

TEST_CASE("hand pair and perfect predictions") {
    const double p[] = {110}, t[] = {100};
    const MetricsReport r = compute_metrics(p, t, "x");
    CHECK(r.mse == 100.0);
    CHECK(r.rmse == 10.0);
    CHECK(r.mrae == 0.10);
    CHECK(r.rae_cdf == std::array<double, 6>{0, 0, 0, 0, 0, 1});
    CHECK(r.n_test == 1);

    const double same[] = {5, 7, 9};
    const MetricsReport z = compute_metrics(same, same);
    CHECK(z.mse == 0.0);
    CHECK(z.mrae == 0.0);
    for (double c : z.rae_cdf) CHECK(c == 1.0);
}

TEST_CASE("metric input errors") {
    const double p[] = {1, 2}, t[] = {1, 0}, one[] = {1};
    CHECK_THROWS_AS(compute_metrics(p, one), InputError);
    CHECK_THROWS_AS(compute_metrics(std::span<const double>{}, std::span<const double>{}), InputError);
    try {
        compute_metrics(p, t);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("truth 1") != std::string::npos);
    }
}

TEST_CASE("CDF is monotone and metrics are permutation invariant") {
    SplitMix64 rng(77);
    for (int s = 0; s < 200; ++s) {
        const std::size_t n = 1 + rng.below(50);
        std::vector<double> p(n), t(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = rng.uniform(1, 1000);
            p[i] = t[i] * (1 + 0.2 * rng.normal());
        }
        const MetricsReport r = compute_metrics(p, t);
        for (std::size_t k = 0; k + 1 < r.rae_cdf.size(); ++k) CHECK(r.rae_cdf[k] <= r.rae_cdf[k + 1]);
        CHECK(r.rmse == doctest::Approx(std::sqrt(r.mse)));
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        shuffle(perm, rng);
        std::vector<double> pp(n), tp(n);
        for (std::size_t i = 0; i < n; ++i) {
            pp[i] = p[perm[i]];
            tp[i] = t[perm[i]];
        }
        const MetricsReport q = compute_metrics(pp, tp);
        CHECK(q.mse == doctest::Approx(r.mse));
        CHECK(q.mrae == doctest::Approx(r.mrae));
        CHECK(q.rae_cdf == r.rae_cdf);
    }
}

TEST_CASE("relative improvements") {
    CHECK(relative_improvement(100, 71.78) == doctest::Approx(28.22));
    CHECK(relative_improvement(0.0842, 0.0660) == doctest::Approx(21.6).epsilon(1e-3));
}

TEST_CASE("comparison report") {
    MetricsReport a, b;
    a.method = "LR";
    a.rmse = 100;
    a.mrae = 0.0842;
    b.method = "HSFM";
    b.rmse = 71.78;
    b.mrae = 0.0660;
    const std::pair<std::string, std::string> pairs[] = {{"LR", "HSFM"}, {"LR", "missing"}};
    const ComparisonTable t = compare_report({a, b}, pairs);
    REQUIRE(t.improvements.size() == 1);
    CHECK(t.improvements[0].rmse_pct == doctest::Approx(28.22));
    CHECK(t.to_csv().find("LR,HSFM,28.22,21.62") != std::string::npos);
    CHECK(t.to_csv().rfind("method,n_test,mse,rmse,mrae,cdf_lt_1,cdf_lt_2,cdf_lt_3,cdf_lt_5,cdf_lt_10,cdf_lt_15\n", 0) == 0);
    CHECK(t.to_text().find("< 15%") != std::string::npos);

    const ComparisonTable single = compare_report({a});
    CHECK(single.rows.size() == 1);
    CHECK(single.improvements.empty());
    CHECK(single.to_csv().find("baseline") == std::string::npos);
    CHECK_THROWS_AS(compare_report({a, a}), InputError);
    CHECK_THROWS_AS(compare_report({}), InputError);
}
