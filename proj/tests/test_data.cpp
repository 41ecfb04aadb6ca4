#include "doctest.h"

#include <fstream>
#include <set>

#include "hsfm/data.hpp"
#include "hsfm/errors.hpp"
#include "test_support.hpp"

using namespace hsfm;

namespace {

std::string write_file(const std::string& name, const std::string& text) {
    const auto path = (test::temp_dir("data_" + name) / "houses.csv").string();
    std::ofstream(path) << text;
    return path;
}

CsvSchema schema_with(std::vector<FeatureSpec> f) {
    CsvSchema s;
    s.features = std::move(f);
    return s;
}

Dataset numbered(std::size_t n) {
    Dataset d;
    d.feature_names = {"a"};
    for (std::size_t i = 0; i < n; ++i) d.records.push_back({std::to_string(i), 100.0 + double(i), {double(i)}, 53.5, -113.5});
    return d;
}

} // namespace

TEST_CASE("load a well-formed file with typed features") {
    const std::string path = write_file("typed",
                                        "id,assessed_value,latitude,longitude,area,year,garage,zone\n"
                                        "a,300000,53.5,-113.5,120.5,1990,Y,R1\n"
                                        "b,\"410,000\",53.51,-113.49,150,2000,N,R2\n"
                                        "c,250000,53.52,-113.48,95,1975,yes,R1\n");
    FeatureSpec area{"area"}, year{"year", FeatureSpec::Kind::age_from_year}, garage{"garage", FeatureSpec::Kind::boolean},
        zone{"zone", FeatureSpec::Kind::categorical, "zone_code", {{"R1", 0}, {"R2", 1}}};
    // A quoted "410,000" is one cell but not a number: the row is dropped.
    const Dataset quoted = load_houses_csv(path, schema_with({area, year, garage, zone}));
    CHECK(quoted.size() == 2);
    CHECK(quoted.report.rows_dropped == 1);

    const std::string ok = write_file("typed_ok",
                                      "id,assessed_value,latitude,longitude,area,year,garage,zone\n"
                                      "a,300000,53.5,-113.5,120.5,1990,Y,R1\n"
                                      "b,410000,53.51,-113.49,150,2000,N,R2\n"
                                      "c,250000,53.52,-113.48,95,1975,yes,R1\n");
    const Dataset d = load_houses_csv(ok, schema_with({area, year, garage, zone}));
    REQUIRE(d.size() == 3);
    CHECK(d.q() == 4);
    CHECK(d.feature_names == std::vector<std::string>{"area", "year", "garage", "zone_code"});
    CHECK(d.records[0].features == std::vector<double>{120.5, 25, 1, 0});
    CHECK(d.records[1].features == std::vector<double>{150, 15, 0, 1});
    CHECK(d.records[2].features[2] == 1);
    CHECK(d.report.rows_read == 3);
    CHECK(d.report.rows_dropped == 0);
}

TEST_CASE("missing coordinates drop the row, missing features are imputed") {
    const std::string path = write_file("missing",
                                        "id,assessed_value,latitude,longitude,area\n"
                                        "a,100,53.5,-113.5,10\n"
                                        "b,200,,-113.5,20\n"
                                        "c,300,53.5,-113.5,NA\n"
                                        "d,400,53.5,-113.5,30\n"
                                        "e,-5,53.5,-113.5,30\n");
    const Dataset d = load_houses_csv(path, schema_with({{"area"}}));
    CHECK(d.size() == 3);
    CHECK(d.report.rows_dropped == 2);
    CHECK(d.report.values_imputed == 1);
    CHECK(d.records[1].id == "c");
    CHECK(d.records[1].features[0] == 20.0);
}

TEST_CASE("schema and data errors") {
    const std::string path = write_file("errors", "id,assessed_value,latitude,longitude\na,1,53,-113\n");
    CHECK_THROWS_AS(load_houses_csv(path, schema_with({{"area"}})), SchemaError);
    CHECK_THROWS_AS(load_houses_csv(path, schema_with({{"id", FeatureSpec::Kind::categorical}})), SchemaError);
    const std::string empty = write_file("empty", "id,assessed_value,latitude,longitude\na,,53,-113\n");
    CHECK_THROWS_AS(load_houses_csv(empty, {}), DataError);
    const std::string dup = write_file("dup", "id,assessed_value,latitude,longitude\na,1,53,-113\na,2,53,-113\n");
    CHECK_THROWS_AS(load_houses_csv(dup, {}), DataError);
    CHECK_THROWS_AS(load_houses_csv("/nonexistent/houses.csv", {}), IoError);
}

TEST_CASE("write then load is identity on retained rows") {
    Dataset d = numbered(6);
    d.records[2].id = "has,comma";
    d.records[3].features[0] = 1.0 / 3.0;
    const auto path = (test::temp_dir("roundtrip") / "h.csv").string();
    const CsvSchema s = plain_schema(d.feature_names);
    write_houses_csv(path, d, s);
    const Dataset back = load_houses_csv(path, s);
    REQUIRE(back.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(back.records[i].id == d.records[i].id);
        CHECK(back.records[i].value == d.records[i].value);
        CHECK(back.records[i].features == d.records[i].features);
        CHECK(back.records[i].lat == d.records[i].lat);
    }
}

TEST_CASE("train_test_split sizes, determinism and disjointness") {
    const Dataset d = numbered(6130);
    const auto [train, test] = train_test_split(d, 0.8, 42);
    CHECK(train.size() == 4904);
    CHECK(test.size() == 1226);
    std::set<std::string> ids;
    for (const auto& r : train.records) ids.insert(r.id);
    for (const auto& r : test.records) CHECK(ids.insert(r.id).second);
    CHECK(ids.size() == d.size());
    const auto again = train_test_split(d, 0.8, 42);
    for (std::size_t i = 0; i < train.size(); ++i) CHECK(again.first.records[i].id == train.records[i].id);
    const auto other = train_test_split(d, 0.8, 43);
    bool differs = false;
    for (std::size_t i = 0; i < train.size(); ++i) differs |= other.first.records[i].id != train.records[i].id;
    CHECK(differs);
    CHECK_THROWS_AS(train_test_split(d, 1.0, 1), InputError);
    CHECK_THROWS_AS(train_test_split(numbered(4), 0.5, 1), InputError);
}

TEST_CASE("projection, subset and standardization") {
    Dataset d = numbered(5);
    project_dataset(d, {53.5, -113.5});
    REQUIRE(d.projected_points.size() == 5);
    CHECK(d.projected_points[0].x == doctest::Approx(0.0));
    const Dataset s = subset(d, {4, 1});
    CHECK(s.size() == 2);
    CHECK(s.records[0].id == "4");
    CHECK(s.projected_points.size() == 2);

    Eigen::MatrixXd W(4, 2);
    W << 1, 5, 2, 5, 3, 5, 4, 5;
    const Standardizer st = Standardizer::fit(W);
    CHECK(st.mean[0] == 2.5);
    CHECK(st.scale[0] == doctest::Approx(std::sqrt(1.25)));
    CHECK(st.scale[1] == 1.0);
    const Eigen::MatrixXd Z = st.apply(W);
    CHECK(Z.col(0).sum() == doctest::Approx(0.0));
    CHECK(Z.col(1).isZero());
}
