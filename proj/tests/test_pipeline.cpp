#include "doctest.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hsfm/errors.hpp"
#include "hsfm/pipeline.hpp"
#include "hsfm/testkit.hpp"
#include "test_support.hpp"

using namespace hsfm;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Synthetic data set plus a config file pointing at it.
fs::path synthetic_case(const std::string& name, std::size_t n, const std::string& extra) {
    const fs::path dir = test::temp_dir(name);
    const auto [data, truth] = gen_synthetic(two_region_step_spec(n, 11));
    write_houses_csv((dir / "houses.csv").string(), data, plain_schema(data.feature_names));
    std::ofstream(dir / "config.ini") << "[data]\npath = houses.csv\nfeatures = w1,w2,w3\n\n[output]\ndir = out\n" << extra;
    return dir;
}

} // namespace

TEST_CASE("config defaults and overrides") {
    const PipelineConfig c = parse_config("[data]\npath = h.csv\n", {}, "/base");
    CHECK(c.data_path == "/base/h.csv");
    CHECK(c.train_fraction == 0.8);
    CHECK(c.seed == 42);
    CHECK(c.methods == std::vector<std::string>{"lr", "ssr_field_only", "ssr", "hsfm"});
    CHECK(c.log_modes == std::vector<bool>{false, true});
    CHECK_FALSE(c.lambda);
    CHECK(c.lambda_candidates.size() == 9);
    CHECK(c.lambda_surface == 1e-2);
    CHECK_FALSE(c.clusters);
    CHECK(c.schema.reference_year == 2015);
    CHECK(c.schema.value_column == "assessed_value");

    const PipelineConfig o = parse_config(
        "[data]\npath = /abs/h.csv\nfeatures = area, built:age, ac:bool(Y=1;N=0), zone:cat(a=0;b=1)\n[model]\nlambda = cv\n"
        "[partition]\nclusters = auto\n",
        {"model.lambda=0.25", "partition.clusters=3", "model.modes=log", "model.methods=lr,hsfm"});
    CHECK(o.data_path == "/abs/h.csv");
    CHECK(o.lambda == 0.25);
    CHECK(o.clusters == 3);
    CHECK(o.log_modes == std::vector<bool>{true});
    CHECK(o.methods == std::vector<std::string>{"lr", "hsfm"});
    REQUIRE(o.schema.features.size() == 4);
    CHECK(o.schema.features[1].kind == FeatureSpec::Kind::age_from_year);
    CHECK(o.schema.features[2].encoding.at("Y") == 1.0);
    CHECK(o.schema.features[3].kind == FeatureSpec::Kind::categorical);
    CHECK(o.schema.features[3].encoding.at("b") == 1.0);
    CHECK(parse_config("[data]\npath = x\n[model]\nlambda_local = cv\n").lambda_local_cv);
    const HsfmConfig h = o.hsfm_config(0.5, true);
    CHECK(h.lambda_global == 0.5);
    CHECK(h.target_is_log);
    CHECK(h.J == 3);
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(parse_config("[data]\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[data]\npath = x\nbogus = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[data]\npath = x\n[extra]\na = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[data]\npath = x\ntrain_fraction = 1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[data]\npath = x\n[model]\nlambda = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[data]\npath = x\n[model]\nmethods = lr,gbm\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[data]\npath = x\n[partition]\ndc_quantile = 0.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[data]\npath = x\nfeatures = z:cat\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[data]\npath = x\n", {"nodot=1"}), ConfigError);
    CHECK_THROWS_AS(parse_config("[data\npath = x\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent.ini"), ConfigError);
}

TEST_CASE("raster files") {
    const fs::path dir = test::temp_dir("raster");
    Raster r;
    r.width = 2;
    r.height = 2;
    r.cell_size = 10;
    r.values = {0, 1, 2, 3};
    write_raster(r, (dir / "a").string());
    const std::string pgm = slurp(dir / "a.pgm");
    const std::string pixels = pgm.substr(pgm.size() - 4);
    CHECK(std::vector<unsigned char>(pixels.begin(), pixels.end()) == std::vector<unsigned char>{0, 85, 170, 255});
    CHECK(pgm.rfind("P5\n2 2\n255\n", 0) == 0);
    const nlohmann::json meta = nlohmann::json::parse(slurp(dir / "a.meta.json"));
    CHECK(meta.at("min") == 0.0);
    CHECK(meta.at("max") == 3.0);
    CHECK(meta.at("empty") == false);

    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.values = {nan, nan, nan, nan};
    write_raster(r, (dir / "b").string());
    const std::string pgm_b = slurp(dir / "b.pgm");
    for (std::size_t k = pgm_b.size() - 4; k < pgm_b.size(); ++k) CHECK(pgm_b[k] == 0);
    CHECK(nlohmann::json::parse(slurp(dir / "b.meta.json")).at("empty") == true);

    r.values = {0.1, nan, 1.0 / 3.0, -2e-300};
    write_raster(r, (dir / "c").string());
    const Raster back = read_raster((dir / "c").string());
    CHECK(back.width == 2);
    CHECK(back.values[0] == r.values[0]);
    CHECK(std::isnan(back.values[1]));
    CHECK(back.values[2] == r.values[2]);
    CHECK(back.values[3] == r.values[3]);
    CHECK_THROWS_AS(write_raster(r, "/nonexistent/dir/x"), IoError);
}

TEST_CASE("sha256 of a known string") {
    const fs::path dir = test::temp_dir("sha");
    std::ofstream(dir / "abc", std::ios::binary) << "abc";
    CHECK(sha256_file((dir / "abc").string()) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const auto files = write_manifest(dir.string());
    CHECK(files == std::vector<std::string>{"abc"});
    CHECK(nlohmann::json::parse(slurp(dir / "manifest.json")).at("files").size() == 1);
}

TEST_CASE("linear regression alone on a tiny file gives one metrics row") {
    const fs::path dir = test::temp_dir("tiny");
    std::ofstream f(dir / "houses.csv");
    f << "id,assessed_value,latitude,longitude,a\n";
    SplitMix64 rng(3);
    for (int i = 0; i < 10; ++i)
        f << i << ',' << 100 + 10 * i + rng.uniform() << ',' << 53.5 + 0.001 * (i % 4) + 1e-4 * rng.uniform() << ','
          << -113.5 + 0.001 * (i / 4) + 1e-4 * rng.uniform() << ',' << i << '\n';
    f.close();
    const PipelineConfig c = parse_config("[data]\npath = houses.csv\nfeatures = a\n[model]\nmethods = lr\nmodes = linear\n"
                                          "[output]\ndir = out\nrasters = false\n",
                                          {}, dir.string());
    const PipelineResult r = run_pipeline(c);
    CHECK(r.table.rows.size() == 1);
    CHECK(r.table.rows[0].method == "LR");
    CHECK(r.table.rows[0].n_test == 2);
    const std::string csv = slurp(dir / "out" / "metrics.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("full run on synthetic two-region data") {
    const fs::path dir = synthetic_case("full", 800, "[partition]\nclusters = 2\n[model]\nmodes = linear\n");
    const PipelineConfig c = load_config((dir / "config.ini").string());
    const PipelineResult r = run_pipeline(c);
    REQUIRE(r.table.rows.size() == 4);
    const auto mrae = [&](const std::string& m) {
        for (const auto& row : r.table.rows)
            if (row.method == m) return row.mrae;
        FAIL("missing row " << m);
        return 0.0;
    };
    CHECK(mrae("HSFM") < mrae("SSR"));
    CHECK(mrae("SSR") < mrae("LR"));
    for (const char* f : {"metrics.csv", "metrics.txt", "partition.csv", "cfsfdp.csv", "predictions.csv", "lambda_cv.csv",
                          "manifest.json", "domain.geojson", "mesh.txt", "models/hsfm/model.json", "models/ssr/fit.json",
                          "rasters/ssr.pgm", "rasters/hsfm_global.meta.json"})
        CHECK_MESSAGE(fs::exists(dir / "out" / f), f);
    const nlohmann::json manifest = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
    CHECK(manifest.at("files").size() + 1 == r.artifacts.size());

    // Saved models predict the same values the run reported.
    const Dataset all = load_houses_csv((dir / "houses.csv").string(), plain_schema({"w1", "w2", "w3"}));
    const std::vector<double> p = predict_model_dir((dir / "out" / "models" / "hsfm").string(), all);
    const std::vector<double> l = predict_model_dir((dir / "out" / "models" / "lr").string(), all);
    CHECK(p.size() == all.size());
    CHECK(std::isfinite(l[0]));
    const nlohmann::json ssr = nlohmann::json::parse(slurp(dir / "out" / "models" / "ssr" / "fit.json"));
    CHECK(ssr.at("beta_original_units")[0].get<double>() ==
          doctest::Approx(ssr.at("beta")[0].get<double>() / ssr.at("feature_scale")[0].get<double>()));

    // Rerun: byte-identical metrics and manifest.
    const std::string metrics = slurp(dir / "out" / "metrics.csv"), mani = slurp(dir / "out" / "manifest.json");
    run_pipeline(c);
    CHECK(slurp(dir / "out" / "metrics.csv") == metrics);
    CHECK(slurp(dir / "out" / "manifest.json") == mani);
}

TEST_CASE("HSFM refuses more training points than max_points") {
    const fs::path dir = synthetic_case("maxpts", 200, "[partition]\nmax_points = 100\n[model]\nmethods = hsfm\nlambda = 0.01\n");
    try {
        run_pipeline(load_config((dir / "config.ini").string()));
        FAIL("expected refusal");
    } catch (const StageError& e) {
        CHECK(e.code() == ExitCode::config);
        CHECK(std::string(e.what()).find("subsample") != std::string::npos);
    }
}

TEST_CASE("fit on all records") {
    const fs::path dir = synthetic_case("fitall", 300, "");
    const PipelineConfig c = load_config((dir / "config.ini").string(), {"model.lambda=0.01"});
    const std::string model = fit_on_all(c, "ssr", true);
    CHECK(fs::exists(fs::path(model) / "fit.json"));
    CHECK(model.find("ssr_log") != std::string::npos);
    CHECK_THROWS_AS(fit_on_all(c, "gbm", false), ConfigError);
}
