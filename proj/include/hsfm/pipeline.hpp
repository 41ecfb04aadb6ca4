#ifndef HSFM_PIPELINE_HPP
#define HSFM_PIPELINE_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hsfm/data.hpp"
#include "hsfm/geometry.hpp"
#include "hsfm/hsfm.hpp"
#include "hsfm/metrics.hpp"
#include "hsfm/ssr.hpp"

namespace hsfm {

// Everything the pipeline reads from the INI-style config file. Defaults are
// the documented ones (see README).
struct PipelineConfig {
    // [data]
    std::string data_path;
    CsvSchema schema;
    double train_fraction = 0.8;
    std::uint64_t seed = 42;

    // [domain]
    std::string geojson_path; // empty: infer an alpha shape
    double alpha = 0.0;       // 0: 3x median nearest-neighbour distance
    double max_area = 0.0;    // 0: about one mesh vertex per 3 training points
    double min_angle = 25.0;
    std::size_t max_vertices = 100000;

    // [model]
    std::vector<std::string> methods{"lr", "ssr_field_only", "ssr", "hsfm"};
    std::vector<bool> log_modes{false, true};
    std::optional<double> lambda; // unset: k-fold cross-validation
    std::vector<double> lambda_candidates{1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1, 10, 100};
    int cv_folds = 5;
    std::optional<double> lambda_local;
    bool lambda_local_cv = false;

    // [partition]
    double lambda_surface = 1e-2;
    double alpha_penalty = 4.0;
    int samples_per_edge = 16;
    double dc_quantile = 0.02;
    std::optional<int> clusters;
    int contiguity_k = 10;
    std::size_t min_region_size = 0;
    std::size_t max_points = 20000;

    // [output]
    std::string output_dir = "hsfm_out";
    double raster_cell = 0.0; // 0: longest mesh bounding-box side / 200
    bool write_rasters = true;

    unsigned threads = 0;

    HsfmConfig hsfm_config(double lambda_global, bool log_mode) const;
};

// Reads the config file and applies "section.key=value" overrides on top.
// Relative paths in the file resolve against the file's directory.
PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
PipelineConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {},
                            const std::string& base_dir = {});

// Feature list syntax: comma-separated column[:kind[(code=value;...)]] with
// kind one of num, bool, age, cat.
std::vector<FeatureSpec> parse_feature_list(const std::string& text);

struct PreparedData {
    Dataset all;
    Dataset train;
    Dataset test;
    DomainPolygon domain;
    std::shared_ptr<const TriangleMesh> mesh;
    std::size_t skinny_triangles = 0;
    std::size_t dropped_train = 0;
};

// Load, project, split (or keep everything for training when split is false),
// build the domain and mesh, and drop training points outside the mesh.
PreparedData prepare_data(const PipelineConfig& config, bool split = true);

struct PipelineResult {
    ComparisonTable table;
    std::map<std::string, double> lambdas;
    std::vector<std::string> artifacts; // relative to output_dir
};

PipelineResult run_pipeline(const PipelineConfig& config);

// Fits one method on every usable record (no test split), writes
// output_dir/models/<method>[_log] and returns that directory.
std::string fit_on_all(const PipelineConfig& config, const std::string& method, bool log_mode);

// Predictions on the price scale from a model directory written by the
// pipeline (HSFM model.json or single-fit fit.json).
std::vector<double> predict_model_dir(const std::string& model_dir, const Dataset& data);

// basename.csv (blank cell for NaN), basename.pgm (8-bit min-max), basename.meta.json.
// Rows are written in storage order, southernmost first.
void write_raster(const Raster& raster, const std::string& basename);
Raster read_raster(const std::string& basename);

std::string sha256_file(const std::string& path);
// Hashes every file under dir except manifest.json, sorted by path, and writes manifest.json.
std::vector<std::string> write_manifest(const std::string& dir);

} // namespace hsfm

#endif
