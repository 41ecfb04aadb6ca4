#ifndef HSFM_DATA_HPP
#define HSFM_DATA_HPP

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hsfm/geometry.hpp"

namespace hsfm {

struct HouseRecord {
    std::string id;
    double value = 0.0;
    std::vector<double> features;
    double lat = 0.0;
    double lon = 0.0;
};

// How one CSV column becomes one covariate.
struct FeatureSpec {
    enum class Kind { numeric, boolean, age_from_year, categorical };

    std::string column;
    Kind kind = Kind::numeric;
    // Output name; defaults to the column name.
    std::string name;
    // Code -> value map for boolean and categorical columns. Booleans fall
    // back to Y/N, yes/no, true/false, 1/0 when empty.
    std::map<std::string, double> encoding;
};

struct CsvSchema {
    std::string id_column = "id";
    std::string value_column = "assessed_value";
    std::string lat_column = "latitude";
    std::string lon_column = "longitude";
    std::vector<FeatureSpec> features;
    int reference_year = 2015;
};

struct LoadReport {
    std::size_t rows_read = 0;
    std::size_t rows_dropped = 0;
    std::size_t values_imputed = 0;
};

struct Dataset {
    std::vector<HouseRecord> records;
    std::vector<std::string> feature_names;
    // Filled by project_dataset.
    std::vector<Point2> projected_points;
    LatLon origin;
    LoadReport report;

    std::size_t size() const { return records.size(); }
    std::size_t q() const { return feature_names.size(); }
    Eigen::MatrixXd covariates() const;
    Eigen::VectorXd values() const;
    std::vector<LatLon> coordinates() const;
};

Dataset load_houses_csv(const std::string& path, const CsvSchema& schema);
// Writes id, value, lat, lon and every feature under its output name.
void write_houses_csv(const std::string& path, const Dataset& data, const CsvSchema& schema = {});
// Schema that reads back what write_houses_csv wrote.
CsvSchema plain_schema(const std::vector<std::string>& feature_names);

// Projects coordinates about origin and stores the result in the dataset.
void project_dataset(Dataset& data, LatLon origin);

// Seeded uniform shuffle; the first ceil(fraction * n) records train.
std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double train_fraction, std::uint64_t seed);

// Subset by record index, keeping projection and feature metadata.
Dataset subset(const Dataset& data, const std::vector<std::size_t>& rows);

// Z-score statistics of each covariate column (population stdev; 1 when a
// column is constant).
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const Eigen::MatrixXd& W);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& W) const;
};

} // namespace hsfm

#endif
