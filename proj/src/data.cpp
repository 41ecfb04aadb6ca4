#include "hsfm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <set>

#include <boost/tokenizer.hpp>

#include "hsfm/errors.hpp"
#include "hsfm/rng.hpp"

namespace hsfm {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    boost::escaped_list_separator<char> sep('\\', ',', '"');
    boost::tokenizer<boost::escaped_list_separator<char>> tok(line, sep);
    std::vector<std::string> out;
    try {
        for (const auto& t : tok) out.push_back(t);
    } catch (const boost::escaped_list_error& e) {
        throw DataError(std::string("malformed CSV line: ") + e.what());
    }
    return out;
}

std::string trim(std::string s) {
    const auto ws = [](unsigned char c) { return std::isspace(c); };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    return s;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

bool is_missing(const std::string& s) {
    const std::string l = lower(s);
    return l.empty() || l == "na" || l == "nan" || l == "null" || l == "none";
}

std::optional<double> parse_number(const std::string& s) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (b != e && *b == '+') ++b;
    const auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<double> encode_feature(const FeatureSpec& spec, const std::string& raw, int reference_year) {
    if (is_missing(raw)) return std::nullopt;
    switch (spec.kind) {
        case FeatureSpec::Kind::numeric:
            return parse_number(raw);
        case FeatureSpec::Kind::age_from_year: {
            const auto y = parse_number(raw);
            if (!y) return std::nullopt;
            return static_cast<double>(reference_year) - *y;
        }
        case FeatureSpec::Kind::boolean: {
            if (!spec.encoding.empty()) {
                const auto it = spec.encoding.find(raw);
                if (it != spec.encoding.end()) return it->second;
                return std::nullopt;
            }
            const std::string l = lower(raw);
            if (l == "y" || l == "yes" || l == "true" || l == "t" || l == "1") return 1.0;
            if (l == "n" || l == "no" || l == "false" || l == "f" || l == "0") return 0.0;
            return std::nullopt;
        }
        case FeatureSpec::Kind::categorical: {
            const auto it = spec.encoding.find(raw);
            if (it != spec.encoding.end()) return it->second;
            return std::nullopt;
        }
    }
    return std::nullopt;
}

std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

Eigen::MatrixXd Dataset::covariates() const {
    Eigen::MatrixXd W(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(q()));
    for (std::size_t i = 0; i < records.size(); ++i)
        for (std::size_t j = 0; j < q(); ++j) W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = records[i].features[j];
    return W;
}

Eigen::VectorXd Dataset::values() const {
    Eigen::VectorXd z(static_cast<Eigen::Index>(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i) z[static_cast<Eigen::Index>(i)] = records[i].value;
    return z;
}

std::vector<LatLon> Dataset::coordinates() const {
    std::vector<LatLon> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({r.lat, r.lon});
    return out;
}

Dataset load_houses_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("'" + path + "' has no header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    const auto col = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (trim(header[i]) == name) return i;
        throw SchemaError("column '" + name + "' not found in '" + path + "'");
    };
    const std::size_t c_id = col(schema.id_column);
    const std::size_t c_val = col(schema.value_column);
    const std::size_t c_lat = col(schema.lat_column);
    const std::size_t c_lon = col(schema.lon_column);
    std::vector<std::size_t> c_feat;
    Dataset data;
    for (const auto& f : schema.features) {
        c_feat.push_back(col(f.column));
        data.feature_names.push_back(f.name.empty() ? f.column : f.name);
        if (f.kind == FeatureSpec::Kind::categorical && f.encoding.empty())
            throw SchemaError("categorical column '" + f.column + "' needs an encoding map");
    }

    const std::size_t q = schema.features.size();
    std::vector<std::vector<std::optional<double>>> raw_features;
    std::set<std::string> ids;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        ++data.report.rows_read;
        auto cells = split_csv_line(line);
        cells.resize(std::max(cells.size(), header.size()));
        for (auto& c : cells) c = trim(c);
        const double nan = std::numeric_limits<double>::quiet_NaN();
        const double value = parse_number(cells[c_val]).value_or(nan);
        const double lat = parse_number(cells[c_lat]).value_or(nan);
        const double lon = parse_number(cells[c_lon]).value_or(nan);
        if (!(value > 0.0) || !(std::fabs(lat) <= 90.0) || !(std::fabs(lon) <= 180.0)) {
            ++data.report.rows_dropped;
            continue;
        }
        HouseRecord r;
        r.id = cells[c_id];
        if (r.id.empty()) r.id = "row" + std::to_string(line_no);
        if (!ids.insert(r.id).second) throw DataError("duplicate id '" + r.id + "' in '" + path + "'");
        r.value = value;
        r.lat = lat;
        r.lon = lon;
        std::vector<std::optional<double>> fv(q);
        for (std::size_t j = 0; j < q; ++j) fv[j] = encode_feature(schema.features[j], cells[c_feat[j]], schema.reference_year);
        raw_features.push_back(std::move(fv));
        data.records.push_back(std::move(r));
    }
    if (data.records.empty()) throw DataError("no usable rows in '" + path + "'");

    for (std::size_t j = 0; j < q; ++j) {
        std::vector<double> present;
        for (const auto& fv : raw_features)
            if (fv[j]) present.push_back(*fv[j]);
        if (present.empty()) throw DataError("feature column '" + schema.features[j].column + "' has no usable values");
        std::sort(present.begin(), present.end());
        const std::size_t m = present.size();
        const double median = m % 2 ? present[m / 2] : 0.5 * (present[m / 2 - 1] + present[m / 2]);
        for (std::size_t i = 0; i < raw_features.size(); ++i) {
            if (!raw_features[i][j]) ++data.report.values_imputed;
            data.records[i].features.push_back(raw_features[i][j].value_or(median));
        }
    }
    return data;
}

CsvSchema plain_schema(const std::vector<std::string>& feature_names) {
    CsvSchema s;
    for (const auto& n : feature_names) s.features.push_back({n, FeatureSpec::Kind::numeric, n, {}});
    return s;
}

void write_houses_csv(const std::string& path, const Dataset& data, const CsvSchema& schema) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << quote(schema.id_column) << ',' << quote(schema.value_column) << ',' << quote(schema.lat_column) << ','
        << quote(schema.lon_column);
    for (const auto& n : data.feature_names) out << ',' << quote(n);
    out << '\n';
    for (const auto& r : data.records) {
        out << quote(r.id) << ',' << num(r.value) << ',' << num(r.lat) << ',' << num(r.lon);
        for (double f : r.features) out << ',' << num(f);
        out << '\n';
    }
    if (!out) throw IoError("failed writing '" + path + "'");
}

void project_dataset(Dataset& data, LatLon origin) {
    const auto coords = data.coordinates();
    data.projected_points = project_coordinates(coords, origin);
    data.origin = origin;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& rows) {
    Dataset out;
    out.feature_names = data.feature_names;
    out.origin = data.origin;
    const bool projected = data.projected_points.size() == data.records.size();
    for (std::size_t i : rows) {
        out.records.push_back(data.records[i]);
        if (projected) out.projected_points.push_back(data.projected_points[i]);
    }
    return out;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InputError("train fraction must lie in (0, 1)");
    const std::size_t n = data.size();
    if (n < 5) throw InputError("need at least 5 records to split");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    SplitMix64 rng(seed);
    shuffle(perm, rng);
    std::size_t n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(n) - 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    return {subset(data, train), subset(data, test)};
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& W) {
    Standardizer s;
    const double n = static_cast<double>(W.rows());
    for (Eigen::Index j = 0; j < W.cols(); ++j) {
        const double mean = W.col(j).mean();
        const double var = (W.col(j).array() - mean).square().sum() / n;
        s.mean.push_back(mean);
        s.scale.push_back(var > 0.0 ? std::sqrt(var) : 1.0);
    }
    return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& W) const {
    Eigen::MatrixXd out = W;
    for (Eigen::Index j = 0; j < W.cols(); ++j)
        out.col(j) = (W.col(j).array() - mean[static_cast<std::size_t>(j)]) / scale[static_cast<std::size_t>(j)];
    return out;
}

} // namespace hsfm
