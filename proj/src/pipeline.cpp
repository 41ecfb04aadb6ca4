#include "hsfm/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "hsfm/errors.hpp"
#include "hsfm/fem.hpp"
#include "hsfm/log.hpp"

namespace hsfm {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    int depth = 0;
    for (char c : s) {
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (c == sep && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    return out;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const std::string t = trim(v);
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(out))
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

long long to_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const std::string t = trim(v);
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc() || p != t.data() + t.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    const std::string l = lower(trim(v));
    if (l == "true" || l == "yes" || l == "on" || l == "1") return true;
    if (l == "false" || l == "no" || l == "off" || l == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

constexpr const char* kInterceptName = "(intercept)";

const std::map<std::string, std::string> kMethodLabels{
    {"lr", "LR"}, {"ssr_field_only", "SSR-field"}, {"ssr", "SSR"}, {"hsfm", "HSFM"}};

std::string method_label(const std::string& method, bool log_mode) {
    return kMethodLabels.at(method) + (log_mode ? "(log)" : "");
}

std::string method_dir(const std::string& method, bool log_mode) { return method + (log_mode ? "_log" : ""); }

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(name, e);
    }
}

// Files written by one run, relative to the output directory.
class ArtifactWriter {
  public:
    explicit ArtifactWriter(fs::path root) : root_(std::move(root)) {}

    fs::path path(const std::string& rel) {
        const fs::path p = root_ / rel;
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
        if (ec) throw IoError("cannot create '" + p.parent_path().string() + "': " + ec.message());
        files_.insert(rel);
        return p;
    }
    void text(const std::string& rel, const std::string& content) {
        std::ofstream out(path(rel), std::ios::binary);
        out << content;
        if (!out) throw IoError("cannot write '" + (root_ / rel).string() + "'");
    }
    void add_dir(const std::string& rel) {
        for (const auto& e : fs::recursive_directory_iterator(root_ / rel))
            if (e.is_regular_file()) files_.insert(fs::relative(e.path(), root_).generic_string());
    }
    const std::set<std::string>& files() const { return files_; }
    const fs::path& root() const { return root_; }

  private:
    fs::path root_;
    std::set<std::string> files_;
};

void write_manifest_for(const fs::path& root, const std::set<std::string>& files) {
    nlohmann::json j;
    j["files"] = nlohmann::json::array();
    for (const auto& rel : files) {
        const fs::path p = root / rel;
        j["files"].push_back({{"path", rel}, {"sha256", sha256_file(p.string())}, {"bytes", fs::file_size(p)}});
    }
    std::ofstream out(root / "manifest.json", std::ios::binary);
    out << j.dump(1) << '\n';
    if (!out) throw IoError("cannot write manifest.json");
}

} // namespace

std::vector<FeatureSpec> parse_feature_list(const std::string& text) {
    std::vector<FeatureSpec> out;
    if (trim(text).empty()) return out;
    for (const std::string& item : split(text, ',')) {
        if (item.empty()) throw ConfigError("data.features: empty feature entry");
        FeatureSpec f;
        const auto colon = item.find(':');
        f.column = trim(item.substr(0, colon));
        f.name = f.column;
        if (colon != std::string::npos) {
            std::string kind = trim(item.substr(colon + 1));
            std::string codes;
            if (const auto lp = kind.find('('); lp != std::string::npos) {
                if (kind.back() != ')') throw ConfigError("data.features: unbalanced parentheses in '" + item + "'");
                codes = kind.substr(lp + 1, kind.size() - lp - 2);
                kind = trim(kind.substr(0, lp));
            }
            kind = lower(kind);
            if (kind == "num" || kind == "numeric")
                f.kind = FeatureSpec::Kind::numeric;
            else if (kind == "bool" || kind == "boolean")
                f.kind = FeatureSpec::Kind::boolean;
            else if (kind == "age" || kind == "year")
                f.kind = FeatureSpec::Kind::age_from_year;
            else if (kind == "cat" || kind == "categorical")
                f.kind = FeatureSpec::Kind::categorical;
            else
                throw ConfigError("data.features: unknown kind '" + kind + "' for column '" + f.column + "'");
            for (const std::string& pair : split(codes, ';')) {
                if (pair.empty()) continue;
                const auto eq = pair.find('=');
                if (eq == std::string::npos) throw ConfigError("data.features: code '" + pair + "' lacks '='");
                f.encoding[trim(pair.substr(0, eq))] = to_double("data.features", pair.substr(eq + 1));
            }
            if (f.kind == FeatureSpec::Kind::categorical && f.encoding.empty())
                throw ConfigError("data.features: categorical column '" + f.column + "' needs codes, e.g. cat(a=0;b=1)");
        }
        if (f.column.empty()) throw ConfigError("data.features: empty column name");
        out.push_back(std::move(f));
    }
    return out;
}

HsfmConfig PipelineConfig::hsfm_config(double lambda_global, bool log_mode) const {
    HsfmConfig c;
    c.lambda_global = lambda_global;
    c.lambda_local = lambda_local;
    c.lambda_local_cv = lambda_local_cv;
    c.lambda_candidates = lambda_candidates;
    c.cv_folds = cv_folds;
    c.lambda_partition_surface = lambda_surface;
    c.dc_quantile = dc_quantile;
    c.J = clusters;
    c.alpha_penalty = alpha_penalty;
    c.samples_per_edge = samples_per_edge;
    c.contiguity_k = contiguity_k;
    c.target_is_log = log_mode;
    c.min_region_size = min_region_size;
    c.max_area = max_area;
    c.min_angle = min_angle;
    c.max_vertices = max_vertices;
    c.threads = threads;
    return c;
}

PipelineConfig parse_config(const std::string& text, const std::vector<std::string>& overrides, const std::string& base_dir) {
    pt::ptree tree;
    try {
        std::istringstream is(text);
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
    for (const std::string& o : overrides) {
        const auto eq = o.find('=');
        const std::string key = trim(o.substr(0, eq));
        if (eq == std::string::npos || key.find('.') == std::string::npos)
            throw ConfigError("override '" + o + "' must look like section.key=value");
        tree.put(pt::ptree::path_type(key, '.'), trim(o.substr(eq + 1)));
    }

    const std::map<std::string, std::set<std::string>> known{
        {"data",
         {"path", "id_column", "value_column", "lat_column", "lon_column", "features", "reference_year", "train_fraction", "seed"}},
        {"domain", {"geojson", "alpha", "max_area", "min_angle", "max_vertices"}},
        {"model", {"methods", "modes", "lambda", "lambda_candidates", "cv_folds", "lambda_local", "threads"}},
        {"partition",
         {"lambda_surface", "alpha_penalty", "samples_per_edge", "dc_quantile", "clusters", "contiguity_k", "min_region_size",
          "max_points"}},
        {"output", {"dir", "raster_cell", "rasters"}},
    };
    for (const auto& [section, sub] : tree) {
        const auto it = known.find(section);
        if (it == known.end()) throw ConfigError("unknown config section [" + section + "]");
        for (const auto& [key, value] : sub)
            if (!it->second.count(key)) throw ConfigError("unknown config key " + section + "." + key);
    }

    PipelineConfig c;
    const auto get = [&](const std::string& key) -> std::optional<std::string> {
        if (auto v = tree.get_optional<std::string>(pt::ptree::path_type(key, '.'))) return trim(*v);
        return std::nullopt;
    };
    const auto resolve = [&](const std::string& p) {
        if (p.empty() || base_dir.empty() || fs::path(p).is_absolute()) return p;
        return (fs::path(base_dir) / p).lexically_normal().string();
    };

    if (auto v = get("data.path")) c.data_path = resolve(*v);
    if (auto v = get("data.id_column")) c.schema.id_column = *v;
    if (auto v = get("data.value_column")) c.schema.value_column = *v;
    if (auto v = get("data.lat_column")) c.schema.lat_column = *v;
    if (auto v = get("data.lon_column")) c.schema.lon_column = *v;
    if (auto v = get("data.features")) c.schema.features = parse_feature_list(*v);
    if (auto v = get("data.reference_year")) c.schema.reference_year = static_cast<int>(to_int("data.reference_year", *v));
    if (auto v = get("data.train_fraction")) c.train_fraction = to_double("data.train_fraction", *v);
    if (auto v = get("data.seed")) c.seed = static_cast<std::uint64_t>(to_int("data.seed", *v));

    if (auto v = get("domain.geojson")) c.geojson_path = resolve(*v);
    if (auto v = get("domain.alpha")) c.alpha = to_double("domain.alpha", *v);
    if (auto v = get("domain.max_area")) c.max_area = to_double("domain.max_area", *v);
    if (auto v = get("domain.min_angle")) c.min_angle = to_double("domain.min_angle", *v);
    if (auto v = get("domain.max_vertices")) c.max_vertices = static_cast<std::size_t>(to_int("domain.max_vertices", *v));

    if (auto v = get("model.methods")) {
        c.methods.clear();
        for (const auto& m : split(*v, ',')) {
            if (!kMethodLabels.count(m)) throw ConfigError("model.methods: unknown method '" + m + "'");
            if (std::find(c.methods.begin(), c.methods.end(), m) == c.methods.end()) c.methods.push_back(m);
        }
    }
    if (auto v = get("model.modes")) {
        c.log_modes.clear();
        for (const auto& m : split(*v, ',')) {
            const std::string l = lower(m);
            bool is_log = false;
            if (l == "log")
                is_log = true;
            else if (l != "linear")
                throw ConfigError("model.modes: expected linear and/or log, got '" + m + "'");
            if (std::find(c.log_modes.begin(), c.log_modes.end(), is_log) == c.log_modes.end()) c.log_modes.push_back(is_log);
        }
    }
    if (auto v = get("model.lambda"); v && lower(*v) != "cv") c.lambda = to_double("model.lambda", *v);
    if (auto v = get("model.lambda_candidates")) {
        c.lambda_candidates.clear();
        for (const auto& s : split(*v, ',')) c.lambda_candidates.push_back(to_double("model.lambda_candidates", s));
    }
    if (auto v = get("model.cv_folds")) c.cv_folds = static_cast<int>(to_int("model.cv_folds", *v));
    if (auto v = get("model.lambda_local"); v && lower(*v) == "cv")
        c.lambda_local_cv = true;
    else if (v && lower(*v) != "same")
        c.lambda_local = to_double("model.lambda_local", *v);
    if (auto v = get("model.threads")) c.threads = static_cast<unsigned>(to_int("model.threads", *v));

    if (auto v = get("partition.lambda_surface")) c.lambda_surface = to_double("partition.lambda_surface", *v);
    if (auto v = get("partition.alpha_penalty")) c.alpha_penalty = to_double("partition.alpha_penalty", *v);
    if (auto v = get("partition.samples_per_edge")) c.samples_per_edge = static_cast<int>(to_int("partition.samples_per_edge", *v));
    if (auto v = get("partition.dc_quantile")) c.dc_quantile = to_double("partition.dc_quantile", *v);
    if (auto v = get("partition.clusters"); v && lower(*v) != "auto") c.clusters = static_cast<int>(to_int("partition.clusters", *v));
    if (auto v = get("partition.contiguity_k")) c.contiguity_k = static_cast<int>(to_int("partition.contiguity_k", *v));
    if (auto v = get("partition.min_region_size"))
        c.min_region_size = static_cast<std::size_t>(to_int("partition.min_region_size", *v));
    if (auto v = get("partition.max_points")) c.max_points = static_cast<std::size_t>(to_int("partition.max_points", *v));

    if (auto v = get("output.dir")) c.output_dir = resolve(*v);
    if (auto v = get("output.raster_cell")) c.raster_cell = to_double("output.raster_cell", *v);
    if (auto v = get("output.rasters")) c.write_rasters = to_bool("output.rasters", *v);

    // Range checks that do not need the data.
    if (c.data_path.empty()) throw ConfigError("data.path is required");
    if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("data.train_fraction must lie in (0, 1)");
    if (c.alpha < 0.0 || c.max_area < 0.0) throw ConfigError("domain.alpha and domain.max_area must be nonnegative");
    if (c.min_angle < 0.0 || c.min_angle > 33.0) throw ConfigError("domain.min_angle must lie in [0, 33]");
    if (c.methods.empty()) throw ConfigError("model.methods is empty");
    if (c.log_modes.empty()) throw ConfigError("model.modes is empty");
    if (c.lambda && !(*c.lambda > 0.0)) throw ConfigError("model.lambda must be positive");
    if (c.lambda_local && !(*c.lambda_local > 0.0)) throw ConfigError("model.lambda_local must be positive");
    if (c.lambda_candidates.empty()) throw ConfigError("model.lambda_candidates is empty");
    for (double l : c.lambda_candidates)
        if (!(l > 0.0)) throw ConfigError("model.lambda_candidates must be positive");
    if (c.cv_folds < 2) throw ConfigError("model.cv_folds must be at least 2");
    if (!(c.lambda_surface > 0.0)) throw ConfigError("partition.lambda_surface must be positive");
    if (c.alpha_penalty < 0.0) throw ConfigError("partition.alpha_penalty must be nonnegative");
    if (c.samples_per_edge < 2) throw ConfigError("partition.samples_per_edge must be at least 2");
    if (!(c.dc_quantile > 0.0 && c.dc_quantile <= 0.2)) throw ConfigError("partition.dc_quantile must lie in (0, 0.2]");
    if (c.clusters && *c.clusters < 1) throw ConfigError("partition.clusters must be positive or auto");
    if (c.contiguity_k < 1) throw ConfigError("partition.contiguity_k must be at least 1");
    if (c.raster_cell < 0.0) throw ConfigError("output.raster_cell must be nonnegative");
    return c;
}

PipelineConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), overrides, fs::absolute(path).parent_path().string());
}

PreparedData prepare_data(const PipelineConfig& config, bool do_split) {
    PreparedData out;
    out.all = stage("load", [&] { return load_houses_csv(config.data_path, config.schema); });
    if (out.all.report.rows_dropped > 0)
        warn(std::to_string(out.all.report.rows_dropped) + " rows dropped for missing or invalid value/coordinates");
    if (out.all.report.values_imputed > 0)
        warn(std::to_string(out.all.report.values_imputed) + " missing feature values imputed with column medians");

    stage("project", [&] {
        const auto coords = out.all.coordinates();
        project_dataset(out.all, centroid_origin(coords));
    });
    if (do_split) {
        std::tie(out.train, out.test) = stage("split", [&] { return train_test_split(out.all, config.train_fraction, config.seed); });
    } else {
        out.train = out.all;
    }

    out.domain = stage("domain", [&] {
        if (!config.geojson_path.empty()) {
            std::ifstream in(config.geojson_path);
            if (!in) throw IoError("cannot read '" + config.geojson_path + "'");
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(in);
            } catch (const nlohmann::json::exception& e) {
                throw IoError("'" + config.geojson_path + "' is not valid JSON: " + e.what());
            }
            return domain_from_geojson(j, out.all.origin);
        }
        const auto& pts = out.train.projected_points;
        const double alpha = config.alpha > 0.0 ? config.alpha : default_alpha(pts);
        InferredDomain d = infer_domain(pts, alpha);
        if (d.dropped_points > 0)
            warn(std::to_string(d.dropped_points) + " training points fall outside the inferred domain");
        return d.polygon;
    });

    stage("mesh", [&] {
        Triangulation t = mesh_for_points(out.domain, out.train.size(), config.max_area, config.min_angle, config.max_vertices);
        out.skinny_triangles = t.skinny_triangles;
        if (t.skinny_triangles > 0) warn(std::to_string(t.skinny_triangles) + " skinny boundary triangles left unrefined");
        out.mesh = std::make_shared<const TriangleMesh>(std::move(t.mesh));
    });

    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < out.train.size(); ++i)
        if (locate_point(*out.mesh, out.train.projected_points[i])) keep.push_back(i);
    out.dropped_train = out.train.size() - keep.size();
    if (out.dropped_train > 0) {
        warn(std::to_string(out.dropped_train) + " training points outside the mesh are left out of fitting");
        out.train = subset(out.train, keep);
    }
    if (out.train.size() < out.train.q() + 3) throw StageError("mesh", DataError("too few training points inside the domain"));
    return out;
}

namespace {

// Shared state for fitting the requested methods on one prepared training set.
struct FitContext {
    const PipelineConfig& config;
    const PreparedData& prep;
    ArtifactWriter& out;
    Standardizer stdz;
    Eigen::MatrixXd W_train;
    Eigen::MatrixXd Ws_train;
    SparseMatrix psi;
    double area = 0.0;
    double raster_cell = 0.0;
    std::ostringstream cv_csv;
    std::map<bool, double> ssr_lambda;
    bool partition_written = false;

    FitContext(const PipelineConfig& c, const PreparedData& p, ArtifactWriter& w) : config(c), prep(p), out(w) {
        W_train = prep.train.covariates();
        stdz = Standardizer::fit(W_train);
        Ws_train = stdz.apply(W_train);
        psi = stage("basis", [&] { return assemble_psi(*prep.mesh, prep.train.projected_points); });
        area = prep.mesh->area();
        raster_cell = config.raster_cell;
        if (raster_cell <= 0.0) {
            const auto [lo, hi] = prep.mesh->bounding_box();
            raster_cell = std::max(hi.x - lo.x, hi.y - lo.y) / 200.0;
        }
        cv_csv << "model,lambda,mean_mse\n";
    }

    Eigen::VectorXd target(bool log_mode) const {
        Eigen::VectorXd z = prep.train.values();
        if (log_mode) z = z.array().log().matrix();
        return z;
    }

    double choose_lambda(const std::string& method, bool log_mode, const Eigen::MatrixXd& W) {
        if (config.lambda) return *config.lambda;
        std::vector<double> scaled;
        for (double c : config.lambda_candidates) scaled.push_back(effective_lambda(c, area));
        const Eigen::VectorXd z = target(log_mode);
        const LambdaSelection sel = stage("cross-validation", [&] {
            return select_lambda(prep.mesh, psi, W, z, scaled, config.cv_folds, config.seed);
        });
        for (const auto& s : sel.table)
            cv_csv << method_label(method, log_mode) << ',' << num(s.lambda / area) << ',' << num(s.mean_mse) << '\n';
        return sel.lambda / area;
    }

    double global_lambda(bool log_mode) {
        if (auto it = ssr_lambda.find(log_mode); it != ssr_lambda.end()) return it->second;
        return ssr_lambda[log_mode] = choose_lambda("ssr", log_mode, Ws_train);
    }

    void raster(const SsrFit& fit, const std::string& name) {
        if (!config.write_rasters) return;
        const Raster r = evaluate_surface_grid(fit, raster_cell);
        const std::string base = "rasters/" + name;
        out.path(base + ".csv");
        out.path(base + ".pgm");
        out.path(base + ".meta.json");
        write_raster(r, (out.root() / base).string());
    }

    nlohmann::json fit_json(const SsrFit& fit) const {
        nlohmann::json j = to_json(fit);
        j["origin"] = {{"lat", prep.all.origin.lat}, {"lon", prep.all.origin.lon}};
        return j;
    }

    // Fits one method, writes its model directory and returns a predictor on the price scale.
    std::function<double(const HouseRecord&, Point2)> fit(const std::string& method, bool log_mode, double* lambda_used) {
        const std::string label = method_label(method, log_mode);
        const std::string dir = "models/" + method_dir(method, log_mode);
        const Eigen::VectorXd z = target(log_mode);
        const auto back = [log_mode](double v) { return log_mode ? std::exp(v) : v; };

        if (method == "lr") {
            const std::size_t q = prep.train.q();
            Eigen::MatrixXd W1(Ws_train.rows(), static_cast<Eigen::Index>(q + 1));
            W1 << Ws_train, Eigen::VectorXd::Ones(Ws_train.rows());
            SsrFit fit = stage("fit " + label, [&] { return fit_linear_baseline(W1, z); });
            fit.feature_names = prep.train.feature_names;
            fit.feature_names.push_back(kInterceptName);
            fit.feature_mean = stdz.mean;
            fit.feature_mean.push_back(0.0);
            fit.feature_scale = stdz.scale;
            fit.feature_scale.push_back(1.0);
            fit.target_is_log = log_mode;
            out.text(dir + "/fit.json", fit_json(fit).dump(1) + "\n");
            return [fit, back](const HouseRecord& r, Point2 p) {
                std::vector<double> w = r.features;
                w.push_back(1.0);
                return back(predict_ssr(fit, w, p).value);
            };
        }
        if (method == "ssr_field_only" || method == "ssr") {
            const bool field_only = method == "ssr_field_only";
            const double lambda =
                field_only ? choose_lambda(method, log_mode, Eigen::MatrixXd(Ws_train.rows(), 0)) : global_lambda(log_mode);
            if (lambda_used) *lambda_used = lambda;
            SsrFit fit = stage("fit " + label, [&] {
                return field_only ? fit_ssr_on(prep.mesh, prep.train.projected_points, Eigen::MatrixXd(W_train.rows(), 0), z, lambda)
                                  : fit_ssr_on(prep.mesh, prep.train.projected_points, W_train, z, lambda, &stdz);
            });
            fit.lambda = lambda;
            fit.target_is_log = log_mode;
            if (!field_only) fit.feature_names = prep.train.feature_names;
            out.text(dir + "/fit.json", fit_json(fit).dump(1) + "\n");
            raster(fit, method_dir(method, log_mode));
            return [fit, back, field_only](const HouseRecord& r, Point2 p) {
                return back(predict_ssr(fit, field_only ? std::span<const double>{} : std::span<const double>(r.features), p).value);
            };
        }
        // hsfm
        if (prep.train.size() > config.max_points)
            throw StageError("geo-partition", ConfigError("HSFM partitions at most " + std::to_string(config.max_points) +
                                                          " training points (dense distance matrix); subsample the data or "
                                                          "raise partition.max_points"));
        const double lambda = global_lambda(log_mode);
        if (lambda_used) *lambda_used = lambda;
        auto model = std::make_shared<HsfmModel>(
            stage("fit " + label, [&] { return fit_hsfm(prep.train, prep.domain, config.hsfm_config(lambda, log_mode)); }));
        std::vector<std::string> ids;
        for (const auto& r : prep.train.records) ids.push_back(r.id);
        save_hsfm(*model, (out.root() / dir).string(), ids);
        out.add_dir(dir);
        std::ostringstream cf;
        write_cfsfdp_csv(cf, model->cfsfdp);
        out.text(dir + "/cfsfdp.csv", cf.str());
        if (!partition_written) {
            std::ostringstream pc;
            write_partition_csv(pc, model->partition, ids);
            out.text("partition.csv", pc.str());
            out.text("cfsfdp.csv", cf.str());
            partition_written = true;
        }
        raster(model->global_fit, method_dir(method, log_mode) + "_global");
        return [model](const HouseRecord& r, Point2 p) { return predict_hsfm(*model, r.features, p).value; };
    }
};

void write_common(ArtifactWriter& out, const PreparedData& prep) {
    out.text("domain.geojson", domain_to_geojson(prep.domain, prep.all.origin).dump(1) + "\n");
    std::ostringstream os;
    write_mesh_text(os, *prep.mesh);
    out.text("mesh.txt", os.str());
}

} // namespace

PipelineResult run_pipeline(const PipelineConfig& config) {
    const PreparedData prep = prepare_data(config, true);
    const Dataset& test = prep.test;
    ArtifactWriter out(config.output_dir);
    FitContext ctx(config, prep, out);
    PipelineResult result;

    std::vector<double> truth;
    for (const auto& r : test.records) truth.push_back(r.value);
    std::vector<MetricsReport> reports;
    std::vector<std::string> pred_labels;
    std::vector<std::vector<double>> pred_columns;

    for (bool log_mode : config.log_modes) {
        for (const std::string& method : config.methods) {
            const std::string label = method_label(method, log_mode);
            double lambda = 0.0;
            const auto predictor = ctx.fit(method, log_mode, &lambda);
            if (method != "lr") result.lambdas[label] = lambda;
            std::vector<double> pred(test.size());
            for (std::size_t i = 0; i < test.size(); ++i) pred[i] = predictor(test.records[i], test.projected_points[i]);
            reports.push_back(stage("evaluate " + label, [&] { return compute_metrics(pred, truth, label); }));
            pred_labels.push_back(label);
            pred_columns.push_back(std::move(pred));
        }
    }

    std::vector<std::pair<std::string, std::string>> pairs;
    for (bool log_mode : config.log_modes) {
        const auto l = [&](const char* m) { return method_label(m, log_mode); };
        pairs.emplace_back(l("lr"), l("ssr"));
        pairs.emplace_back(l("ssr"), l("hsfm"));
        pairs.emplace_back(l("lr"), l("hsfm"));
    }
    result.table = compare_report(std::move(reports), pairs);

    out.text("metrics.csv", result.table.to_csv());
    out.text("metrics.txt", result.table.to_text());
    if (!config.lambda) out.text("lambda_cv.csv", ctx.cv_csv.str());
    {
        std::ostringstream os;
        os << "id,truth";
        for (const auto& l : pred_labels) os << ',' << l;
        os << '\n';
        for (std::size_t i = 0; i < test.size(); ++i) {
            os << test.records[i].id << ',' << num(test.records[i].value);
            for (const auto& c : pred_columns) os << ',' << num(c[i]);
            os << '\n';
        }
        out.text("predictions.csv", os.str());
    }
    write_common(out, prep);
    write_manifest_for(out.root(), out.files());
    result.artifacts.assign(out.files().begin(), out.files().end());
    result.artifacts.push_back("manifest.json");
    return result;
}

std::string fit_on_all(const PipelineConfig& config, const std::string& method, bool log_mode) {
    if (!kMethodLabels.count(method)) throw ConfigError("unknown method '" + method + "'");
    const PreparedData prep = prepare_data(config, false);
    ArtifactWriter out(config.output_dir);
    FitContext ctx(config, prep, out);
    ctx.fit(method, log_mode, nullptr);
    if (!config.lambda && method != "lr") out.text("lambda_cv.csv", ctx.cv_csv.str());
    write_common(out, prep);
    write_manifest_for(out.root(), out.files());
    return (out.root() / "models" / method_dir(method, log_mode)).string();
}

std::vector<double> predict_model_dir(const std::string& model_dir, const Dataset& data) {
    const fs::path dir(model_dir);
    std::vector<double> out(data.size());
    const auto project = [&](LatLon origin) {
        const auto coords = data.coordinates();
        return project_coordinates(coords, origin);
    };
    if (fs::exists(dir / "model.json")) {
        const HsfmModel model = load_hsfm(model_dir);
        if (model.global_fit.q() != data.q())
            throw InputError("model expects " + std::to_string(model.global_fit.q()) + " features, data has " + std::to_string(data.q()));
        const auto pts = project(model.origin);
        for (std::size_t i = 0; i < data.size(); ++i) out[i] = predict_hsfm(model, data.records[i].features, pts[i]).value;
        return out;
    }
    std::ifstream in(dir / "fit.json");
    if (!in) throw IoError("'" + model_dir + "' holds neither model.json nor fit.json");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("fit.json is not valid JSON: " + std::string(e.what()));
    }
    const SsrFit fit = ssr_fit_from_json(j);
    const bool intercept = !fit.feature_names.empty() && fit.feature_names.back() == kInterceptName;
    const std::size_t q = fit.q() - (intercept ? 1 : 0);
    if (q != 0 && q != data.q())
        throw InputError("model expects " + std::to_string(q) + " features, data has " + std::to_string(data.q()));
    LatLon origin{};
    if (j.contains("origin")) origin = {j["origin"].at("lat").get<double>(), j["origin"].at("lon").get<double>()};
    const auto pts = project(origin);
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::vector<double> w = q == 0 ? std::vector<double>{} : data.records[i].features;
        if (intercept) w.push_back(1.0);
        const double v = predict_ssr(fit, w, pts[i]).value;
        out[i] = fit.target_is_log ? std::exp(v) : v;
    }
    return out;
}

void write_raster(const Raster& r, const std::string& basename) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : r.values)
        if (!std::isnan(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const bool empty = !(lo <= hi);

    std::ofstream csv(basename + ".csv", std::ios::binary);
    for (std::size_t row = 0; row < r.height; ++row) {
        for (std::size_t col = 0; col < r.width; ++col) {
            if (col) csv << ',';
            if (!std::isnan(r.at(row, col))) csv << num(r.at(row, col));
        }
        csv << '\n';
    }
    if (!csv) throw IoError("cannot write '" + basename + ".csv'");

    std::ofstream pgm(basename + ".pgm", std::ios::binary);
    pgm << "P5\n" << r.width << ' ' << r.height << "\n255\n";
    for (double v : r.values) {
        unsigned char b = 0;
        if (!empty && !std::isnan(v) && hi > lo) b = static_cast<unsigned char>(std::lround(255.0 * (v - lo) / (hi - lo)));
        pgm.put(static_cast<char>(b));
    }
    if (!pgm) throw IoError("cannot write '" + basename + ".pgm'");

    nlohmann::json meta{{"origin", {r.origin.x, r.origin.y}},
                        {"cell_size", r.cell_size},
                        {"width", r.width},
                        {"height", r.height},
                        {"first_row", "south"},
                        {"empty", empty}};
    meta["min"] = empty ? nlohmann::json(nullptr) : nlohmann::json(lo);
    meta["max"] = empty ? nlohmann::json(nullptr) : nlohmann::json(hi);
    std::ofstream mj(basename + ".meta.json", std::ios::binary);
    mj << meta.dump(1) << '\n';
    if (!mj) throw IoError("cannot write '" + basename + ".meta.json'");
}

Raster read_raster(const std::string& basename) {
    std::ifstream mj(basename + ".meta.json");
    if (!mj) throw IoError("cannot read '" + basename + ".meta.json'");
    Raster r;
    try {
        const nlohmann::json meta = nlohmann::json::parse(mj);
        r.origin = {meta.at("origin").at(0).get<double>(), meta.at("origin").at(1).get<double>()};
        r.cell_size = meta.at("cell_size").get<double>();
        r.width = meta.at("width").get<std::size_t>();
        r.height = meta.at("height").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed raster metadata: " + std::string(e.what()));
    }
    std::ifstream csv(basename + ".csv");
    if (!csv) throw IoError("cannot read '" + basename + ".csv'");
    std::string line;
    while (std::getline(csv, line)) {
        std::size_t cols = 0;
        std::size_t start = 0;
        for (;;) {
            const auto comma = line.find(',', start);
            const std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
            r.values.push_back(cell.empty() ? std::numeric_limits<double>::quiet_NaN() : std::strtod(cell.c_str(), nullptr));
            ++cols;
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (cols != r.width) throw IoError("raster CSV row has " + std::to_string(cols) + " cells, expected " + std::to_string(r.width));
    }
    if (r.values.size() != r.width * r.height) throw IoError("raster CSV has the wrong number of rows");
    return r;
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path + "'");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

std::vector<std::string> write_manifest(const std::string& dir) {
    std::set<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) {
            const std::string rel = fs::relative(e.path(), dir).generic_string();
            if (rel != "manifest.json") files.insert(rel);
        }
    write_manifest_for(dir, files);
    return {files.begin(), files.end()};
}

} // namespace hsfm
