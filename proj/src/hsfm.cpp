#include "hsfm/hsfm.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hsfm/errors.hpp"
#include "hsfm/fem.hpp"
#include "hsfm/log.hpp"

namespace hsfm {

namespace {

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

Eigen::MatrixXd select(const Eigen::MatrixXd& W, const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), W.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = W.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

Eigen::VectorXd select(const Eigen::VectorXd& v, const std::vector<std::size_t>& rows) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[static_cast<Eigen::Index>(rows[i])];
    return out;
}

SsrFit zero_fit_like(const Standardizer& s, const std::vector<std::string>& names, bool is_log) {
    SsrFit f = zero_fit(names.size());
    f.feature_names = names;
    f.feature_mean = s.mean;
    f.feature_scale = s.scale;
    f.target_is_log = is_log;
    return f;
}

} // namespace

double effective_lambda(double lambda, double area) { return lambda * area; }

Triangulation mesh_for_points(const DomainPolygon& domain, std::size_t n, double max_area, double min_angle,
                              std::size_t max_vertices) {
    TriangulateOptions opts;
    // Refinement leaves most triangles well below max_area, so roughly one
    // vertex per max_area of domain results.
    opts.max_area = max_area > 0.0 ? max_area : domain.area() * kPointsPerVertex / static_cast<double>(std::max<std::size_t>(n, 1));
    opts.min_angle = min_angle;
    opts.max_vertices = max_vertices;
    return triangulate(domain, opts);
}

SsrFit fit_ssr_on(std::shared_ptr<const TriangleMesh> mesh, std::span<const Point2> points, const Eigen::MatrixXd& W_raw,
                  const Eigen::VectorXd& z, double lambda, const Standardizer* standardizer) {
    const Standardizer own = standardizer ? Standardizer{} : Standardizer::fit(W_raw);
    const Standardizer& s = standardizer ? *standardizer : own;
    const SparseMatrix psi = assemble_psi(*mesh, points);
    const double area = mesh->area();
    SsrFit fit = fit_ssr(std::move(mesh), psi, s.apply(W_raw), z, effective_lambda(lambda, area));
    fit.feature_mean = s.mean;
    fit.feature_scale = s.scale;
    return fit;
}

nlohmann::json to_json(const HsfmConfig& c) {
    nlohmann::json j;
    j["lambda_global"] = c.lambda_global;
    j["lambda_local"] = c.lambda_local ? nlohmann::json(*c.lambda_local) : nlohmann::json(nullptr);
    j["lambda_local_cv"] = c.lambda_local_cv;
    j["lambda_candidates"] = c.lambda_candidates;
    j["cv_folds"] = c.cv_folds;
    j["lambda_partition_surface"] = c.lambda_partition_surface;
    j["dc_quantile"] = c.dc_quantile;
    j["J"] = c.J ? nlohmann::json(*c.J) : nlohmann::json(nullptr);
    j["alpha_penalty"] = c.alpha_penalty;
    j["samples_per_edge"] = c.samples_per_edge;
    j["contiguity_k"] = c.contiguity_k;
    j["target_is_log"] = c.target_is_log;
    j["min_region_size"] = c.min_region_size;
    j["max_area"] = c.max_area;
    j["min_angle"] = c.min_angle;
    j["max_vertices"] = c.max_vertices;
    j["local_alpha"] = c.local_alpha;
    return j;
}

HsfmConfig hsfm_config_from_json(const nlohmann::json& j) {
    HsfmConfig c;
    try {
        c.lambda_global = j.at("lambda_global").get<double>();
        if (!j.at("lambda_local").is_null()) c.lambda_local = j.at("lambda_local").get<double>();
        c.lambda_local_cv = j.value("lambda_local_cv", false);
        c.lambda_candidates = j.value("lambda_candidates", c.lambda_candidates);
        c.cv_folds = j.value("cv_folds", c.cv_folds);
        c.lambda_partition_surface = j.at("lambda_partition_surface").get<double>();
        c.dc_quantile = j.at("dc_quantile").get<double>();
        if (!j.at("J").is_null()) c.J = j.at("J").get<int>();
        c.alpha_penalty = j.at("alpha_penalty").get<double>();
        c.samples_per_edge = j.at("samples_per_edge").get<int>();
        c.contiguity_k = j.at("contiguity_k").get<int>();
        c.target_is_log = j.at("target_is_log").get<bool>();
        c.min_region_size = j.at("min_region_size").get<std::size_t>();
        c.max_area = j.at("max_area").get<double>();
        c.min_angle = j.at("min_angle").get<double>();
        c.max_vertices = j.at("max_vertices").get<std::size_t>();
        c.local_alpha = j.at("local_alpha").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed HSFM config JSON: ") + e.what());
    }
    return c;
}

Eigen::VectorXd compute_residuals(const SsrFit& fit, const Eigen::MatrixXd& W_raw, const Eigen::VectorXd& z,
                                  std::span<const Point2> points) {
    const auto n = static_cast<std::size_t>(z.size());
    if (static_cast<std::size_t>(W_raw.rows()) != n || points.size() != n)
        throw InputError("residuals: W, z and points must have the same length");
    if (static_cast<std::size_t>(W_raw.cols()) != fit.q()) throw InputError("residuals: W has the wrong number of columns");
    Eigen::VectorXd r(z.size());
    std::vector<double> w(fit.q());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < w.size(); ++j) w[j] = W_raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        r[static_cast<Eigen::Index>(i)] = z[static_cast<Eigen::Index>(i)] - predict_ssr(fit, w, points[i]).value;
    }
    return r;
}

HsfmModel fit_hsfm(const Dataset& train, const DomainPolygon& domain, const HsfmConfig& config) {
    const std::size_t n = train.size();
    const std::size_t q = train.q();
    if (train.projected_points.size() != n) throw InputError("training data must be projected before fitting");
    if (!(config.lambda_global > 0.0) || !(config.lambda_partition_surface > 0.0) ||
        (config.lambda_local && !(*config.lambda_local > 0.0)))
        throw InputError("all lambdas must be positive");
    const std::size_t min_region = config.min_region_size > 0 ? config.min_region_size : std::max<std::size_t>(30, 3 * q);
    if (min_region < q + 3) throw InputError("min_region_size must be at least q + 3");

    const std::span<const Point2> pts(train.projected_points);
    const Eigen::MatrixXd W = train.covariates();
    Eigen::VectorXd z = train.values();
    if (config.target_is_log) z = z.array().log().matrix();
    const Standardizer stdz = Standardizer::fit(W);

    HsfmModel model;
    model.config = config;
    model.origin = train.origin;

    const auto mesh = stage("global mesh", [&] {
        return std::make_shared<const TriangleMesh>(
            mesh_for_points(domain, n, config.max_area, config.min_angle, config.max_vertices).mesh);
    });
    model.global_fit = stage("global fit", [&] { return fit_ssr_on(mesh, pts, W, z, config.lambda_global, &stdz); });
    model.global_fit.feature_names = train.feature_names;
    model.global_fit.target_is_log = config.target_is_log;

    const Eigen::VectorXd r = stage("residuals", [&] { return compute_residuals(model.global_fit, W, z, pts); });
    model.mean_residual = r.mean();

    stage("geo-partition", [&] {
        const SsrFit surface = fit_ssr_on(mesh, pts, Eigen::MatrixXd(static_cast<Eigen::Index>(n), 0), z,
                                          config.lambda_partition_surface);
        PsdOptions popt;
        popt.alpha_penalty = config.alpha_penalty;
        popt.samples_per_edge = config.samples_per_edge;
        popt.threads = config.threads;
        const PsdMatrix D = psd_matrix(pts, surface, popt);
        auto [part, state] = cfsfdp_cluster(D, config.dc_quantile, config.J);
        model.partition = enforce_contiguity(std::move(part), pts, config.contiguity_k);
        model.cfsfdp = std::move(state);
    });

    const double lambda_local = config.lambda_local.value_or(config.lambda_global);
    const auto J = static_cast<std::size_t>(model.partition.J);
    std::vector<std::vector<std::size_t>> members(J);
    for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(model.partition.labels[i] - 1)].push_back(i);
    for (const auto& m : members) model.region_sizes.push_back(m.size());

    const auto fit_region = [&](std::size_t j) -> SsrFit {
        const auto& idx = members[j];
        const std::string name = "local fit " + std::to_string(j + 1);
        if (idx.size() < min_region) {
            warn("region " + std::to_string(j + 1) + " has " + std::to_string(idx.size()) +
                 " points, below the minimum region size; its local term is zero");
            return zero_fit_like(stdz, train.feature_names, config.target_is_log);
        }
        return stage(name, [&] {
            std::vector<Point2> rp;
            for (std::size_t i : idx) rp.push_back(pts[i]);
            const double alpha = config.local_alpha > 0.0 ? config.local_alpha : default_alpha(rp);
            const InferredDomain sub = infer_domain(rp, alpha);
            auto local_mesh = std::make_shared<const TriangleMesh>(
                mesh_for_points(sub.polygon, idx.size(), 0.0, config.min_angle, config.max_vertices).mesh);
            std::vector<std::size_t> inside;
            for (std::size_t i : idx)
                if (locate_point(*local_mesh, pts[i])) inside.push_back(i);
            if (inside.size() < min_region) {
                warn("region " + std::to_string(j + 1) + " keeps too few points inside its sub-domain; its local term is zero");
                return zero_fit_like(stdz, train.feature_names, config.target_is_log);
            }
            std::vector<Point2> ip;
            for (std::size_t i : inside) ip.push_back(pts[i]);
            const Eigen::MatrixXd Wl = select(W, inside);
            const Eigen::VectorXd rl = select(r, inside);
            SsrFit f;
            if (config.lambda_local_cv) {
                const SparseMatrix psi = assemble_psi(*local_mesh, ip);
                const Eigen::MatrixXd Ws = stdz.apply(Wl);
                std::vector<double> scaled;
                for (double c : config.lambda_candidates) scaled.push_back(effective_lambda(c, local_mesh->area()));
                const double chosen = select_lambda(local_mesh, psi, Ws, rl, scaled, config.cv_folds).lambda;
                f = fit_ssr(local_mesh, psi, Ws, rl, chosen);
                f.feature_mean = stdz.mean;
                f.feature_scale = stdz.scale;
            } else {
                f = fit_ssr_on(local_mesh, ip, Wl, rl, lambda_local, &stdz);
            }
            f.feature_names = train.feature_names;
            f.target_is_log = config.target_is_log;
            return f;
        });
    };

    // Local fits are independent; collect them in region order.
    std::vector<std::future<SsrFit>> pending;
    for (std::size_t j = 0; j < J; ++j) pending.push_back(std::async(std::launch::async, fit_region, j));
    for (auto& f : pending) model.local_fits.push_back(f.get());
    return model;
}

HsfmPrediction predict_hsfm(const HsfmModel& model, std::span<const double> w, Point2 p) {
    if (w.size() != model.global_fit.q())
        throw InputError("covariate vector has length " + std::to_string(w.size()) + ", expected " +
                         std::to_string(model.global_fit.q()));
    HsfmPrediction out;
    const SsrPrediction g = predict_ssr(model.global_fit, w, p);
    out.global = g.value;
    out.region = assign_region(model.partition, p);
    const SsrPrediction l = predict_ssr(model.local_fits.at(static_cast<std::size_t>(out.region - 1)), w, p);
    out.local = l.value;
    out.extrapolated = g.extrapolated || l.extrapolated;
    const double total = out.global + out.local;
    out.value = model.config.target_is_log ? std::exp(total) : total;
    return out;
}

void save_hsfm(const HsfmModel& model, const std::string& dir, std::span<const std::string> ids) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());

    nlohmann::json j;
    j["config"] = to_json(model.config);
    j["origin"] = {{"lat", model.origin.lat}, {"lon", model.origin.lon}};
    j["global_fit"] = to_json(model.global_fit);
    j["J"] = model.partition.J;
    j["centers"] = model.partition.centers;
    j["mean_residual"] = model.mean_residual;
    j["region_sizes"] = model.region_sizes;
    nlohmann::json tp = nlohmann::json::array();
    for (const Point2& p : model.partition.training_points) tp.push_back({p.x, p.y});
    j["training_points"] = std::move(tp);

    const auto write = [&](const fs::path& path, const std::string& text) {
        std::ofstream out(path, std::ios::binary);
        out << text;
        if (!out) throw IoError("cannot write '" + path.string() + "'");
    };
    write(fs::path(dir) / "model.json", j.dump(1) + "\n");
    std::ostringstream part;
    write_partition_csv(part, model.partition, ids);
    write(fs::path(dir) / "partition.csv", part.str());
    for (std::size_t k = 0; k < model.local_fits.size(); ++k)
        write(fs::path(dir) / ("local_" + std::to_string(k + 1) + ".json"), to_json(model.local_fits[k]).dump(1) + "\n");
}

HsfmModel load_hsfm(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto read_json = [](const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot read '" + path.string() + "'");
        try {
            return nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
        }
    };
    const nlohmann::json j = read_json(fs::path(dir) / "model.json");
    HsfmModel m;
    try {
        m.config = hsfm_config_from_json(j.at("config"));
        m.origin = {j.at("origin").at("lat").get<double>(), j.at("origin").at("lon").get<double>()};
        m.global_fit = ssr_fit_from_json(j.at("global_fit"));
        m.partition.J = j.at("J").get<int>();
        m.partition.centers = j.at("centers").get<std::vector<std::size_t>>();
        m.mean_residual = j.at("mean_residual").get<double>();
        m.region_sizes = j.at("region_sizes").get<std::vector<std::size_t>>();
        for (const auto& p : j.at("training_points")) m.partition.training_points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed model.json: ") + e.what());
    }

    std::ifstream part(fs::path(dir) / "partition.csv");
    if (!part) throw IoError("cannot read partition.csv in '" + dir + "'");
    std::string line;
    std::getline(part, line);
    while (std::getline(part, line)) {
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw IoError("malformed partition.csv line: " + line);
        int label = 0;
        try {
            label = std::stoi(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw IoError("malformed partition.csv line: " + line);
        }
        if (label < 1 || label > m.partition.J) throw IoError("partition.csv label out of range: " + line);
        m.partition.labels.push_back(label);
    }
    if (m.partition.labels.size() != m.partition.training_points.size())
        throw IoError("partition.csv and model.json disagree on the number of training points");
    for (int k = 1; k <= m.partition.J; ++k)
        m.local_fits.push_back(ssr_fit_from_json(read_json(fs::path(dir) / ("local_" + std::to_string(k) + ".json"))));
    return m;
}

} // namespace hsfm
