#include "hsfm/testkit.hpp"

#include <cmath>
#include <cstdio>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <nlohmann/json.hpp>

#include "hsfm/errors.hpp"
#include "hsfm/rng.hpp"

namespace hsfm {

double FieldSpec::operator()(Point2 p) const {
    double v = constant + gx * p.x + gy * p.y;
    for (const auto& b : bumps) {
        const double dx = p.x - b.center.x;
        const double dy = p.y - b.center.y;
        v += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius));
    }
    return v;
}

std::pair<Dataset, SyntheticTruth> gen_synthetic(const SyntheticSpec& spec) {
    if (spec.n < 50) throw InputError("synthetic spec needs n >= 50");
    if (!(spec.noise_sd >= 0.0)) throw InputError("noise stdev must be nonnegative");
    spec.domain.validate();
    const std::size_t q = spec.global_beta.size();
    for (const auto& r : spec.regions) {
        if (r.beta_offset.size() != q) throw InputError("region beta offset length differs from global beta");
        r.polygon.validate();
    }

    Point2 lo = spec.domain.outer.front(), hi = lo;
    for (const Point2& p : spec.domain.outer) {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }

    SplitMix64 rng(spec.seed);
    Dataset data;
    data.origin = spec.origin;
    for (std::size_t j = 0; j < q; ++j) data.feature_names.push_back("w" + std::to_string(j + 1));
    SyntheticTruth truth;
    const int width = static_cast<int>(std::to_string(spec.n).size());
    for (std::size_t i = 0; i < spec.n; ++i) {
        Point2 p;
        int misses = 0;
        for (;;) {
            p = {rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y)};
            if (spec.domain.contains(p)) break;
            if (++misses >= 10000) throw GeometryError("rejection sampling failed 10000 times in a row");
        }
        std::vector<double> w(q);
        for (auto& v : w) v = rng.normal();

        int label = 0;
        for (std::size_t r = 0; r < spec.regions.size(); ++r)
            if (spec.regions[r].polygon.contains(p)) {
                label = static_cast<int>(r) + 1;
                break;
            }
        double global = spec.global_field(p);
        for (std::size_t j = 0; j < q; ++j) global += spec.global_beta[j] * w[j];
        double local = 0.0;
        if (label > 0) {
            const auto& reg = spec.regions[static_cast<std::size_t>(label - 1)];
            local = reg.field(p);
            for (std::size_t j = 0; j < q; ++j) local += reg.beta_offset[j] * w[j];
        }
        const double clean = global + local;
        const double z = clean + spec.noise_sd * rng.normal();
        if (!(z > 0.0)) throw InputError("synthetic spec generated a non-positive value; raise the price scale");

        char id[32];
        std::snprintf(id, sizeof id, "s%0*zu", width, i + 1);
        const LatLon ll = unproject(p, spec.origin);
        data.records.push_back({id, z, std::move(w), ll.lat, ll.lon});
        data.projected_points.push_back(p);
        truth.labels.push_back(label);
        truth.noiseless.push_back(clean);
        truth.global_part.push_back(global);
        truth.local_part.push_back(local);
    }
    data.report.rows_read = spec.n;
    return {std::move(data), std::move(truth)};
}

namespace {

nlohmann::json field_json(const FieldSpec& f) {
    nlohmann::json j{{"constant", f.constant}, {"gx", f.gx}, {"gy", f.gy}, {"bumps", nlohmann::json::array()}};
    for (const auto& b : f.bumps)
        j["bumps"].push_back({{"x", b.center.x}, {"y", b.center.y}, {"amplitude", b.amplitude}, {"radius", b.radius}});
    return j;
}

nlohmann::json ring_json(const Ring& r) {
    nlohmann::json j = nlohmann::json::array();
    for (const Point2& p : r) j.push_back({p.x, p.y});
    return j;
}

} // namespace

nlohmann::json truth_to_json(const SyntheticSpec& spec, const SyntheticTruth& truth) {
    nlohmann::json j;
    j["n"] = spec.n;
    j["seed"] = spec.seed;
    j["noise_sd"] = spec.noise_sd;
    j["origin"] = {{"lat", spec.origin.lat}, {"lon", spec.origin.lon}};
    j["domain"] = ring_json(spec.domain.outer);
    j["global_field"] = field_json(spec.global_field);
    j["global_beta"] = spec.global_beta;
    j["regions"] = nlohmann::json::array();
    for (const auto& r : spec.regions)
        j["regions"].push_back({{"polygon", ring_json(r.polygon.outer)}, {"field", field_json(r.field)}, {"beta_offset", r.beta_offset}});
    j["labels"] = truth.labels;
    j["noiseless"] = truth.noiseless;
    return j;
}

SyntheticSpec two_region_step_spec(std::size_t n, std::uint64_t seed) {
    const auto rect = [](double x0, double y0, double x1, double y1) {
        DomainPolygon d;
        d.outer = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
        return d;
    };
    SyntheticSpec s;
    s.domain = rect(0, 0, 8000, 5000);
    s.global_field = {500.0, 0.005, 0.004, {{{2500, 3500}, 40.0, 800.0}}};
    s.global_beta = {40.0, 25.0, -15.0};
    SyntheticRegion west{rect(0, 0, 4000, 5000), {-60.0 - 0.004 * 2000.0, 0.004, 0.0, {}}, {25.0, -15.0, 0.0}};
    SyntheticRegion east{rect(4000, 0, 8000, 5000), {60.0 + 0.006 * 2500.0, 0.0, -0.006, {}}, {-25.0, 15.0, 10.0}};
    s.regions = {west, east};
    s.noise_sd = 25.0;
    s.n = n;
    s.seed = seed;
    return s;
}

#ifdef HSFM_WITH_TESTKIT

namespace {

Eigen::MatrixXd reduced_penalty(const SparseMatrix& mass, const SparseMatrix& laplacian) {
    const Eigen::MatrixXd R0(mass);
    const Eigen::MatrixXd L(laplacian);
    Eigen::LLT<Eigen::MatrixXd> llt(R0);
    if (llt.info() != Eigen::Success) throw ConditioningError("mass matrix is not positive definite");
    return L.transpose() * llt.solve(L);
}

} // namespace

OracleFit dense_oracle_fit(const SparseMatrix& psi, const Eigen::MatrixXd& W, const Eigen::VectorXd& z,
                           const SparseMatrix& mass, const SparseMatrix& laplacian, double lambda) {
    const Eigen::Index n = z.size();
    if (psi.rows() != n || W.rows() != n) throw InputError("psi, W and z must have the same number of rows");
    const Eigen::MatrixXd Psi(psi);
    const Eigen::Index q = W.cols();

    Eigen::MatrixXd QPsi = Psi;
    Eigen::VectorXd Qz = z;
    Eigen::FullPivLU<Eigen::MatrixXd> wtw_lu;
    if (q > 0) {
        wtw_lu.compute(W.transpose() * W);
        if (!wtw_lu.isInvertible()) throw ConditioningError("W'W is singular");
        QPsi -= W * wtw_lu.solve(W.transpose() * Psi);
        Qz -= W * wtw_lu.solve(W.transpose() * z);
    }
    Eigen::MatrixXd A = Psi.transpose() * QPsi;
    if (lambda > 0.0) A += lambda * reduced_penalty(mass, laplacian);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) throw ConditioningError("dense oracle system is singular");

    OracleFit out;
    out.field = lu.solve(Psi.transpose() * Qz);
    if (q > 0)
        out.beta = wtw_lu.solve(W.transpose() * (z - Psi * out.field));
    else
        out.beta.resize(0);
    return out;
}

double penalty_energy(const SparseMatrix& mass, const SparseMatrix& laplacian, const Eigen::VectorXd& f) {
    return f.dot(reduced_penalty(mass, laplacian) * f);
}

double fd_penalty_check(const SsrFit& fit, double cell) {
    if (!(cell > 0.0)) throw InputError("cell size must be positive");
    const Raster r = evaluate_surface_grid(fit, cell);
    double total = 0.0;
    std::size_t interior = 0;
    for (std::size_t row = 1; row + 1 < r.height; ++row)
        for (std::size_t col = 1; col + 1 < r.width; ++col) {
            const double c = r.at(row, col);
            const double e = r.at(row, col + 1), w = r.at(row, col - 1);
            const double nn = r.at(row + 1, col), s = r.at(row - 1, col);
            if (std::isnan(c) || std::isnan(e) || std::isnan(w) || std::isnan(nn) || std::isnan(s)) continue;
            const double lap = (e + w + nn + s - 4.0 * c) / (cell * cell);
            total += lap * lap * cell * cell;
            ++interior;
        }
    if (interior < 9) throw InputError("grid too coarse: fewer than 9 interior cells");
    return total;
}

#endif

} // namespace hsfm
