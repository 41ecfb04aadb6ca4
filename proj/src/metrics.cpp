#include "hsfm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "hsfm/errors.hpp"

namespace hsfm {

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string pct_label(double t) { return fmt("%g", 100.0 * t) + "%"; }

} // namespace

MetricsReport compute_metrics(std::span<const double> predictions, std::span<const double> truths, std::string method) {
    if (predictions.size() != truths.size()) throw InputError("predictions and truths differ in length");
    if (truths.empty()) throw InputError("no test points to score");
    MetricsReport r;
    r.method = std::move(method);
    r.n_test = truths.size();
    std::array<std::size_t, kRaeThresholds.size()> below{};
    double se = 0.0, rae = 0.0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        if (!(truths[i] > 0.0)) throw InputError("truth " + std::to_string(i) + " is not strictly positive");
        const double err = predictions[i] - truths[i];
        const double rel = std::fabs(err) / truths[i];
        se += err * err;
        rae += rel;
        for (std::size_t k = 0; k < kRaeThresholds.size(); ++k)
            if (rel < kRaeThresholds[k]) ++below[k];
    }
    const double n = static_cast<double>(truths.size());
    r.mse = se / n;
    r.rmse = std::sqrt(r.mse);
    r.mrae = rae / n;
    for (std::size_t k = 0; k < below.size(); ++k) r.rae_cdf[k] = static_cast<double>(below[k]) / n;
    return r;
}

double relative_improvement(double baseline, double candidate) { return 100.0 * (baseline - candidate) / baseline; }

ComparisonTable compare_report(std::vector<MetricsReport> methods, std::span<const std::pair<std::string, std::string>> pairs) {
    if (methods.empty()) throw InputError("no methods to compare");
    std::set<std::string> seen;
    for (const auto& m : methods)
        if (!seen.insert(m.method).second) throw InputError("duplicate method label '" + m.method + "'");
    ComparisonTable table;
    table.rows = std::move(methods);
    const auto find = [&](const std::string& label) -> const MetricsReport* {
        for (const auto& m : table.rows)
            if (m.method == label) return &m;
        return nullptr;
    };
    for (const auto& [base, cand] : pairs) {
        const auto* b = find(base);
        const auto* c = find(cand);
        if (!b || !c || b == c) continue;
        table.improvements.push_back({base, cand, relative_improvement(b->rmse, c->rmse), relative_improvement(b->mrae, c->mrae)});
    }
    return table;
}

std::string ComparisonTable::to_csv() const {
    std::ostringstream os;
    os << "method,n_test,mse,rmse,mrae";
    for (double t : kRaeThresholds) os << ",cdf_lt_" << fmt("%g", 100.0 * t);
    os << '\n';
    for (const auto& r : rows) {
        os << r.method << ',' << r.n_test << ',' << fmt("%.10g", r.mse) << ',' << fmt("%.10g", r.rmse) << ','
           << fmt("%.10g", r.mrae);
        for (double c : r.rae_cdf) os << ',' << fmt("%.6f", c);
        os << '\n';
    }
    if (!improvements.empty()) {
        os << "\nbaseline,candidate,rmse_improvement_pct,mrae_improvement_pct\n";
        for (const auto& i : improvements)
            os << i.baseline << ',' << i.candidate << ',' << fmt("%.2f", i.rmse_pct) << ',' << fmt("%.2f", i.mrae_pct) << '\n';
    }
    return os.str();
}

std::string ComparisonTable::to_text() const {
    std::size_t w = 6;
    for (const auto& r : rows) w = std::max(w, r.method.size());
    std::ostringstream os;
    const auto pad = [](std::string s, std::size_t n) {
        if (s.size() < n) s.insert(0, n - s.size(), ' ');
        return s;
    };
    os << pad("method", w) << pad("n", 7) << pad("MSE", 16) << pad("RMSE", 14) << pad("MRAE", 10) << '\n';
    for (const auto& r : rows)
        os << pad(r.method, w) << pad(std::to_string(r.n_test), 7) << pad(fmt("%.6g", r.mse), 16) << pad(fmt("%.6g", r.rmse), 14)
           << pad(fmt("%.4f", r.mrae), 10) << '\n';
    os << "\nCDF of relative absolute errors (" << (rows.empty() ? "" : rows.front().scale_note) << ")\n";
    os << pad("method", w);
    for (double t : kRaeThresholds) os << pad("< " + pct_label(t), 8);
    os << '\n';
    for (const auto& r : rows) {
        os << pad(r.method, w);
        for (double c : r.rae_cdf) os << pad(fmt("%.2f", c), 8);
        os << '\n';
    }
    if (!improvements.empty()) {
        os << "\nrelative improvement (%)\n";
        for (const auto& i : improvements)
            os << "  " << i.candidate << " vs " << i.baseline << ": RMSE " << fmt("%.2f", i.rmse_pct) << ", MRAE "
               << fmt("%.2f", i.mrae_pct) << '\n';
    }
    return os.str();
}

} // namespace hsfm
