#ifndef HSFM_METRICS_HPP
#define HSFM_METRICS_HPP

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hsfm {

// Relative-error thresholds of the RAE CDF, in fixed column order.
inline constexpr std::array<double, 6> kRaeThresholds{0.01, 0.02, 0.03, 0.05, 0.10, 0.15};

// Accuracy on the original price scale.
struct MetricsReport {
    std::string method;
    double mse = 0.0;
    double rmse = 0.0;
    double mrae = 0.0;
    std::array<double, kRaeThresholds.size()> rae_cdf{};
    std::size_t n_test = 0;
    std::string scale_note = "original price scale";
};

MetricsReport compute_metrics(std::span<const double> predictions, std::span<const double> truths, std::string method = {});

// 100 * (baseline - candidate) / baseline.
double relative_improvement(double baseline, double candidate);

struct Improvement {
    std::string baseline;
    std::string candidate;
    double rmse_pct = 0.0;
    double mrae_pct = 0.0;
};

struct ComparisonTable {
    std::vector<MetricsReport> rows;
    std::vector<Improvement> improvements;

    std::string to_text() const;
    std::string to_csv() const;
};

// Improvements are listed for every requested (baseline, candidate) pair
// whose labels are both present.
ComparisonTable compare_report(std::vector<MetricsReport> methods,
                               std::span<const std::pair<std::string, std::string>> pairs = {});

} // namespace hsfm

#endif
