#ifndef HSFM_PARTITION_HPP
#define HSFM_PARTITION_HPP

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hsfm/geometry.hpp"
#include "hsfm/ssr.hpp"

namespace hsfm {

// Dense symmetric distance matrix, row-major.
struct PsdMatrix {
    std::size_t n = 0;
    std::vector<double> d;

    double operator()(std::size_t i, std::size_t j) const { return d[i * n + j]; }
};

struct PsdOptions {
    double alpha_penalty = 4.0;
    int samples_per_edge = 16;
    // Worker threads for the row loop; 0 = hardware concurrency.
    unsigned threads = 0;
};

// d(i,j) = |p_i - p_j| * (1 + alpha * V(i,j)). V sums |surface change|
// between consecutive inside samples of the segment (endpoints included),
// divided by the surface's vertex-value range, plus 1 per exit from the mesh.
PsdMatrix psd_matrix(std::span<const Point2> points, const SsrFit& surface, const PsdOptions& options = {});

// Plain Euclidean distances, same layout.
PsdMatrix euclidean_matrix(std::span<const Point2> points);

struct CfsfdpState {
    double dc = 0.0;
    std::vector<double> rho;
    std::vector<double> delta;
    std::vector<std::size_t> nearest_higher;
    std::vector<double> gamma;
};

struct Partition {
    std::vector<int> labels; // 1..J
    int J = 0;
    std::vector<std::size_t> centers; // centers[j - 1] carries label j
    std::vector<Point2> training_points;
};

// Density-peaks clustering. With J unset the centers are the points whose
// gamma exceeds mean + 3 stdev. The global density maximum is always a center.
std::pair<Partition, CfsfdpState> cfsfdp_cluster(const PsdMatrix& D, double dc_quantile, std::optional<int> J = std::nullopt);

// Union of each point's k nearest neighbours (Euclidean), as adjacency lists.
std::vector<std::vector<std::size_t>> knn_graph(std::span<const Point2> points, int k);

// Absorbs label fragments smaller than 5% of their label into the majority
// neighbouring label, repeating until nothing changes, then renumbers labels
// compactly. Sets training_points to points.
Partition enforce_contiguity(Partition partition, std::span<const Point2> points, int mutual_k);

// Label of the nearest training point (lowest index on ties).
int assign_region(const Partition& partition, Point2 p);

void write_partition_csv(std::ostream& os, const Partition& partition, std::span<const std::string> ids = {});
void write_cfsfdp_csv(std::ostream& os, const CfsfdpState& state);

} // namespace hsfm

#endif
