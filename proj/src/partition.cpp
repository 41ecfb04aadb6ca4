#include "hsfm/partition.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <thread>

#include "hsfm/errors.hpp"
#include "hsfm/log.hpp"

namespace hsfm {

namespace {

// Runs body(i) for i in [0, n) on up to `threads` workers.
template <class Body>
void parallel_rows(std::size_t n, unsigned threads, Body body) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
    std::atomic<std::size_t> next{0};
    const auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) body(i);
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
}

} // namespace

PsdMatrix euclidean_matrix(std::span<const Point2> points) {
    PsdMatrix m;
    m.n = points.size();
    m.d.assign(m.n * m.n, 0.0);
    for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t j = i + 1; j < m.n; ++j) m.d[i * m.n + j] = m.d[j * m.n + i] = distance(points[i], points[j]);
    return m;
}

PsdMatrix psd_matrix(std::span<const Point2> points, const SsrFit& surface, const PsdOptions& options) {
    if (!(options.alpha_penalty >= 0.0)) throw InputError("alpha_penalty must be nonnegative");
    if (options.samples_per_edge < 2) throw InputError("samples_per_edge must be at least 2");
    if (!surface.has_field()) throw InputError("PSD needs a fitted spatial surface");

    double range = 0.0;
    if (surface.field_coeffs.size() > 0) range = surface.field_coeffs.maxCoeff() - surface.field_coeffs.minCoeff();
    const bool flat = !(range > 0.0);
    if (flat) warn("PSD surface is constant; using plain Euclidean distances");
    if (flat || options.alpha_penalty == 0.0) return euclidean_matrix(points);

    const std::size_t n = points.size();
    const int m = options.samples_per_edge;
    std::vector<std::optional<double>> at_point(n);
    for (std::size_t i = 0; i < n; ++i) at_point[i] = field_value(surface, points[i]);

    PsdMatrix out;
    out.n = n;
    out.d.assign(n * n, 0.0);
    parallel_rows(n, options.threads, [&](std::size_t i) {
        std::vector<std::optional<double>> v(static_cast<std::size_t>(m));
        for (std::size_t j = i + 1; j < n; ++j) {
            const Point2 a = points[i], b = points[j];
            v.front() = at_point[i];
            v.back() = at_point[j];
            for (int k = 1; k + 1 < m; ++k) {
                const double t = static_cast<double>(k) / static_cast<double>(m - 1);
                v[static_cast<std::size_t>(k)] = field_value(surface, {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
            }
            double variation = 0.0;
            int exits = 0;
            for (std::size_t k = 0; k + 1 < v.size(); ++k) {
                if (v[k] && v[k + 1])
                    variation += std::fabs(*v[k + 1] - *v[k]);
                else if (v[k] && !v[k + 1])
                    ++exits;
            }
            const double V = variation / range + exits;
            out.d[i * n + j] = out.d[j * n + i] = distance(a, b) * (1.0 + options.alpha_penalty * V);
        }
    });
    return out;
}

std::pair<Partition, CfsfdpState> cfsfdp_cluster(const PsdMatrix& D, double dc_quantile, std::optional<int> J) {
    const std::size_t n = D.n;
    if (n < 3) throw InputError("clustering needs at least 3 points");
    if (!(dc_quantile > 0.0 && dc_quantile <= 0.2)) throw InputError("dc_quantile must lie in (0, 0.2]");
    if (J && (*J < 1 || static_cast<std::size_t>(*J) > n)) throw InputError("cluster count J must lie in [1, n]");

    CfsfdpState st;
    {
        std::vector<double> off;
        off.reserve(n * (n - 1) / 2);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off.push_back(D(i, j));
        const auto k = static_cast<std::size_t>(std::floor(dc_quantile * static_cast<double>(off.size() - 1)));
        std::nth_element(off.begin(), off.begin() + static_cast<std::ptrdiff_t>(k), off.end());
        st.dc = off[k];
        if (!(st.dc > 0.0)) {
            // Many coincident points: fall back to the smallest positive distance.
            double smallest = std::numeric_limits<double>::infinity();
            for (double v : off)
                if (v > 0.0) smallest = std::min(smallest, v);
            st.dc = std::isfinite(smallest) ? smallest : 1.0;
        }
    }

    st.rho.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) {
                const double r = D(i, j) / st.dc;
                st.rho[i] += std::exp(-r * r);
            }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return st.rho[a] > st.rho[b]; });

    st.delta.assign(n, 0.0);
    st.nearest_higher.assign(n, 0);
    const std::size_t top = order[0];
    st.nearest_higher[top] = top;
    for (std::size_t j = 0; j < n; ++j) st.delta[top] = std::max(st.delta[top], D(top, j));
    for (std::size_t r = 1; r < n; ++r) {
        const std::size_t i = order[r];
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = order[0];
        for (std::size_t s = 0; s < r; ++s) {
            const std::size_t j = order[s];
            const double d = D(i, j);
            if (d < best || (d == best && j < arg)) {
                best = d;
                arg = j;
            }
        }
        st.delta[i] = best;
        st.nearest_higher[i] = arg;
    }
    st.gamma.resize(n);
    for (std::size_t i = 0; i < n; ++i) st.gamma[i] = st.rho[i] * st.delta[i];

    std::vector<std::size_t> by_gamma(n);
    std::iota(by_gamma.begin(), by_gamma.end(), 0);
    std::stable_sort(by_gamma.begin(), by_gamma.end(), [&](std::size_t a, std::size_t b) { return st.gamma[a] > st.gamma[b]; });

    std::vector<std::size_t> centers;
    if (J) {
        centers.assign(by_gamma.begin(), by_gamma.begin() + *J);
    } else {
        const double mean = std::accumulate(st.gamma.begin(), st.gamma.end(), 0.0) / static_cast<double>(n);
        double var = 0.0;
        for (double g : st.gamma) var += (g - mean) * (g - mean);
        const double cut = mean + 3.0 * std::sqrt(var / static_cast<double>(n));
        for (std::size_t i : by_gamma)
            if (st.gamma[i] > cut) centers.push_back(i);
        if (centers.empty()) {
            warn("no point passed the automatic center rule; using a single cluster");
            centers.push_back(top);
        }
    }
    // Every nearest-higher chain ends at the density maximum, so it must lead a cluster.
    if (std::find(centers.begin(), centers.end(), top) == centers.end()) centers.back() = top;
    std::sort(centers.begin(), centers.end(), [&](std::size_t a, std::size_t b) {
        return st.gamma[a] > st.gamma[b] || (st.gamma[a] == st.gamma[b] && a < b);
    });

    Partition part;
    part.J = static_cast<int>(centers.size());
    part.centers = centers;
    part.labels.assign(n, 0);
    for (std::size_t c = 0; c < centers.size(); ++c) part.labels[centers[c]] = static_cast<int>(c) + 1;
    for (std::size_t i : order)
        if (part.labels[i] == 0) part.labels[i] = part.labels[st.nearest_higher[i]];
    return {std::move(part), std::move(st)};
}

std::vector<std::vector<std::size_t>> knn_graph(std::span<const Point2> points, int k) {
    if (k < 1) throw InputError("neighbour count must be at least 1");
    const std::size_t n = points.size();
    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n > 0 ? n - 1 : 0);
    std::vector<std::vector<std::size_t>> adj(n);
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) {
                const double dx = points[i].x - points[j].x, dy = points[i].y - points[j].y;
                cand.emplace_back(dx * dx + dy * dy, j);
            }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end());
        for (std::size_t r = 0; r < kk; ++r) {
            adj[i].push_back(cand[r].second);
            adj[cand[r].second].push_back(i);
        }
    }
    for (auto& a : adj) {
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
    }
    return adj;
}

Partition enforce_contiguity(Partition partition, std::span<const Point2> points, int mutual_k) {
    const std::size_t n = points.size();
    if (partition.labels.size() != n) throw InputError("partition and point counts differ");
    const auto adj = knn_graph(points, mutual_k);
    auto& labels = partition.labels;

    for (std::size_t pass = 0; pass <= n; ++pass) {
        std::map<int, std::size_t> label_size;
        for (int l : labels) ++label_size[l];
        std::vector<int> comp(n, -1);
        bool changed = false;
        for (std::size_t s = 0; s < n && !changed; ++s) {
            if (comp[s] >= 0) continue;
            std::vector<std::size_t> members{s};
            comp[s] = static_cast<int>(s);
            for (std::size_t h = 0; h < members.size(); ++h)
                for (std::size_t nb : adj[members[h]])
                    if (comp[nb] < 0 && labels[nb] == labels[s]) {
                        comp[nb] = static_cast<int>(s);
                        members.push_back(nb);
                    }
            if (static_cast<double>(members.size()) >= 0.05 * static_cast<double>(label_size[labels[s]])) continue;
            std::map<int, std::size_t> votes;
            for (std::size_t m : members)
                for (std::size_t nb : adj[m])
                    if (labels[nb] != labels[s]) ++votes[labels[nb]];
            if (votes.empty()) continue;
            int best = votes.begin()->first;
            for (const auto& [l, c] : votes)
                if (c > votes[best]) best = l;
            for (std::size_t m : members) labels[m] = best;
            changed = true;
        }
        if (!changed) break;
    }

    std::map<int, int> renumber;
    for (int l : labels) renumber.emplace(l, 0);
    int next = 0;
    for (auto& [l, v] : renumber) v = ++next;
    std::vector<std::size_t> centers(static_cast<std::size_t>(next), n);
    for (std::size_t c = 0; c < partition.centers.size(); ++c) {
        const std::size_t idx = partition.centers[c];
        if (idx < n && labels[idx] == static_cast<int>(c) + 1) centers[static_cast<std::size_t>(renumber[labels[idx]] - 1)] = idx;
    }
    for (auto& l : labels) l = renumber[l];
    for (std::size_t i = 0; i < n; ++i)
        if (centers[static_cast<std::size_t>(labels[i] - 1)] == n) centers[static_cast<std::size_t>(labels[i] - 1)] = i;
    partition.J = next;
    partition.centers = std::move(centers);
    partition.training_points.assign(points.begin(), points.end());
    return partition;
}

int assign_region(const Partition& partition, Point2 p) {
    if (partition.training_points.empty()) throw InputError("partition has no training points");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < partition.training_points.size(); ++i) {
        const double dx = partition.training_points[i].x - p.x, dy = partition.training_points[i].y - p.y;
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return partition.labels[best];
}

void write_partition_csv(std::ostream& os, const Partition& partition, std::span<const std::string> ids) {
    os << "point_id,label\n";
    for (std::size_t i = 0; i < partition.labels.size(); ++i) {
        if (i < ids.size())
            os << ids[i];
        else
            os << i;
        os << ',' << partition.labels[i] << '\n';
    }
}

void write_cfsfdp_csv(std::ostream& os, const CfsfdpState& state) {
    const auto old = os.precision(17);
    os << "index,rho,delta,gamma,nearest_higher\n";
    for (std::size_t i = 0; i < state.rho.size(); ++i)
        os << i << ',' << state.rho[i] << ',' << state.delta[i] << ',' << state.gamma[i] << ',' << state.nearest_higher[i] << '\n';
    os.precision(old);
}

} // namespace hsfm
