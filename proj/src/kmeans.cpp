#include "pkeval/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "pkeval/rng.hpp"

namespace pkeval {

namespace {

constexpr int kRestarts = 8;

struct RunResult {
    std::vector<int> labels;
    std::vector<std::vector<double>> centroids;
    double inertia = std::numeric_limits<double>::infinity();
    std::vector<double> history;
};

std::vector<std::vector<double>> kmeans_pp_init(const std::vector<std::vector<double>>& points,
                                                int n, DetRng& rng) {
    const size_t count = points.size();
    std::vector<std::vector<double>> centers;
    centers.reserve(static_cast<size_t>(n));
    std::vector<bool> chosen(count, false);
    std::vector<double> min_d2(count, std::numeric_limits<double>::infinity());

    size_t first = static_cast<size_t>(rng.bounded(count));
    centers.push_back(points[first]);
    chosen[first] = true;

    while (centers.size() < static_cast<size_t>(n)) {
        double total = 0.0;
        for (size_t i = 0; i < count; ++i) {
            min_d2[i] = std::min(min_d2[i], squared_distance(points[i], centers.back()));
            total += min_d2[i];
        }
        size_t next;
        if (total <= 0.0) {
            // All remaining mass is on duplicates of existing centers; pick
            // uniformly among not-yet-chosen points so n distinct clusters
            // still get seeded.
            std::vector<size_t> unchosen;
            for (size_t i = 0; i < count; ++i) {
                if (!chosen[i]) unchosen.push_back(i);
            }
            next = unchosen[rng.pick_index(unchosen)];
        } else {
            double r = rng.uniform_real() * total;
            next = count - 1;
            double acc = 0.0;
            for (size_t i = 0; i < count; ++i) {
                acc += min_d2[i];
                if (r < acc) {
                    next = i;
                    break;
                }
            }
        }
        centers.push_back(points[next]);
        chosen[next] = true;
    }
    return centers;
}

void assign_points(const std::vector<std::vector<double>>& points,
                   const std::vector<std::vector<double>>& centers,
                   std::vector<int>& labels, std::vector<double>& dists) {
    for (size_t i = 0; i < points.size(); ++i) {
        int best = 0;
        double best_d = squared_distance(points[i], centers[0]);
        for (size_t c = 1; c < centers.size(); ++c) {
            double d = squared_distance(points[i], centers[c]);
            if (d < best_d) {  // ties keep the lowest cluster index
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        labels[i] = best;
        dists[i] = best_d;
    }
}

/// Fixes empty clusters by moving the globally farthest point out of a
/// multi-point cluster; the empty cluster's center becomes that point.
void repair_empty_clusters(const std::vector<std::vector<double>>& points, int n,
                           std::vector<int>& labels, std::vector<double>& dists,
                           std::vector<size_t>& sizes,
                           std::vector<std::vector<double>>& centers) {
    std::fill(sizes.begin(), sizes.end(), 0);
    for (int l : labels) sizes[static_cast<size_t>(l)]++;
    for (int empty = 0; empty < n; ++empty) {
        if (sizes[static_cast<size_t>(empty)] != 0) continue;
        size_t farthest = 0;
        double far_d = -1.0;
        for (size_t i = 0; i < points.size(); ++i) {
            if (sizes[static_cast<size_t>(labels[i])] <= 1) continue;
            if (dists[i] > far_d) {
                far_d = dists[i];
                farthest = i;
            }
        }
        sizes[static_cast<size_t>(labels[farthest])]--;
        labels[farthest] = empty;
        sizes[static_cast<size_t>(empty)] = 1;
        centers[static_cast<size_t>(empty)] = points[farthest];
        dists[farthest] = 0.0;
    }
}

RunResult run_once(const std::vector<std::vector<double>>& points, int n,
                   const ClusterConfig& cfg, DetRng& rng) {
    const size_t count = points.size();
    const size_t dim = points[0].size();
    RunResult run;
    auto centers = kmeans_pp_init(points, n, rng);
    std::vector<int> labels(count, 0);
    std::vector<double> dists(count, 0.0);
    std::vector<size_t> sizes(static_cast<size_t>(n), 0);

    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        assign_points(points, centers, labels, dists);
        repair_empty_clusters(points, n, labels, dists, sizes, centers);

        double inertia = 0.0;
        for (double d : dists) inertia += d;
        run.history.push_back(inertia);

        // Centroid update.
        std::vector<std::vector<double>> next(static_cast<size_t>(n),
                                              std::vector<double>(dim, 0.0));
        for (size_t i = 0; i < count; ++i) {
            auto& acc = next[static_cast<size_t>(labels[i])];
            for (size_t d = 0; d < dim; ++d) acc[d] += points[i][d];
        }
        double shift = 0.0;
        for (int c = 0; c < n; ++c) {
            auto& acc = next[static_cast<size_t>(c)];
            const double sz = static_cast<double>(sizes[static_cast<size_t>(c)]);
            for (size_t d = 0; d < dim; ++d) acc[d] /= sz;
            shift = std::max(shift, std::sqrt(squared_distance(acc, centers[static_cast<size_t>(c)])));
        }
        centers = std::move(next);
        if (shift < cfg.tol) break;
    }

    // Final coherent state against the converged centroids.
    assign_points(points, centers, labels, dists);
    repair_empty_clusters(points, n, labels, dists, sizes, centers);
    double inertia = 0.0;
    for (double d : dists) inertia += d;
    run.history.push_back(inertia);
    run.inertia = inertia;
    run.labels = std::move(labels);
    run.centroids = std::move(centers);
    return run;
}

}  // namespace

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double sum = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return sum;
}

std::vector<EmbeddingVector> l2_normalize(const std::vector<EmbeddingVector>& vectors) {
    std::vector<EmbeddingVector> out = vectors;
    for (auto& v : out) {
        double norm2 = 0.0;
        for (double x : v.values) norm2 += x * x;
        const double norm = std::sqrt(norm2);
        if (norm > 0.0) {
            for (auto& x : v.values) x /= norm;
        }
    }
    return out;
}

ClusterAssignment kmeans(const std::vector<EmbeddingVector>& vectors, int n,
                         const ClusterConfig& cfg) {
    if (n < 1) throw std::runtime_error("kmeans: n must be >= 1");
    if (vectors.empty() || n > static_cast<int>(vectors.size())) {
        throw std::runtime_error("kmeans: need at least n vectors, got " +
                                 std::to_string(vectors.size()) + " for n = " + std::to_string(n));
    }
    if (cfg.max_iters < 1 || cfg.tol <= 0.0) {
        throw std::runtime_error("kmeans: max_iters must be >= 1 and tol > 0");
    }
    std::vector<std::vector<double>> points;
    points.reserve(vectors.size());
    const int dim = vectors[0].dim();
    for (const auto& v : vectors) {
        if (v.dim() != dim) throw std::runtime_error("kmeans: dimension mismatch across vectors");
        points.push_back(v.values);
    }

    DetRng rng(cfg.seed);
    RunResult best;
    for (int restart = 0; restart < kRestarts; ++restart) {
        RunResult run = run_once(points, n, cfg, rng);
        if (run.inertia < best.inertia) best = std::move(run);
    }

    ClusterAssignment out;
    out.labels = std::move(best.labels);
    out.centroids = std::move(best.centroids);
    out.inertia = best.inertia;
    out.inertia_history = std::move(best.history);
    return out;
}

}  // namespace pkeval
