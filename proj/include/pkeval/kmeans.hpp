#pragma once

#include <cstdint>
#include <vector>

#include "pkeval/gateway.hpp"

namespace pkeval {

enum class ClusterDistance { euclidean_on_l2_normalized };

struct ClusterConfig {
    uint64_t seed = 0;
    int max_iters = 100;
    double tol = 1e-4;
    ClusterDistance distance = ClusterDistance::euclidean_on_l2_normalized;
};

struct ClusterAssignment {
    std::vector<int> labels;                     // per-point cluster index in [0, n)
    std::vector<std::vector<double>> centroids;  // n centroids
    double inertia = 0.0;                        // sum of squared distances
    std::vector<double> inertia_history;         // per-iteration, non-increasing
};

/// Seeded, deterministic k-means over L2-normalized vectors (the caller
/// normalizes). Initialization is k-means++ driven by the config seed; a
/// fixed number of internal restarts share the same RNG stream and the
/// lowest-inertia run wins, so identical (inputs, seed) always reproduce
/// identical labels and centroids. Empty clusters are repaired by moving the
/// point farthest from its assigned centroid. Terminates when the largest
/// centroid shift drops below tol or max_iters is reached.
ClusterAssignment kmeans(const std::vector<EmbeddingVector>& vectors, int n,
                         const ClusterConfig& cfg);

/// L2-normalizes a copy of the input (zero vectors are left unchanged).
std::vector<EmbeddingVector> l2_normalize(const std::vector<EmbeddingVector>& vectors);

double squared_distance(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace pkeval
