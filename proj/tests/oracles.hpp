// Independent test oracles. These deliberately reimplement contracts with
// different code paths (sorting/enumeration instead of streaming argmin) so
// they can check the library implementations rather than mirror them.
#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "pkeval/model.hpp"
#include "pkeval/preference.hpp"
#include "pkeval/rng.hpp"

namespace oracle {

// --- counting oracle for per-rationale metrics -----------------------------------

struct MetricValues {
    std::optional<double> kp;
    double kr = 0.0;
    double f1 = 0.0;
    std::optional<double> wkp;
    double wkr = 0.0;
};

/// Brute-force counter: builds explicit index sets, then applies the metric
/// definitions in canonical form.
inline MetricValues count_metrics(const std::vector<pkeval::UnitLabel>& labels,
                                  const std::vector<int>& weights) {
    std::set<int> applied;
    std::set<int> correct;
    for (const auto& l : labels) {
        if (l.application == pkeval::Application::explicit_use ||
            l.application == pkeval::Application::implicit_use) {
            applied.insert(l.unit_index);
            if (l.correctness == pkeval::Correctness::correct) correct.insert(l.unit_index);
        }
    }
    long weight_sum = 0;
    for (int idx : correct) weight_sum += weights.at(static_cast<size_t>(idx));

    MetricValues v;
    const long total = static_cast<long>(weights.size());
    v.kr = static_cast<double>(correct.size()) / static_cast<double>(total);
    v.wkr = static_cast<double>(weight_sum) / static_cast<double>(total);
    if (!applied.empty()) {
        v.kp = static_cast<double>(correct.size()) / static_cast<double>(applied.size());
        v.wkp = static_cast<double>(weight_sum) / static_cast<double>(applied.size());
    }
    if (v.kp && (*v.kp + v.kr) > 0.0) {
        v.f1 = 2.0 * *v.kp * v.kr / (*v.kp + v.kr);
    }
    return v;
}

// --- exhaustive k-means optimum ----------------------------------------------------

/// Minimum inertia over all assignments of the points into exactly n
/// non-empty clusters (centroid = cluster mean). Exponential; for tests with
/// |points| <= 8 and n <= 3 only.
inline double best_partition_inertia(const std::vector<std::vector<double>>& points, int n) {
    const size_t count = points.size();
    const size_t dim = points.at(0).size();
    std::vector<int> labels(count, 0);
    double best = std::numeric_limits<double>::infinity();

    const auto evaluate = [&]() {
        std::vector<std::vector<double>> sums(static_cast<size_t>(n),
                                              std::vector<double>(dim, 0.0));
        std::vector<int> sizes(static_cast<size_t>(n), 0);
        for (size_t i = 0; i < count; ++i) {
            sizes[static_cast<size_t>(labels[i])]++;
            for (size_t d = 0; d < dim; ++d) sums[static_cast<size_t>(labels[i])][d] += points[i][d];
        }
        for (int c = 0; c < n; ++c) {
            if (sizes[static_cast<size_t>(c)] == 0) return;  // not a partition into n parts
        }
        double inertia = 0.0;
        for (size_t i = 0; i < count; ++i) {
            const auto& sum = sums[static_cast<size_t>(labels[i])];
            const double size = sizes[static_cast<size_t>(labels[i])];
            for (size_t d = 0; d < dim; ++d) {
                const double diff = points[i][d] - sum[d] / size;
                inertia += diff * diff;
            }
        }
        best = std::min(best, inertia);
    };

    // Odometer over all n^count labelings.
    for (;;) {
        evaluate();
        size_t pos = 0;
        while (pos < count && ++labels[pos] == n) {
            labels[pos] = 0;
            ++pos;
        }
        if (pos == count) break;
    }
    return best;
}

// --- literal selection-rule evaluator ------------------------------------------------

/// Applies the written selection rules over (sample_id-keyed) pools using
/// sort-based extremes, sharing only the RNG derivation contract with the
/// implementation. Returns (chosen, rejected) sample ids.
inline std::optional<std::pair<int, int>> select(const std::vector<pkeval::Candidate>& pool,
                                                 const pkeval::SelectionConfig& cfg) {
    using pkeval::Candidate;
    using pkeval::Strategy;

    std::vector<const Candidate*> correct, incorrect;
    for (const auto& c : pool) {
        (c.metrics.answer_correct ? correct : incorrect).push_back(&c);
    }
    if (correct.empty()) return std::nullopt;

    pkeval::DetRng rng(pkeval::derive_seed(cfg.seed, pool.front().metrics.question_id));
    const auto wkp = [](const Candidate* c) { return c->metrics.wkp.value_or(0.0); };
    const auto wkr = [](const Candidate* c) { return c->metrics.wkr; };
    const auto len = [](const Candidate* c) { return static_cast<double>(c->metrics.token_count); };

    const auto extremes = [](std::vector<const Candidate*> v, auto key, bool maximize) {
        double target = key(v.front());
        for (const Candidate* c : v) {
            target = maximize ? std::max(target, key(c)) : std::min(target, key(c));
        }
        std::vector<const Candidate*> out;
        for (const Candidate* c : v) {
            if (key(c) == target) out.push_back(c);
        }
        return out;
    };
    const auto by_lowest_sample = [](std::vector<const Candidate*> v) {
        std::sort(v.begin(), v.end(), [](const Candidate* a, const Candidate* b) {
            return a->metrics.sample_id < b->metrics.sample_id;
        });
        return v.front();
    };

    const Candidate* chosen = nullptr;
    switch (cfg.strategy) {
        case Strategy::answer_driven:
            chosen = correct[rng.pick_index(correct)];
            break;
        case Strategy::kr_random: {
            auto ties = extremes(correct, wkp, true);
            chosen = ties.size() == 1 ? ties.front() : ties[rng.pick_index(ties)];
            break;
        }
        case Strategy::kr_max:
            chosen = by_lowest_sample(extremes(extremes(correct, wkp, true), wkr, true));
            break;
        case Strategy::kr_min:
            chosen = by_lowest_sample(extremes(extremes(correct, wkp, true), wkr, false));
            break;
        case Strategy::len_max:
            chosen = by_lowest_sample(extremes(correct, len, true));
            break;
        case Strategy::len_min: {
            std::vector<const Candidate*> eligible;
            for (const Candidate* c : correct) {
                if (c->metrics.token_count >= cfg.min_len_floor) eligible.push_back(c);
            }
            if (eligible.empty()) eligible = correct;
            chosen = by_lowest_sample(extremes(eligible, len, false));
            break;
        }
    }

    std::vector<const Candidate*> other = incorrect;
    if (other.empty()) {
        for (const Candidate* c : correct) {
            if (c != chosen) other.push_back(c);
        }
        if (other.empty()) return std::nullopt;
    }

    const Candidate* rejected = nullptr;
    switch (cfg.strategy) {
        case Strategy::answer_driven:
            rejected = other[rng.pick_index(other)];
            break;
        case Strategy::kr_random: {
            auto ties = extremes(other, wkp, false);
            rejected = ties.size() == 1 ? ties.front() : ties[rng.pick_index(ties)];
            break;
        }
        case Strategy::kr_max:  // opposite tie rule: min WKR
            rejected = by_lowest_sample(extremes(extremes(other, wkp, false), wkr, false));
            break;
        case Strategy::kr_min:  // opposite tie rule: max WKR
            rejected = by_lowest_sample(extremes(extremes(other, wkp, false), wkr, true));
            break;
        case Strategy::len_max:
            rejected = by_lowest_sample(extremes(other, len, false));
            break;
        case Strategy::len_min:
            rejected = by_lowest_sample(extremes(other, len, true));
            break;
    }
    return std::make_pair(chosen->metrics.sample_id, rejected->metrics.sample_id);
}

}  // namespace oracle
