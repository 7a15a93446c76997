#pragma once

#include <string>
#include <vector>

#include "pkeval/gateway.hpp"
#include "pkeval/kmeans.hpp"
#include "pkeval/model.hpp"

namespace pkeval {

/// Parses a knowledge-extraction completion into unit strings, in listed
/// order. Strips numbering, surrounding quotes, and whitespace; drops empty
/// items; ignores any preamble before the "### Required Conceptual Knowledge"
/// header when present. An empty result signals extraction failure; the
/// caller records the batch as empty and flags it.
std::vector<std::string> parse_knowledge_list(const std::string& completion);

/// Number of clusters: round-half-up of the mean per-model unit count, plus
/// an additive offset of 2, clamped to [1, total pooled units].
int cluster_count(const std::vector<int>& unit_counts_per_model);

/// Pools one question's batches (preserving model and order provenance),
/// embeds, L2-normalizes, clusters, and emits one centroid-nearest
/// representative per cluster. Ties on centroid distance break toward the
/// lowest pooled index. Units are ordered by cluster_id; each carries
/// weight = cluster size and the provenance of the chosen representative.
PKCollection refine(const std::vector<AtomicKnowledgeBatch>& batches, Gateway& gateway,
                    const ClusterConfig& cfg, const std::string& embed_model);

}  // namespace pkeval
