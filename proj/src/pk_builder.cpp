#include "pkeval/pk_builder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace pkeval {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Strips matching quote/emphasis pairs from both ends, plus stray trailing
/// separators left over after a closing quote.
std::string strip_quotes(std::string s) {
    auto strip_pair = [&](const std::string& open, const std::string& close) {
        if (s.size() >= open.size() + close.size() && s.compare(0, open.size(), open) == 0 &&
            s.compare(s.size() - close.size(), close.size(), close) == 0) {
            s = trim(s.substr(open.size(), s.size() - open.size() - close.size()));
            return true;
        }
        return false;
    };
    for (bool changed = true; changed;) {
        changed = false;
        while (!s.empty() && (s.back() == ',' || s.back() == ';')) {
            s.pop_back();
            s = trim(s);
            changed = true;
        }
        changed = strip_pair("\"", "\"") || strip_pair("'", "'") ||
                  strip_pair("“", "”") || strip_pair("`", "`") ||
                  strip_pair("**", "**") || strip_pair("*", "*") || changed;
    }
    return s;
}

/// True while an item that opened with a quote has not yet closed it; only
/// such items absorb continuation lines, so trailing prose after a completed
/// list is never glued onto the final unit.
bool quote_still_open(const std::string& pending) {
    static const std::pair<const char*, const char*> pairs[] = {
        {"\"", "\""}, {"'", "'"}, {"“", "”"}, {"`", "`"}};
    for (const auto& [open, close] : pairs) {
        const size_t open_len = std::string(open).size();
        const size_t close_len = std::string(close).size();
        if (pending.size() >= open_len && pending.compare(0, open_len, open) == 0) {
            return pending.size() < open_len + close_len ||
                   pending.compare(pending.size() - close_len, close_len, close) != 0;
        }
    }
    return false;
}

/// Matches "12.", "12)", "**3.**" style leading enumerators and returns the
/// remainder, or nullopt for non-item lines.
std::optional<std::string> strip_enumerator(const std::string& line) {
    size_t i = line.find_first_not_of(" \t");
    if (i == std::string::npos) return std::nullopt;
    size_t j = i;
    while (j < line.size() && line.compare(j, 2, "**") == 0) j += 2;  // markdown bold
    while (j < line.size() && line[j] == '*') ++j;
    size_t digits_start = j;
    while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
    if (j == digits_start) return std::nullopt;
    if (j >= line.size()) return std::nullopt;
    if (line[j] != '.' && line[j] != ')' && line[j] != ':' && line[j] != '-') return std::nullopt;
    ++j;
    while (j < line.size() && (line[j] == '*' || line[j] == '.')) ++j;  // "**1.** text"
    return line.substr(j);
}

}  // namespace

std::vector<std::string> parse_knowledge_list(const std::string& completion) {
    std::string body = completion;
    const std::string header = "### Required Conceptual Knowledge";
    size_t pos = body.rfind(header);
    if (pos != std::string::npos) {
        body = body.substr(pos + header.size());
    }
    std::vector<std::string> units;
    std::istringstream in(body);
    std::string line;
    std::string pending;  // items may wrap onto continuation lines
    auto flush = [&] {
        std::string unit = strip_quotes(trim(pending));
        if (!unit.empty()) units.push_back(unit);
        pending.clear();
    };
    while (std::getline(in, line)) {
        if (auto item = strip_enumerator(line)) {
            flush();
            pending = trim(*item);
        } else if (!pending.empty() && quote_still_open(pending) && !trim(line).empty()) {
            pending += " " + trim(line);
        } else if (!pending.empty() && !quote_still_open(pending)) {
            flush();
        }
    }
    flush();
    return units;
}

int cluster_count(const std::vector<int>& unit_counts_per_model) {
    if (unit_counts_per_model.empty()) {
        throw std::runtime_error("cluster_count: empty count list");
    }
    long total = 0;
    for (int c : unit_counts_per_model) {
        if (c <= 0) throw std::runtime_error("cluster_count: counts must be positive");
        total += c;
    }
    const double mean = static_cast<double>(total) / static_cast<double>(unit_counts_per_model.size());
    const int n = static_cast<int>(std::floor(mean + 0.5)) + 2;
    return static_cast<int>(std::clamp<long>(n, 1, total));
}

PKCollection refine(const std::vector<AtomicKnowledgeBatch>& batches, Gateway& gateway,
                    const ClusterConfig& cfg, const std::string& embed_model) {
    if (batches.empty()) throw std::runtime_error("refine: no batches");
    const std::string& question_id = batches.front().question_id;

    // Pool units preserving (model, order) provenance.
    std::vector<std::string> texts;
    std::vector<std::string> provenance;
    std::vector<int> counts;
    for (const auto& batch : batches) {
        if (batch.question_id != question_id) {
            throw std::runtime_error("refine: batches span multiple questions");
        }
        if (batch.units.empty()) continue;
        counts.push_back(static_cast<int>(batch.units.size()));
        for (const auto& unit : batch.units) {
            texts.push_back(unit);
            provenance.push_back(batch.generator_model);
        }
    }
    if (texts.empty()) {
        throw std::runtime_error("refine: all batches empty for question " + question_id);
    }

    const int n = cluster_count(counts);
    const auto normalized = l2_normalize(gateway.embed_batch(embed_model, texts));
    const ClusterAssignment assignment = kmeans(normalized, n, cfg);

    PKCollection collection;
    collection.question_id = question_id;
    collection.units.reserve(static_cast<size_t>(n));
    for (int cluster = 0; cluster < n; ++cluster) {
        int representative = -1;
        double best_d = std::numeric_limits<double>::infinity();
        int size = 0;
        for (size_t i = 0; i < texts.size(); ++i) {
            if (assignment.labels[i] != cluster) continue;
            ++size;
            const double d = squared_distance(normalized[i].values,
                                              assignment.centroids[static_cast<size_t>(cluster)]);
            if (d < best_d) {  // strict < keeps the lowest pooled index on ties
                best_d = d;
                representative = static_cast<int>(i);
            }
        }
        if (representative < 0) {
            throw std::runtime_error("refine: cluster " + std::to_string(cluster) +
                                     " is empty after k-means");
        }
        PKUnit unit;
        unit.text = texts[static_cast<size_t>(representative)];
        unit.weight = size;
        unit.cluster_id = cluster;
        unit.source_model = provenance[static_cast<size_t>(representative)];
        collection.units.push_back(std::move(unit));
    }
    return collection;
}

}  // namespace pkeval
