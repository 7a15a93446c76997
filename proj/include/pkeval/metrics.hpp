#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pkeval/model.hpp"

namespace pkeval {

/// Computes per-rationale knowledge metrics from a judgment. With
/// A = applied units (explicit or implicit) and C = the correctly applied
/// subset: kp = |C|/|A| (absent when |A| = 0), kr = |C|/|K*|,
/// f1 = 2*kp*kr/(kp+kr) (0 when kp is absent or kp+kr = 0),
/// wkp = sum of C's weights / |A| (absent when |A| = 0),
/// wkr = sum of C's weights / |K*|.
/// Throws on a label/unit count mismatch or key mismatch.
MetricsReport compute_metrics(const JudgmentRecord& j, const PKCollection& pk,
                              const Rationale& r);

enum class GroupField { model, subject, category, answer_correct };

std::string to_string(GroupField f);
GroupField group_field_from_string(std::string_view s);

/// MetricsReport annotated with the grouping attributes the report itself
/// does not carry.
struct TaggedMetrics {
    MetricsReport report;
    std::string model;
    std::string subject;
};

/// A record excluded upstream (omitted rationale or failed judgment),
/// attributed to its group for the n_excluded count.
struct ExcludedRecord {
    std::string model;
    std::string subject;
    bool answer_correct = false;
};

struct AggregateReport {
    std::map<std::string, std::string> key;  // group field -> rendered value
    std::optional<double> mean_kp;           // over records with kp present
    double mean_kr = 0.0;
    double mean_f1 = 0.0;
    double accuracy = 0.0;
    double mean_token_count = 0.0;
    int n = 0;           // records contributing to kr/f1/accuracy means
    int n_excluded = 0;  // upstream exclusions + kp-absent records
};

void to_json(json& j, const AggregateReport& a);

/// Macro-averages per-rationale metrics within each group (the kp mean skips
/// records with kp absent). Rows are ordered deterministically by group key.
/// `category_of_subject` backs the category group field; unmapped subjects
/// fall back to their own name.
std::vector<AggregateReport> aggregate(
    const std::vector<TaggedMetrics>& reports, const std::vector<GroupField>& group_by,
    const std::map<std::string, std::string>& category_of_subject = {},
    const std::vector<ExcludedRecord>& excluded = {});

/// Markdown table with per-model rows split by answer correctness, mirroring
/// the standard report layout (accuracy, KP/KR/F1 per stratum, token counts).
std::string render_report_markdown(const std::vector<TaggedMetrics>& reports,
                                   const std::vector<ExcludedRecord>& excluded = {});

/// CSV emission of arbitrary aggregate rows.
std::string render_report_csv(const std::vector<AggregateReport>& rows);

/// Category mapping used for subject-level rollups, configurable per dataset.
std::map<std::string, std::string> default_subject_categories();

}  // namespace pkeval
