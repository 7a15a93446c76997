#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pkeval/gateway.hpp"
#include "pkeval/model.hpp"

namespace pkeval {

struct FactualityVerdict {
    std::string question_id;
    int unit_index = 0;
    bool verdict = false;
    std::string feedback;
};

void to_json(json& j, const FactualityVerdict& v);
void from_json(const json& j, FactualityVerdict& v);

struct RelevanceScore {
    std::string question_id;
    int unit_index = 0;
    int score = 1;  // rubric bounds [1, 5]
    std::string feedback;
};

void to_json(json& j, const RelevanceScore& s);
void from_json(const json& j, RelevanceScore& s);

/// Parses "### Evaluation" -> True/False (case-insensitive, tolerant of
/// brackets and trailing punctuation) plus the "### Feedback:" section.
std::optional<FactualityVerdict> parse_factuality(const std::string& completion);

/// Parses the last "Score: N" occurrence; nullopt when absent or N is out of
/// the 1..5 rubric.
std::optional<RelevanceScore> parse_relevance(const std::string& completion);

struct FactualityResult {
    std::vector<FactualityVerdict> verdicts;
    int unparseable = 0;
    double accuracy = 0.0;  // fraction True among parsed verdicts
};

/// Judges each (question, unit) pair for factual accuracy. Unparseable
/// verdicts are excluded from the aggregate and counted. Whether the judge
/// endpoint can actually search the web is recorded by the caller in the
/// report header, not detected here.
FactualityResult check_factuality(const std::vector<Question>& questions,
                                  const std::vector<PKCollection>& collections,
                                  const std::string& judge_model, Gateway& gateway);

struct RelevanceResult {
    std::vector<RelevanceScore> scores;
    int unparseable = 0;  // unparseable or out-of-rubric
    double mean = 0.0;
};

RelevanceResult score_relevance(const std::vector<Question>& questions,
                                const std::vector<PKCollection>& collections,
                                const std::string& judge_model, Gateway& gateway);

enum class RemediationMode { random, correct, incorrect, all };

std::string to_string(RemediationMode m);
RemediationMode remediation_mode_from_string(std::string_view s);

/// Unit indices eligible for a remediation mode, ordered by unit_index:
///   random    any unit (one uniform draw happens in remediate)
///   correct   applied and correct
///   incorrect applied and incorrect (misapplied)
///   all       misapplied plus unapplied
std::vector<int> remediation_unit_set(const JudgmentRecord& judgment, RemediationMode mode);

struct RemediationOutcome {
    Rationale rationale;
    std::vector<int> supplied_units;
    RemediationMode mode = RemediationMode::random;
};

/// Re-prompts a previously incorrect question with the mode's knowledge texts
/// prepended under the configured preamble, and reports the re-judged answer.
/// Returns nullopt (question skipped) when the mode's unit set is empty.
std::optional<RemediationOutcome> remediate(const Question& q, const JudgmentRecord& judgment,
                                            const PKCollection& pk, RemediationMode mode,
                                            Gateway& gateway, const std::string& model,
                                            uint64_t seed, const std::string& preamble);

}  // namespace pkeval
