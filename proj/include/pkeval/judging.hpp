#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pkeval/gateway.hpp"
#include "pkeval/model.hpp"

namespace pkeval {

struct SamplingPlan {
    int n_samples = 32;
    double temperature = 1.0;
    int max_tokens = 8192;
    std::string rationale_model;
};

/// Extracts the final answer letter. Primary rule: the last occurrence of
/// "Answer: <L>" (case-insensitive, tolerant of bold/markup and trailing
/// punctuation). Fallback: the last parenthesized or isolated option letter
/// in the final non-empty line. Absence is a value and counts as incorrect
/// downstream.
std::optional<char> extract_answer(const std::string& clean_text);

/// Builds a Rationale from a raw completion: think-stripping, answer
/// extraction, token counting, and the omitted flag for empty-after-strip or
/// over-length samples (token_count >= max_token_cap; pass 0 to disable).
Rationale make_rationale(const Question& q, int sample_id, const std::string& model,
                         std::string raw_text, int max_token_cap = 0,
                         const Tokenizer& tokenizer = whitespace_tokenizer());

/// Samples plan.n_samples rationales with sample_ids 0..n-1, each passed
/// through think-stripping and answer extraction. The request seed is the
/// sample_id so repeated samples are distinct yet reproducible.
std::vector<Rationale> sample_rationales(const Question& q, const SamplingPlan& plan,
                                         Gateway& gateway);

/// Parses a judge completion into one label per PK unit. Splits on ---
/// delimiters; reads Concept/Application/Correctness/Details fields with
/// case-insensitive keys, tolerating quotes and markup. Blocks are matched to
/// units by normalized concept text, falling back to block order; units with
/// no block become (unapplied, not_applicable). Inconsistent pairs are
/// coerced: (unapplied, correct|incorrect) -> not_applicable, and
/// (applied, N/A) -> incorrect, both with a recorded warning. Throws when no
/// block parses.
std::vector<UnitLabel> parse_judgment(const std::string& completion, const PKCollection& pk,
                                      std::vector<std::string>* warnings = nullptr);

/// Renders labels back into a completion in the judge's output format.
/// parse_judgment(render_judgment(labels)) == labels for well-formed inputs;
/// also used to reconstruct distillation targets when the original
/// completion is not cached.
std::string render_judgment(const std::vector<UnitLabel>& labels, const PKCollection& pk);

/// The exact ChatRequest the judge stage issues for one rationale; exposed so
/// distillation can reconstruct completions verbatim from the cache.
ChatRequest build_judge_request(const Rationale& r, const Question& q, const PKCollection& pk,
                                const std::string& judge_model);

/// Renders the judgment prompt, asks the judge, and parses the completion.
/// On a parse failure, re-asks once deterministically (bumped seed), then
/// flags the record failed.
JudgmentRecord judge(const Rationale& r, const Question& q, const PKCollection& pk,
                     const std::string& judge_model, Gateway& gateway,
                     std::vector<std::string>* warnings = nullptr);

}  // namespace pkeval
