#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pkeval/model.hpp"

namespace pkeval {

enum class PromptTemplate { knowledge_extraction, judgment, factuality, relevance };

std::string to_string(PromptTemplate t);
PromptTemplate prompt_template_from_string(std::string_view s);

struct RenderedPrompt {
    std::string system;
    std::string user;
};

/// Substitutes slot values into the named template. Required slots:
///   knowledge_extraction: question, answer
///   judgment:             question, answer, knowledge, rationale
///   factuality:           question, knowledge
///   relevance:            question, answer, knowledge
/// Throws if a required slot is missing; the rendered text never contains a
/// slot marker.
RenderedPrompt render_prompt(PromptTemplate t,
                             const std::map<std::string, std::string>& slots);

/// Question text followed by the four lettered choices.
std::string format_question_with_choices(const Question& q);

/// The gold answer as "(B) choice text".
std::string format_gold_answer(const Question& q);

/// Numbered knowledge list ("1. text") as inserted into judgment prompts.
std::string format_knowledge_list(const std::vector<PKUnit>& units);

/// The chat prompt used to sample rationales. This is also the `prompt`
/// field of emitted preference pairs, so it must be identical across
/// strategies and runs.
std::string render_question_prompt(const Question& q);

/// Question prompt with selected knowledge texts prepended under a fixed
/// preamble; used by the remediation experiment.
std::string render_remediation_prompt(const Question& q,
                                      const std::vector<std::string>& knowledge,
                                      const std::string& preamble);

}  // namespace pkeval
