#include "pkeval/prompts.hpp"

#include <sstream>
#include <stdexcept>

namespace pkeval {

namespace {

// Templates below are the exact operational prompts; slot markers use the
// {<name>} form and are replaced verbatim.

constexpr const char* kExtractionSystem =
    R"(You are an expert in identifying the conceptual knowledge required to answer a given question.
Your task is to list all the essential pieces of conceptual knowledge needed to solve the question.
Each piece of knowledge should be expressed as a single, clear, and concise sentence.

Follow these steps:

1. Identify the subject of the question.
2. Break down the knowledge required to solve the question into concise, one-sentence explanations.
3. Ensure that each sentence directly addresses a key concept, principle, or fact necessary for solving the question.
4. Exclude knowledge that involves reasoning, process steps, or calculations specific to the problem.

Your output should follow this format:

### Required Conceptual Knowledge
1. "First concept as a single, concise sentence."
2. "Second concept as a single, concise sentence."
...)";

constexpr const char* kExtractionUser =
    R"(### Question
{<question>}

### The Answer to the Question
{<answer>}

### Required Conceptual Knowledge)";

constexpr const char* kJudgmentSystem =
    R"(You are an expert in analyzing rationales to evaluate the application of conceptual knowledge.
Your task is to assess each piece of knowledge from the provided list and determine:
1. Whether the knowledge was applied explicitly, implicitly, or not at all.
2. Evaluate the correctness of the application.
3. Explain the details in a single sentence.

Provide your evaluation in the following format without any other remarks:
---
Concept: <concept text>
Application: "explicit" or "implicit" or "unapplied"
Correctness: "correct", "incorrect", or "N/A"
Details: "If explicit, specify the exact portion of the rationale. If implicit, explain how the rationale implies it. For unapplied, leave this blank or state 'Not mentioned in the rationale.'"
---)";

constexpr const char* kJudgmentUser =
    R"(### Question
{<question>}

### The Answer to the Question
{<answer>}

### Required Conceptual Knowledge
{<knowledge>}

### Rationale
{<rationale>}

### Evaluation)";

constexpr const char* kFactualityUser =
    R"(You are given a knowledge statement that is intended to help answer a specific question.
Your task is to assess whether this statement is factually correct, based solely on objective and verifiable facts, using web search.

* Focus only on the factual accuracy of the statement as written.
* Do not evaluate how complete, useful, or relevant the statement is.
* If there are no factually incorrect parts, consider the statement 'True'.
* If there is any factual inaccuracy, mark it 'False'.

Please follow these steps:
1. Use web search to verify the statement.
2. Write a detailed feedback explaining your fact-checking process and findings.
3. Conclude with a final verdict: True if factually accurate, False otherwise.

---
Output Format:

### Feedback:
(write a fact-checking explanation based on search results)

### Evaluation:
[True/False]

---
Now, please evaluate the following statement based on the question provided:
### Corresponding Question:
{<question>}

### Statement to Evaluate:
{<knowledge>})";

constexpr const char* kRelevanceUser =
    R"(Evaluate the following knowledge strictly based on the following criterion: Relevance.

1. Write a detailed feedback that assesses the quality of the required conceptual knowledge according to the given score rubric.
2. After writing the feedback for the criterion, assign a score (an integer between 1 and 5) based on the rubric.
3. The output format must be as follows:
Evaluation:
Relevance: (detailed feedback) Score: 1~5
4. Please do not generate any other opening or closing remarks.

---
Input Format:
### Question and Answer:
Question: {<question>}
Answer: {<answer>}

### Required Conceptual knowledge to evaluate:
{<knowledge>}

### Score Rubric:
Relevance: Does the knowledge represent essential background knowledge required to understand the question and reason about the answer?

Score 1: The knowledge is completely irrelevant or unrelated to the question's context.
Score 2: The knowledge is somewhat related to the question's topic but provides very limited value in understanding the question.
Score 3: The knowledge is generally related and helpful for understanding the question or reasoning about the answer.
Score 4: The knowledge is closely related and highly valuable for clearly understanding the question's context or the given answer choices.
Score 5: The knowledge is essential, foundational background knowledge necessary for understanding the question and directly reasoning to the correct answer.
---
Evaluation:)";

struct TemplateSpec {
    const char* system;
    const char* user;
    std::vector<const char*> slots;
};

const TemplateSpec& spec_for(PromptTemplate t) {
    static const TemplateSpec extraction{kExtractionSystem, kExtractionUser, {"question", "answer"}};
    static const TemplateSpec judgment{kJudgmentSystem, kJudgmentUser,
                                       {"question", "answer", "knowledge", "rationale"}};
    static const TemplateSpec factuality{"", kFactualityUser, {"question", "knowledge"}};
    static const TemplateSpec relevance{"", kRelevanceUser, {"question", "answer", "knowledge"}};
    switch (t) {
        case PromptTemplate::knowledge_extraction: return extraction;
        case PromptTemplate::judgment: return judgment;
        case PromptTemplate::factuality: return factuality;
        case PromptTemplate::relevance: return relevance;
    }
    throw std::runtime_error("unknown prompt template");
}

void substitute(std::string& text, const std::string& slot, const std::string& value) {
    const std::string marker = "{<" + slot + ">}";
    size_t pos;
    while ((pos = text.find(marker)) != std::string::npos) {
        text.replace(pos, marker.size(), value);
    }
}

}  // namespace

std::string to_string(PromptTemplate t) {
    switch (t) {
        case PromptTemplate::knowledge_extraction: return "knowledge_extraction";
        case PromptTemplate::judgment: return "judgment";
        case PromptTemplate::factuality: return "factuality";
        case PromptTemplate::relevance: return "relevance";
    }
    throw std::runtime_error("unknown prompt template");
}

PromptTemplate prompt_template_from_string(std::string_view s) {
    if (s == "knowledge_extraction") return PromptTemplate::knowledge_extraction;
    if (s == "judgment") return PromptTemplate::judgment;
    if (s == "factuality") return PromptTemplate::factuality;
    if (s == "relevance") return PromptTemplate::relevance;
    throw std::runtime_error("unknown prompt template \"" + std::string(s) + "\"");
}

RenderedPrompt render_prompt(PromptTemplate t,
                             const std::map<std::string, std::string>& slots) {
    const TemplateSpec& spec = spec_for(t);
    RenderedPrompt out{spec.system, spec.user};
    for (const char* slot : spec.slots) {
        auto it = slots.find(slot);
        if (it == slots.end()) {
            throw std::runtime_error("render_prompt: missing slot '" + std::string(slot) +
                                     "' for template " + to_string(t));
        }
        substitute(out.user, slot, it->second);
        substitute(out.system, slot, it->second);
    }
    if (out.user.find("{<") != std::string::npos || out.system.find("{<") != std::string::npos) {
        throw std::runtime_error("render_prompt: unresolved slot marker in template " + to_string(t));
    }
    return out;
}

std::string format_question_with_choices(const Question& q) {
    std::ostringstream ss;
    ss << q.text << "\n";
    for (size_t i = 0; i < q.choices.size(); ++i) {
        ss << "\n(" << static_cast<char>('A' + i) << ") " << q.choices[i];
    }
    return ss.str();
}

std::string format_gold_answer(const Question& q) {
    size_t idx = static_cast<size_t>(q.gold - 'A');
    return "(" + std::string(1, q.gold) + ") " + q.choices[idx];
}

std::string format_knowledge_list(const std::vector<PKUnit>& units) {
    std::ostringstream ss;
    for (size_t i = 0; i < units.size(); ++i) {
        if (i) ss << "\n";
        ss << (i + 1) << ". " << units[i].text;
    }
    return ss.str();
}

std::string render_question_prompt(const Question& q) {
    std::ostringstream ss;
    ss << "Answer the following multiple-choice question. Reason step by step, "
          "and end your response with \"Answer: <letter>\".\n\n### Question\n"
       << format_question_with_choices(q);
    return ss.str();
}

std::string render_remediation_prompt(const Question& q,
                                      const std::vector<std::string>& knowledge,
                                      const std::string& preamble) {
    std::ostringstream ss;
    ss << preamble << "\n";
    for (size_t i = 0; i < knowledge.size(); ++i) {
        ss << "\n" << (i + 1) << ". " << knowledge[i];
    }
    ss << "\n\n" << render_question_prompt(q);
    return ss.str();
}

}  // namespace pkeval
