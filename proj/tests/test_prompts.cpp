#include <doctest.h>

#include "generators.hpp"
#include "pkeval/prompts.hpp"

using namespace pkeval;

TEST_CASE("knowledge extraction prompt carries the question and answer") {
    auto p = render_prompt(PromptTemplate::knowledge_extraction,
                           {{"question", "Q"}, {"answer", "A"}});
    CHECK(p.user.find("### Question\nQ") != std::string::npos);
    CHECK(p.user.find("### The Answer to the Question\nA") != std::string::npos);
    CHECK(p.system.find("list all the essential pieces of conceptual knowledge") !=
          std::string::npos);
    // The user prompt ends at the list header so completions start the list.
    const std::string tail = "### Required Conceptual Knowledge";
    CHECK(p.user.substr(p.user.size() - tail.size()) == tail);
}

TEST_CASE("judgment prompt ends in the evaluation header") {
    auto p = render_prompt(PromptTemplate::judgment, {{"question", "Q"},
                                                      {"answer", "A"},
                                                      {"knowledge", "1. K"},
                                                      {"rationale", "R"}});
    const std::string tail = "### Evaluation";
    CHECK(p.user.substr(p.user.size() - tail.size()) == tail);
    CHECK(p.user.find("### Rationale\nR") != std::string::npos);
    CHECK(p.system.find("\"explicit\" or \"implicit\" or \"unapplied\"") != std::string::npos);
}

TEST_CASE("missing slots are named in the error") {
    CHECK_THROWS_WITH_AS(
        render_prompt(PromptTemplate::judgment,
                      {{"question", "Q"}, {"answer", "A"}, {"knowledge", "K"}}),
        doctest::Contains("rationale"), std::runtime_error);
}

TEST_CASE("no slot marker survives rendering") {
    for (auto t : {PromptTemplate::knowledge_extraction, PromptTemplate::judgment,
                   PromptTemplate::factuality, PromptTemplate::relevance}) {
        auto p = render_prompt(t, {{"question", "Q"},
                                   {"answer", "A"},
                                   {"knowledge", "K"},
                                   {"rationale", "R"}});
        CHECK(p.user.find("{<") == std::string::npos);
        CHECK(p.system.find("{<") == std::string::npos);
    }
}

TEST_CASE("factuality and relevance prompts carry their rubric anchors") {
    auto f = render_prompt(PromptTemplate::factuality, {{"question", "Q"}, {"knowledge", "K"}});
    CHECK(f.user.find("### Statement to Evaluate:\nK") != std::string::npos);
    CHECK(f.user.find("[True/False]") != std::string::npos);

    auto r = render_prompt(PromptTemplate::relevance,
                           {{"question", "Q"}, {"answer", "A"}, {"knowledge", "K"}});
    CHECK(r.user.find("Score 5: The knowledge is essential") != std::string::npos);
    CHECK(r.user.find("Question: Q") != std::string::npos);
}

TEST_CASE("question prompt lists the four lettered choices") {
    Question q = testgen::make_question("q1");
    const std::string prompt = render_question_prompt(q);
    CHECK(prompt.find("(A) first option") != std::string::npos);
    CHECK(prompt.find("(D) fourth option") != std::string::npos);
    CHECK(prompt.find("Answer: <letter>") != std::string::npos);
}

TEST_CASE("remediation prompt prepends knowledge under the preamble") {
    Question q = testgen::make_question("q1");
    const std::string prompt =
        render_remediation_prompt(q, {"Fact one.", "Fact two."}, "Use the following knowledge.");
    CHECK(prompt.rfind("Use the following knowledge.", 0) == 0);
    CHECK(prompt.find("1. Fact one.") != std::string::npos);
    CHECK(prompt.find("2. Fact two.") != std::string::npos);
    CHECK(prompt.find("(A) first option") != std::string::npos);
}
