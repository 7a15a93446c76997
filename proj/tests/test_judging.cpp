#include <doctest.h>

#include "generators.hpp"
#include "pkeval/gateway.hpp"
#include "pkeval/judging.hpp"
#include "pkeval/rng.hpp"

using namespace pkeval;

TEST_CASE("answer extraction: primary pattern") {
    CHECK(extract_answer("Reasoning here. Answer: D") == 'D');
    CHECK(extract_answer("answer: b") == 'B');
    CHECK(extract_answer("**Answer: C**") == 'C');
    CHECK(extract_answer("Answer: (A).") == 'A');
    CHECK(extract_answer("The answer is C.") == 'C');
}

TEST_CASE("answer extraction: last occurrence wins") {
    CHECK(extract_answer("Answer: B ... wait, no. Answer: C") == 'C');
}

TEST_CASE("answer extraction: fallback to the final line") {
    CHECK(extract_answer("Step one.\nStep two.\nThe best option is (A).") == 'A');
    CHECK(extract_answer("Thinking...\nI will go with B") == 'B');
    CHECK(extract_answer("nothing to see here") == std::nullopt);
    CHECK(extract_answer("") == std::nullopt);
}

TEST_CASE("answer extraction ignores letters embedded in words") {
    CHECK(extract_answer("A big Dog ate.\nCats do not answer questions") == std::nullopt);
}

TEST_CASE("make_rationale wires extraction, stripping, and the omitted flag") {
    Question q = testgen::make_question("q1", "algebra", 'B');
    SUBCASE("correct answer") {
        Rationale r = make_rationale(q, 0, "m", "Reasoning. Answer: B");
        CHECK(r.answer_correct);
        CHECK(r.extracted_answer == 'B');
        CHECK(r.token_count == 3);
        CHECK_FALSE(r.omitted);
    }
    SUBCASE("think block is stripped before extraction") {
        Rationale r = make_rationale(q, 1, "m", "<think>xyz</think>Final. Answer: A");
        CHECK(r.clean_text == "Final. Answer: A");
        CHECK(r.extracted_answer == 'A');
        CHECK_FALSE(r.answer_correct);
    }
    SUBCASE("over-length samples are flagged omitted but retain fields") {
        Rationale r = make_rationale(q, 2, "m", "one two three four five. Answer: B", 5);
        CHECK(r.omitted);
        CHECK(r.token_count >= 5);
    }
    SUBCASE("unterminated think flags omission") {
        Rationale r = make_rationale(q, 3, "m", "<think>oops");
        CHECK(r.omitted);
        CHECK(r.clean_text.empty());
        CHECK_FALSE(r.answer_correct);
    }
}

TEST_CASE("sample_rationales returns n samples with dense sample ids") {
    Question q = testgen::make_question("q1");
    SamplingPlan plan;
    plan.n_samples = 3;
    plan.rationale_model = "reasoner";
    Gateway gateway(std::make_shared<MockBackend>(), GatewayConfig{});
    auto rationales = sample_rationales(q, plan, gateway);
    REQUIRE(rationales.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(rationales[static_cast<size_t>(i)].sample_id == i);
        CHECK(rationales[static_cast<size_t>(i)].question_id == "q1");
    }
    // Distinct seeds give distinct samples.
    CHECK(rationales[0].raw_text != rationales[1].raw_text);
}

namespace {

PKCollection small_pk() { return testgen::make_pk("q1", {1, 1, 1}); }

std::string block(const std::string& concept_text, const std::string& application,
                  const std::string& correctness, const std::string& details = "ok") {
    return "Concept: " + concept_text + "\nApplication: \"" + application + "\"\nCorrectness: \"" +
           correctness + "\"\nDetails: \"" + details + "\"\n";
}

}  // namespace

TEST_CASE("parse_judgment reads well-formed blocks") {
    PKCollection pk = small_pk();
    const std::string completion = "---\n" + block(pk.units[0].text, "explicit", "correct") +
                                   "---\n" + block(pk.units[1].text, "implicit", "incorrect") +
                                   "---\n" + block(pk.units[2].text, "unapplied", "N/A", "") +
                                   "---\n";
    auto labels = parse_judgment(completion, pk);
    REQUIRE(labels.size() == 3);
    CHECK(labels[0].application == Application::explicit_use);
    CHECK(labels[0].correctness == Correctness::correct);
    CHECK(labels[1].application == Application::implicit_use);
    CHECK(labels[1].correctness == Correctness::incorrect);
    CHECK(labels[2].application == Application::unapplied);
    CHECK(labels[2].correctness == Correctness::not_applicable);
}

TEST_CASE("missing blocks become unapplied") {
    PKCollection pk = small_pk();
    const std::string completion =
        "---\n" + block(pk.units[0].text, "explicit", "correct") + "---\n";
    std::vector<std::string> warnings;
    auto labels = parse_judgment(completion, pk, &warnings);
    REQUIRE(labels.size() == 3);
    CHECK(labels[1].application == Application::unapplied);
    CHECK(labels[2].application == Application::unapplied);
    CHECK_FALSE(warnings.empty());
}

TEST_CASE("shuffled blocks map back to units by concept text") {
    PKCollection pk = small_pk();
    const std::string shuffled = "---\n" + block(pk.units[2].text, "explicit", "correct") +
                                 "---\n" + block(pk.units[0].text, "unapplied", "N/A", "") +
                                 "---\n" + block(pk.units[1].text, "implicit", "incorrect") +
                                 "---\n";
    const std::string ordered = "---\n" + block(pk.units[0].text, "unapplied", "N/A", "") +
                                "---\n" + block(pk.units[1].text, "implicit", "incorrect") +
                                "---\n" + block(pk.units[2].text, "explicit", "correct") +
                                "---\n";
    auto a = parse_judgment(shuffled, pk);
    auto b = parse_judgment(ordered, pk);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].application == b[i].application);
        CHECK(a[i].correctness == b[i].correctness);
    }
}

TEST_CASE("unknown concept text falls back to block order with a warning") {
    PKCollection pk = small_pk();
    const std::string completion = "---\n" + block("totally different text", "explicit", "correct") +
                                   "---\n" + block(pk.units[1].text, "implicit", "correct") +
                                   "---\n" + block(pk.units[2].text, "unapplied", "N/A", "") +
                                   "---\n";
    std::vector<std::string> warnings;
    auto labels = parse_judgment(completion, pk, &warnings);
    CHECK(labels[0].application == Application::explicit_use);
    bool warned = false;
    for (const auto& w : warnings) warned = warned || w.find("block order") != std::string::npos;
    CHECK(warned);
}

TEST_CASE("inconsistent label pairs are coerced with warnings") {
    PKCollection pk = small_pk();
    SUBCASE("unapplied with a correctness verdict loses the verdict") {
        const std::string completion =
            "---\n" + block(pk.units[0].text, "unapplied", "correct") + "---\n" +
            block(pk.units[1].text, "explicit", "correct") + "---\n" +
            block(pk.units[2].text, "explicit", "correct") + "---\n";
        std::vector<std::string> warnings;
        auto labels = parse_judgment(completion, pk, &warnings);
        CHECK(labels[0].application == Application::unapplied);
        CHECK(labels[0].correctness == Correctness::not_applicable);
        CHECK_FALSE(warnings.empty());
    }
    SUBCASE("applied with N/A correctness becomes incorrect") {
        const std::string completion =
            "---\n" + block(pk.units[0].text, "explicit", "N/A") + "---\n" +
            block(pk.units[1].text, "explicit", "correct") + "---\n" +
            block(pk.units[2].text, "explicit", "correct") + "---\n";
        auto labels = parse_judgment(completion, pk);
        CHECK(labels[0].application == Application::explicit_use);
        CHECK(labels[0].correctness == Correctness::incorrect);
    }
}

TEST_CASE("zero parseable blocks is an error") {
    PKCollection pk = small_pk();
    CHECK_THROWS(parse_judgment("free-form refusal with no structure", pk));
}

TEST_CASE("render/parse round trip is the identity over random label sets") {
    DetRng rng(29);
    for (int round = 0; round < 60; ++round) {
        PKCollection pk = testgen::make_pk("q", testgen::random_weights(rng, 1 + rng.bounded(9)));
        auto labels = testgen::random_labels(rng, pk.units.size());
        auto parsed = parse_judgment(render_judgment(labels, pk), pk);
        REQUIRE(parsed.size() == labels.size());
        for (size_t i = 0; i < labels.size(); ++i) {
            CHECK(parsed[i].unit_index == labels[i].unit_index);
            CHECK(parsed[i].application == labels[i].application);
            CHECK(parsed[i].correctness == labels[i].correctness);
            CHECK(parsed[i].details == labels[i].details);
        }
    }
}

TEST_CASE("judge produces one label per unit against the mock") {
    Question q = testgen::make_question("q1");
    PKCollection pk = small_pk();
    Rationale r = make_rationale(q, 0, "reasoner", "Because of statement 0. Answer: B");
    Gateway gateway(std::make_shared<MockBackend>(), GatewayConfig{});
    JudgmentRecord record = judge(r, q, pk, "judge-model", gateway);
    CHECK_FALSE(record.failed);
    CHECK(record.labels.size() == pk.units.size());
    CHECK(record.judge_model == "judge-model");
}

TEST_CASE("judge flags the record failed after an unparseable re-ask") {
    Question q = testgen::make_question("q1");
    PKCollection pk = small_pk();
    Rationale r = make_rationale(q, 0, "reasoner", "Because. Answer: B");
    auto mock = std::make_shared<MockBackend>();
    mock->add_rule("### Evaluation", "garbage with no structure");
    Gateway gateway(mock, GatewayConfig{});
    std::vector<std::string> warnings;
    JudgmentRecord record = judge(r, q, pk, "judge-model", gateway, &warnings);
    CHECK(record.failed);
    CHECK(record.labels.empty());
    CHECK_FALSE(warnings.empty());
}

TEST_CASE("judge refuses omitted rationales and empty collections") {
    Question q = testgen::make_question("q1");
    Rationale omitted = make_rationale(q, 0, "m", "<think>oops");
    Gateway gateway(std::make_shared<MockBackend>(), GatewayConfig{});
    CHECK_THROWS(judge(omitted, q, small_pk(), "j", gateway));
    Rationale fine = make_rationale(q, 0, "m", "ok. Answer: B");
    PKCollection empty;
    empty.question_id = "q1";
    CHECK_THROWS(judge(fine, q, empty, "j", gateway));
}
