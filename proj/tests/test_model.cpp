#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "generators.hpp"
#include "pkeval/jsonl.hpp"
#include "pkeval/model.hpp"
#include "pkeval/rng.hpp"

using namespace pkeval;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
    const fs::path path = fs::temp_directory_path() / ("pkeval_model_" + name);
    std::ofstream out(path, std::ios::trunc);
    out << content;
    return path;
}

}  // namespace

TEST_CASE("question round trip preserves every field") {
    Question q = testgen::make_question("q7", "physics", 'C');
    q.split = Split::test;
    json j(q);
    Question back = j.get<Question>();
    CHECK(json(back).dump() == j.dump());
    CHECK(back.gold == 'C');
    CHECK(back.split == Split::test);
}

TEST_CASE("serialize-parse is the identity across all types") {
    DetRng rng(11);
    for (int round = 0; round < 50; ++round) {
        const auto weights = testgen::random_weights(rng, 3 + rng.bounded(6));
        PKCollection pk = testgen::make_pk("q" + std::to_string(round), weights);
        json jpk(pk);
        CHECK(json(jpk.get<PKCollection>()).dump() == jpk.dump());

        JudgmentRecord rec;
        rec.question_id = pk.question_id;
        rec.sample_id = static_cast<int>(rng.bounded(32));
        rec.judge_model = "judge";
        rec.labels = testgen::random_labels(rng, pk.units.size());
        json jrec(rec);
        CHECK(json(jrec.get<JudgmentRecord>()).dump() == jrec.dump());

        Rationale r;
        r.question_id = pk.question_id;
        r.sample_id = rec.sample_id;
        r.model = "reasoner";
        r.raw_text = "Some reasoning. Answer: B";
        r.clean_text = r.raw_text;
        r.extracted_answer = 'B';
        r.answer_correct = true;
        r.token_count = 4;
        json jr(r);
        CHECK(json(jr.get<Rationale>()).dump() == jr.dump());

        MetricsReport m;
        m.question_id = pk.question_id;
        m.sample_id = rec.sample_id;
        m.kp = 0.5;
        m.kr = 0.25;
        m.f1 = 2.0 * 0.5 * 0.25 / 0.75;
        m.wkp = 1.5;
        m.wkr = 0.375;
        m.answer_correct = false;
        m.token_count = 120;
        json jm(m);
        CHECK(json(jm.get<MetricsReport>()).dump() == jm.dump());

        AtomicKnowledgeBatch batch;
        batch.question_id = pk.question_id;
        batch.generator_model = "gen-" + std::to_string(round % 3);
        for (size_t u = 0; u < 1 + rng.bounded(5); ++u) {
            batch.units.push_back("Statement " + std::to_string(u) + ".");
        }
        json jb(batch);
        CHECK(json(jb.get<AtomicKnowledgeBatch>()).dump() == jb.dump());

        PreferencePair pair;
        pair.question_id = pk.question_id;
        pair.prompt = "Which options holds?";
        pair.chosen = "chosen text";
        pair.rejected = "rejected text";
        pair.strategy = Strategy::kr_max;
        pair.chosen_meta = MetricSnapshot{0, 2.0, 0.5, 120, true};
        pair.rejected_meta = MetricSnapshot{3, std::nullopt, 0.0, 40, false};
        json jp(pair);
        CHECK(json(jp.get<PreferencePair>()).dump() == jp.dump());
    }
}

TEST_CASE("preference pairs with identical sample ids are rejected at parse") {
    PreferencePair pair;
    pair.question_id = "q";
    pair.prompt = "p";
    pair.chosen = "a";
    pair.rejected = "b";
    pair.chosen_meta = MetricSnapshot{1, 1.0, 0.5, 10, true};
    pair.rejected_meta = MetricSnapshot{1, 1.0, 0.5, 10, false};
    json j(pair);
    CHECK_THROWS(j.get<PreferencePair>());
}

TEST_CASE("unit label coupling violations are rejected at parse time") {
    json bad{{"unit_index", 0},
             {"application", "unapplied"},
             {"correctness", "correct"},
             {"details", ""}};
    CHECK_THROWS(bad.get<UnitLabel>());

    json bad2{{"unit_index", 0},
              {"application", "explicit"},
              {"correctness", "not_applicable"},
              {"details", ""}};
    CHECK_THROWS(bad2.get<UnitLabel>());

    json good{{"unit_index", 0},
              {"application", "implicit"},
              {"correctness", "incorrect"},
              {"details", "x"}};
    CHECK(good.get<UnitLabel>().application == Application::implicit_use);
}

TEST_CASE("metrics report invariants are enforced on parse") {
    json absent_kp{{"question_id", "q"}, {"sample_id", 0},   {"kp", nullptr},
                   {"kr", 0.0},          {"f1", 0.0},        {"wkp", nullptr},
                   {"wkr", 0.0},         {"answer_correct", false}, {"token_count", 3}};
    CHECK_NOTHROW(absent_kp.get<MetricsReport>());

    json bad = absent_kp;
    bad["kr"] = 0.5;  // kr must be 0 when kp is absent
    CHECK_THROWS(bad.get<MetricsReport>());

    json bad_f1{{"question_id", "q"}, {"sample_id", 0},  {"kp", 1.0},
                {"kr", 0.5},          {"f1", 0.9},       {"wkp", 1.0},
                {"wkr", 0.5},         {"answer_correct", true}, {"token_count", 3}};
    CHECK_THROWS(bad_f1.get<MetricsReport>());
}

TEST_CASE("think stripping") {
    SUBCASE("well-formed block is removed") {
        auto r = strip_think("<think>xyz</think>Final. Answer: A");
        CHECK(r.clean == "Final. Answer: A");
        CHECK_FALSE(r.omitted);
    }
    SUBCASE("text without think block is untouched") {
        auto r = strip_think("Reasoning. Answer: B");
        CHECK(r.clean == "Reasoning. Answer: B");
        CHECK_FALSE(r.omitted);
    }
    SUBCASE("unterminated block empties the text and flags omission") {
        auto r = strip_think("<think>never closed... Answer: D");
        CHECK(r.clean.empty());
        CHECK(r.omitted);
    }
    SUBCASE("multiple blocks all removed; no opening tag survives") {
        auto r = strip_think("<think>a</think>mid<think>b</think> tail");
        CHECK(r.clean.find("<think>") == std::string::npos);
        CHECK(r.clean == "mid tail");
    }
    SUBCASE("only a think block means omitted") {
        auto r = strip_think("<think>all hidden</think>");
        CHECK(r.clean.empty());
        CHECK(r.omitted);
    }
}

TEST_CASE("whitespace token counting") {
    CHECK(count_tokens_ws("") == 0);
    CHECK(count_tokens_ws("one") == 1);
    CHECK(count_tokens_ws("  a\tb\nc  ") == 3);
    CHECK(count_tokens_ws("a  b") == 2);
}

TEST_CASE("validate_dataset reports per-subject counts for a clean file") {
    Question qa = testgen::make_question("q1", "a");
    Question qb = testgen::make_question("q2", "b");
    const auto path = temp_file("clean.jsonl", json(qa).dump() + "\n" + json(qb).dump() + "\n");
    DatasetSummary s = validate_dataset(path);
    REQUIRE(s.ok());
    CHECK(s.total == 2);
    CHECK(s.per_subject.at("a") == 1);
    CHECK(s.per_subject.at("b") == 1);
}

TEST_CASE("validate_dataset collects all violations with line numbers") {
    Question ok = testgen::make_question("q1");
    json three_choices(testgen::make_question("q3"));
    three_choices["choices"] = json::array({"x", "y", "z"});
    const auto path = temp_file("bad.jsonl", json(ok).dump() + "\n" + "{not json\n" +
                                                 three_choices.dump() + "\n" +
                                                 json(ok).dump() + "\n");
    DatasetSummary s = validate_dataset(path);
    REQUIRE_FALSE(s.ok());
    REQUIRE(s.errors.size() == 3);
    CHECK(s.errors[0].find("line 2") != std::string::npos);
    CHECK(s.errors[1].find("line 3") != std::string::npos);
    CHECK(s.errors[1].find("choices must have length 4") != std::string::npos);
    CHECK(s.errors[2].find("duplicate id \"q1\"") != std::string::npos);
    CHECK(s.errors[2].find("line 1") != std::string::npos);  // both lines reported
    CHECK(s.errors[2].find("line 4") != std::string::npos);
}

TEST_CASE("validate_dataset rejects out-of-range gold letters") {
    json q(testgen::make_question("q1"));
    q["answer"] = "E";
    const auto path = temp_file("gold.jsonl", q.dump() + "\n");
    DatasetSummary s = validate_dataset(path);
    REQUIRE(s.errors.size() == 1);
    CHECK(s.errors[0].find("A,B,C,D") != std::string::npos);
}
