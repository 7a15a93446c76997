#include "pkeval/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "pkeval/jsonl.hpp"

namespace pkeval {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

std::string require_string(const json& j, const char* key, const char* type_name) {
    if (!j.contains(key) || !j.at(key).is_string()) {
        fail(std::string(type_name) + ": missing or non-string field '" + key + "'");
    }
    return j.at(key).get<std::string>();
}

int require_int(const json& j, const char* key, const char* type_name) {
    if (!j.contains(key) || !j.at(key).is_number_integer()) {
        fail(std::string(type_name) + ": missing or non-integer field '" + key + "'");
    }
    return j.at(key).get<int>();
}

char parse_letter(const std::string& s, const char* type_name, const char* key) {
    if (s.size() != 1 || s[0] < 'A' || s[0] > 'D') {
        fail(std::string(type_name) + ": field '" + key + "' must be one of A,B,C,D, got \"" + s + "\"");
    }
    return s[0];
}

}  // namespace

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split split_from_string(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    fail("split must be 'train' or 'test', got \"" + std::string(s) + "\"");
}

std::string to_string(Application a) {
    switch (a) {
        case Application::explicit_use: return "explicit";
        case Application::implicit_use: return "implicit";
        case Application::unapplied: return "unapplied";
    }
    fail("unreachable application value");
}

std::string to_string(Correctness c) {
    switch (c) {
        case Correctness::correct: return "correct";
        case Correctness::incorrect: return "incorrect";
        case Correctness::not_applicable: return "not_applicable";
    }
    fail("unreachable correctness value");
}

Application application_from_string(std::string_view s) {
    if (s == "explicit") return Application::explicit_use;
    if (s == "implicit") return Application::implicit_use;
    if (s == "unapplied") return Application::unapplied;
    fail("unknown application \"" + std::string(s) + "\"");
}

Correctness correctness_from_string(std::string_view s) {
    if (s == "correct") return Correctness::correct;
    if (s == "incorrect") return Correctness::incorrect;
    if (s == "not_applicable") return Correctness::not_applicable;
    fail("unknown correctness \"" + std::string(s) + "\"");
}

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::answer_driven: return "answer_driven";
        case Strategy::kr_random: return "kr_random";
        case Strategy::kr_max: return "kr_max";
        case Strategy::kr_min: return "kr_min";
        case Strategy::len_max: return "len_max";
        case Strategy::len_min: return "len_min";
    }
    fail("unreachable strategy value");
}

Strategy strategy_from_string(std::string_view s) {
    if (s == "answer_driven") return Strategy::answer_driven;
    if (s == "kr_random") return Strategy::kr_random;
    if (s == "kr_max") return Strategy::kr_max;
    if (s == "kr_min") return Strategy::kr_min;
    if (s == "len_max") return Strategy::len_max;
    if (s == "len_min") return Strategy::len_min;
    fail("unknown strategy \"" + std::string(s) + "\"");
}

int PKCollection::total_weight() const {
    int sum = 0;
    for (const auto& u : units) sum += u.weight;
    return sum;
}

// --- Question ---------------------------------------------------------------

void to_json(json& j, const Question& q) {
    j = json{{"id", q.id},
             {"subject", q.subject},
             {"question", q.text},
             {"choices", q.choices},
             {"answer", std::string(1, q.gold)},
             {"split", to_string(q.split)}};
}

void from_json(const json& j, Question& q) {
    q.id = require_string(j, "id", "Question");
    q.subject = require_string(j, "subject", "Question");
    q.text = require_string(j, "question", "Question");
    if (!j.contains("choices") || !j.at("choices").is_array()) {
        fail("Question: missing or non-array field 'choices'");
    }
    q.choices = j.at("choices").get<std::vector<std::string>>();
    if (q.choices.size() != 4) {
        fail("Question: choices must have length 4, got " + std::to_string(q.choices.size()));
    }
    q.gold = parse_letter(require_string(j, "answer", "Question"), "Question", "answer");
    q.split = split_from_string(require_string(j, "split", "Question"));
}

// --- AtomicKnowledgeBatch ----------------------------------------------------

void to_json(json& j, const AtomicKnowledgeBatch& b) {
    j = json{{"question_id", b.question_id},
             {"generator_model", b.generator_model},
             {"units", b.units}};
}

void from_json(const json& j, AtomicKnowledgeBatch& b) {
    b.question_id = require_string(j, "question_id", "AtomicKnowledgeBatch");
    b.generator_model = require_string(j, "generator_model", "AtomicKnowledgeBatch");
    if (b.generator_model.empty()) fail("AtomicKnowledgeBatch: generator_model must be non-empty");
    if (!j.contains("units") || !j.at("units").is_array()) {
        fail("AtomicKnowledgeBatch: missing or non-array field 'units'");
    }
    b.units = j.at("units").get<std::vector<std::string>>();
    for (const auto& u : b.units) {
        if (u.find_first_not_of(" \t\r\n") == std::string::npos) {
            fail("AtomicKnowledgeBatch: units must be non-empty after trimming");
        }
    }
}

// --- PKUnit / PKCollection ---------------------------------------------------

void to_json(json& j, const PKUnit& u) {
    j = json{{"text", u.text},
             {"weight", u.weight},
             {"cluster_id", u.cluster_id},
             {"source_model", u.source_model}};
}

void from_json(const json& j, PKUnit& u) {
    u.text = require_string(j, "text", "PKUnit");
    if (u.text.empty()) fail("PKUnit: text must be non-empty");
    u.weight = require_int(j, "weight", "PKUnit");
    if (u.weight < 1) fail("PKUnit: weight must be >= 1, got " + std::to_string(u.weight));
    u.cluster_id = require_int(j, "cluster_id", "PKUnit");
    if (u.cluster_id < 0) fail("PKUnit: cluster_id must be >= 0");
    u.source_model = require_string(j, "source_model", "PKUnit");
}

void to_json(json& j, const PKCollection& c) {
    j = json{{"question_id", c.question_id}, {"units", c.units}};
}

void from_json(const json& j, PKCollection& c) {
    c.question_id = require_string(j, "question_id", "PKCollection");
    if (!j.contains("units") || !j.at("units").is_array()) {
        fail("PKCollection: missing or non-array field 'units'");
    }
    c.units = j.at("units").get<std::vector<PKUnit>>();
    std::set<int> cluster_ids;
    for (const auto& u : c.units) {
        if (!cluster_ids.insert(u.cluster_id).second) {
            fail("PKCollection: duplicate cluster_id " + std::to_string(u.cluster_id) +
                 " for question " + c.question_id);
        }
    }
}

// --- Rationale ---------------------------------------------------------------

void to_json(json& j, const Rationale& r) {
    j = json{{"question_id", r.question_id},
             {"sample_id", r.sample_id},
             {"model", r.model},
             {"raw_text", r.raw_text},
             {"clean_text", r.clean_text},
             {"answer_correct", r.answer_correct},
             {"token_count", r.token_count},
             {"omitted", r.omitted}};
    if (r.extracted_answer) {
        j["extracted_answer"] = std::string(1, *r.extracted_answer);
    } else {
        j["extracted_answer"] = nullptr;
    }
}

void from_json(const json& j, Rationale& r) {
    r.question_id = require_string(j, "question_id", "Rationale");
    r.sample_id = require_int(j, "sample_id", "Rationale");
    if (r.sample_id < 0) fail("Rationale: sample_id must be >= 0");
    r.model = require_string(j, "model", "Rationale");
    r.raw_text = require_string(j, "raw_text", "Rationale");
    r.clean_text = require_string(j, "clean_text", "Rationale");
    if (r.clean_text.find("<think>") != std::string::npos) {
        fail("Rationale: clean_text still contains a <think> tag");
    }
    if (j.contains("extracted_answer") && !j.at("extracted_answer").is_null()) {
        r.extracted_answer =
            parse_letter(j.at("extracted_answer").get<std::string>(), "Rationale", "extracted_answer");
    } else {
        r.extracted_answer.reset();
    }
    if (!j.contains("answer_correct") || !j.at("answer_correct").is_boolean()) {
        fail("Rationale: missing or non-boolean field 'answer_correct'");
    }
    r.answer_correct = j.at("answer_correct").get<bool>();
    if (r.answer_correct && !r.extracted_answer) {
        fail("Rationale: answer_correct requires an extracted answer");
    }
    r.token_count = require_int(j, "token_count", "Rationale");
    if (r.token_count < 0) fail("Rationale: token_count must be >= 0");
    r.omitted = j.value("omitted", false);
}

// --- UnitLabel / JudgmentRecord ----------------------------------------------

void to_json(json& j, const UnitLabel& l) {
    j = json{{"unit_index", l.unit_index},
             {"application", to_string(l.application)},
             {"correctness", to_string(l.correctness)},
             {"details", l.details}};
}

void from_json(const json& j, UnitLabel& l) {
    l.unit_index = require_int(j, "unit_index", "UnitLabel");
    if (l.unit_index < 0) fail("UnitLabel: unit_index must be >= 0");
    l.application = application_from_string(require_string(j, "application", "UnitLabel"));
    l.correctness = correctness_from_string(require_string(j, "correctness", "UnitLabel"));
    l.details = j.value("details", std::string{});
    if (l.application == Application::unapplied && l.correctness != Correctness::not_applicable) {
        fail("UnitLabel: unapplied units must have correctness not_applicable");
    }
    if (l.application != Application::unapplied && l.correctness == Correctness::not_applicable) {
        fail("UnitLabel: applied units must be labeled correct or incorrect");
    }
}

void to_json(json& j, const JudgmentRecord& r) {
    j = json{{"question_id", r.question_id},
             {"sample_id", r.sample_id},
             {"judge_model", r.judge_model},
             {"labels", r.labels},
             {"failed", r.failed}};
}

void from_json(const json& j, JudgmentRecord& r) {
    r.question_id = require_string(j, "question_id", "JudgmentRecord");
    r.sample_id = require_int(j, "sample_id", "JudgmentRecord");
    r.judge_model = require_string(j, "judge_model", "JudgmentRecord");
    if (!j.contains("labels") || !j.at("labels").is_array()) {
        fail("JudgmentRecord: missing or non-array field 'labels'");
    }
    r.labels = j.at("labels").get<std::vector<UnitLabel>>();
    r.failed = j.value("failed", false);
    std::set<int> seen;
    for (const auto& l : r.labels) {
        if (!seen.insert(l.unit_index).second) {
            fail("JudgmentRecord: duplicate unit_index " + std::to_string(l.unit_index));
        }
    }
    // unit_index values must be a permutation of [0, n)
    if (!r.labels.empty()) {
        int n = static_cast<int>(r.labels.size());
        if (*seen.begin() != 0 || *seen.rbegin() != n - 1) {
            fail("JudgmentRecord: unit_index values must cover [0, " + std::to_string(n) + ")");
        }
    }
}

// --- MetricsReport -----------------------------------------------------------

void to_json(json& j, const MetricsReport& m) {
    j = json{{"question_id", m.question_id},
             {"sample_id", m.sample_id},
             {"kr", m.kr},
             {"f1", m.f1},
             {"wkr", m.wkr},
             {"answer_correct", m.answer_correct},
             {"token_count", m.token_count}};
    j["kp"] = m.kp ? json(*m.kp) : json(nullptr);
    j["wkp"] = m.wkp ? json(*m.wkp) : json(nullptr);
}

void from_json(const json& j, MetricsReport& m) {
    m.question_id = require_string(j, "question_id", "MetricsReport");
    m.sample_id = require_int(j, "sample_id", "MetricsReport");
    if (j.contains("kp") && !j.at("kp").is_null()) {
        m.kp = j.at("kp").get<double>();
        if (*m.kp < 0.0 || *m.kp > 1.0) fail("MetricsReport: kp out of [0,1]");
    } else {
        m.kp.reset();
    }
    m.kr = j.at("kr").get<double>();
    m.f1 = j.at("f1").get<double>();
    if (m.kr < 0.0 || m.kr > 1.0) fail("MetricsReport: kr out of [0,1]");
    if (m.f1 < 0.0 || m.f1 > 1.0) fail("MetricsReport: f1 out of [0,1]");
    if (j.contains("wkp") && !j.at("wkp").is_null()) {
        m.wkp = j.at("wkp").get<double>();
        if (*m.wkp < 0.0) fail("MetricsReport: wkp must be non-negative");
    } else {
        m.wkp.reset();
    }
    m.wkr = j.at("wkr").get<double>();
    if (m.wkr < 0.0) fail("MetricsReport: wkr must be non-negative");
    m.answer_correct = j.at("answer_correct").get<bool>();
    m.token_count = require_int(j, "token_count", "MetricsReport");
    if (m.kp.has_value() != m.wkp.has_value()) {
        fail("MetricsReport: kp and wkp must be absent together");
    }
    if (!m.kp && (m.kr != 0.0 || m.f1 != 0.0)) {
        fail("MetricsReport: absent kp requires kr = 0 and f1 = 0");
    }
    if (m.kp && *m.kp > 0.0 && m.kr > 0.0) {
        double expect = 2.0 * *m.kp * m.kr / (*m.kp + m.kr);
        if (std::abs(expect - m.f1) > 1e-12) {
            fail("MetricsReport: f1 is not the harmonic mean of kp and kr");
        }
    }
}

// --- MetricSnapshot / PreferencePair ------------------------------------------

void to_json(json& j, const MetricSnapshot& s) {
    j = json{{"sample_id", s.sample_id},
             {"wkr", s.wkr},
             {"token_count", s.token_count},
             {"answer_correct", s.answer_correct}};
    j["wkp"] = s.wkp ? json(*s.wkp) : json(nullptr);
}

void from_json(const json& j, MetricSnapshot& s) {
    s.sample_id = require_int(j, "sample_id", "MetricSnapshot");
    if (j.contains("wkp") && !j.at("wkp").is_null()) {
        s.wkp = j.at("wkp").get<double>();
    } else {
        s.wkp.reset();
    }
    s.wkr = j.at("wkr").get<double>();
    s.token_count = require_int(j, "token_count", "MetricSnapshot");
    s.answer_correct = j.at("answer_correct").get<bool>();
}

void to_json(json& j, const PreferencePair& p) {
    j = json{{"question_id", p.question_id},
             {"prompt", p.prompt},
             {"chosen", p.chosen},
             {"rejected", p.rejected},
             {"strategy", to_string(p.strategy)},
             {"meta", json{{"chosen", p.chosen_meta}, {"rejected", p.rejected_meta}}}};
}

void from_json(const json& j, PreferencePair& p) {
    p.question_id = require_string(j, "question_id", "PreferencePair");
    p.prompt = require_string(j, "prompt", "PreferencePair");
    p.chosen = require_string(j, "chosen", "PreferencePair");
    p.rejected = require_string(j, "rejected", "PreferencePair");
    p.strategy = strategy_from_string(require_string(j, "strategy", "PreferencePair"));
    if (!j.contains("meta")) fail("PreferencePair: missing field 'meta'");
    p.chosen_meta = j.at("meta").at("chosen").get<MetricSnapshot>();
    p.rejected_meta = j.at("meta").at("rejected").get<MetricSnapshot>();
    if (p.chosen_meta.sample_id == p.rejected_meta.sample_id) {
        fail("PreferencePair: chosen and rejected must be distinct samples");
    }
}

// --- think stripping / tokens --------------------------------------------------

namespace {

std::string trim(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    size_t e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

ThinkStripResult strip_think(std::string_view raw) {
    static constexpr std::string_view kOpen = "<think>";
    static constexpr std::string_view kClose = "</think>";
    std::string text(raw);
    for (;;) {
        size_t open = text.find(kOpen);
        if (open == std::string::npos) break;
        size_t close = text.find(kClose, open + kOpen.size());
        if (close == std::string::npos) {
            // Unterminated thinking block: nothing after it is trustworthy.
            return {std::string{}, true};
        }
        text.erase(open, close + kClose.size() - open);
    }
    std::string clean = trim(text);
    return {clean, clean.empty()};
}

int count_tokens_ws(std::string_view text) {
    int count = 0;
    bool in_token = false;
    for (char c : text) {
        bool ws = c == ' ' || c == '\t' || c == '\r' || c == '\n';
        if (!ws && !in_token) ++count;
        in_token = !ws;
    }
    return count;
}

Tokenizer whitespace_tokenizer() {
    return [](std::string_view text) { return count_tokens_ws(text); };
}

// --- dataset validation --------------------------------------------------------

DatasetSummary validate_dataset(const std::filesystem::path& file) {
    DatasetSummary summary;
    std::unordered_map<std::string, size_t> first_line_of_id;

    std::ifstream in(file);
    if (!in) {
        summary.errors.push_back("cannot open " + file.string());
        return summary;
    }
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            summary.errors.push_back("line " + std::to_string(line_no) +
                                     ": malformed JSON: " + e.what());
            continue;
        }
        Question q;
        try {
            q = obj.get<Question>();
        } catch (const std::exception& e) {
            summary.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
            continue;
        }
        auto [it, inserted] = first_line_of_id.emplace(q.id, line_no);
        if (!inserted) {
            summary.errors.push_back("line " + std::to_string(line_no) + ": duplicate id \"" +
                                     q.id + "\" (first seen at line " +
                                     std::to_string(it->second) + ")");
            continue;
        }
        summary.per_subject[q.subject] += 1;
        summary.per_split[to_string(q.split)] += 1;
        summary.total += 1;
    }
    return summary;
}

}  // namespace pkeval
