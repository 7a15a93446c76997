#include "pkeval/validation.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>
#include <stdexcept>

#include "pkeval/judging.hpp"
#include "pkeval/prompts.hpp"
#include "pkeval/rng.hpp"

namespace pkeval {

void to_json(json& j, const FactualityVerdict& v) {
    j = json{{"question_id", v.question_id},
             {"unit_index", v.unit_index},
             {"verdict", v.verdict},
             {"feedback", v.feedback}};
}

void from_json(const json& j, FactualityVerdict& v) {
    v.question_id = j.at("question_id").get<std::string>();
    v.unit_index = j.at("unit_index").get<int>();
    v.verdict = j.at("verdict").get<bool>();
    v.feedback = j.at("feedback").get<std::string>();
    if (v.feedback.empty()) throw std::runtime_error("FactualityVerdict: feedback must be non-empty");
}

void to_json(json& j, const RelevanceScore& s) {
    j = json{{"question_id", s.question_id},
             {"unit_index", s.unit_index},
             {"score", s.score},
             {"feedback", s.feedback}};
}

void from_json(const json& j, RelevanceScore& s) {
    s.question_id = j.at("question_id").get<std::string>();
    s.unit_index = j.at("unit_index").get<int>();
    s.score = j.at("score").get<int>();
    if (s.score < 1 || s.score > 5) throw std::runtime_error("RelevanceScore: score out of [1,5]");
    s.feedback = j.value("feedback", std::string{});
}

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

std::optional<FactualityVerdict> parse_factuality(const std::string& completion) {
    static const std::regex eval_re(R"(###\s*Evaluation\s*:?)", std::regex::icase);
    std::smatch m;
    if (!std::regex_search(completion, m, eval_re)) return std::nullopt;
    std::string tail = lower(completion.substr(static_cast<size_t>(m.position() + m.length())));
    // First true/false token after the header, tolerant of brackets/markup.
    static const std::regex verdict_re(R"((true|false))");
    std::smatch vm;
    if (!std::regex_search(tail, vm, verdict_re)) return std::nullopt;

    FactualityVerdict v;
    v.verdict = vm[1].str() == "true";
    static const std::regex feedback_re(R"(###\s*Feedback\s*:?)", std::regex::icase);
    std::smatch fm;
    if (std::regex_search(completion, fm, feedback_re)) {
        const size_t start = static_cast<size_t>(fm.position() + fm.length());
        const size_t end = static_cast<size_t>(m.position());
        v.feedback = trim(completion.substr(start, end > start ? end - start : 0));
    }
    if (v.feedback.empty()) v.feedback = trim(completion.substr(0, static_cast<size_t>(m.position())));
    if (v.feedback.empty()) v.feedback = "(no feedback section)";
    return v;
}

std::optional<RelevanceScore> parse_relevance(const std::string& completion) {
    static const std::regex score_re(R"(score\s*:?\s*\**\s*(\d+))", std::regex::icase);
    std::optional<int> score;
    size_t score_pos = 0;
    for (auto it = std::sregex_iterator(completion.begin(), completion.end(), score_re);
         it != std::sregex_iterator(); ++it) {
        score = std::stoi((*it)[1].str());
        score_pos = static_cast<size_t>(it->position());
    }
    if (!score || *score < 1 || *score > 5) return std::nullopt;
    RelevanceScore s;
    s.score = *score;
    s.feedback = trim(completion.substr(0, score_pos));
    return s;
}

FactualityResult check_factuality(const std::vector<Question>& questions,
                                  const std::vector<PKCollection>& collections,
                                  const std::string& judge_model, Gateway& gateway) {
    std::map<std::string, const Question*> question_by_id;
    for (const auto& q : questions) question_by_id[q.id] = &q;

    FactualityResult result;
    int true_count = 0;
    for (const auto& pk : collections) {
        auto it = question_by_id.find(pk.question_id);
        if (it == question_by_id.end()) {
            throw std::runtime_error("check_factuality: unknown question " + pk.question_id);
        }
        for (size_t u = 0; u < pk.units.size(); ++u) {
            RenderedPrompt prompt = render_prompt(
                PromptTemplate::factuality,
                {{"question", format_question_with_choices(*it->second)},
                 {"knowledge", pk.units[u].text}});
            ChatRequest req;
            req.model = judge_model;
            req.system = prompt.system;
            req.user = prompt.user;
            const std::string completion = gateway.chat(req);
            auto verdict = parse_factuality(completion);
            if (!verdict) {
                result.unparseable += 1;
                continue;
            }
            verdict->question_id = pk.question_id;
            verdict->unit_index = static_cast<int>(u);
            if (verdict->verdict) ++true_count;
            result.verdicts.push_back(std::move(*verdict));
        }
    }
    if (result.verdicts.empty()) {
        throw std::runtime_error("check_factuality: zero parseable verdicts");
    }
    result.accuracy = static_cast<double>(true_count) / static_cast<double>(result.verdicts.size());
    return result;
}

RelevanceResult score_relevance(const std::vector<Question>& questions,
                                const std::vector<PKCollection>& collections,
                                const std::string& judge_model, Gateway& gateway) {
    std::map<std::string, const Question*> question_by_id;
    for (const auto& q : questions) question_by_id[q.id] = &q;

    RelevanceResult result;
    long total = 0;
    for (const auto& pk : collections) {
        auto it = question_by_id.find(pk.question_id);
        if (it == question_by_id.end()) {
            throw std::runtime_error("score_relevance: unknown question " + pk.question_id);
        }
        for (size_t u = 0; u < pk.units.size(); ++u) {
            RenderedPrompt prompt = render_prompt(
                PromptTemplate::relevance,
                {{"question", format_question_with_choices(*it->second)},
                 {"answer", format_gold_answer(*it->second)},
                 {"knowledge", pk.units[u].text}});
            ChatRequest req;
            req.model = judge_model;
            req.system = prompt.system;
            req.user = prompt.user;
            const std::string completion = gateway.chat(req);
            auto score = parse_relevance(completion);
            if (!score) {
                result.unparseable += 1;
                continue;
            }
            score->question_id = pk.question_id;
            score->unit_index = static_cast<int>(u);
            total += score->score;
            result.scores.push_back(std::move(*score));
        }
    }
    if (result.scores.empty()) {
        throw std::runtime_error("score_relevance: zero parseable scores");
    }
    result.mean = static_cast<double>(total) / static_cast<double>(result.scores.size());
    return result;
}

std::string to_string(RemediationMode m) {
    switch (m) {
        case RemediationMode::random: return "random";
        case RemediationMode::correct: return "correct";
        case RemediationMode::incorrect: return "incorrect";
        case RemediationMode::all: return "all";
    }
    throw std::runtime_error("unreachable remediation mode");
}

RemediationMode remediation_mode_from_string(std::string_view s) {
    if (s == "random") return RemediationMode::random;
    if (s == "correct") return RemediationMode::correct;
    if (s == "incorrect") return RemediationMode::incorrect;
    if (s == "all") return RemediationMode::all;
    throw std::runtime_error("unknown remediation mode \"" + std::string(s) + "\"");
}

std::vector<int> remediation_unit_set(const JudgmentRecord& judgment, RemediationMode mode) {
    std::vector<int> out;
    for (const auto& label : judgment.labels) {
        const bool misapplied = label.applied() && label.correctness == Correctness::incorrect;
        const bool unapplied = !label.applied();
        bool include = false;
        switch (mode) {
            case RemediationMode::random: include = true; break;
            case RemediationMode::correct:
                include = label.applied() && label.correctness == Correctness::correct;
                break;
            case RemediationMode::incorrect: include = misapplied; break;
            case RemediationMode::all: include = misapplied || unapplied; break;
        }
        if (include) out.push_back(label.unit_index);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::optional<RemediationOutcome> remediate(const Question& q, const JudgmentRecord& judgment,
                                            const PKCollection& pk, RemediationMode mode,
                                            Gateway& gateway, const std::string& model,
                                            uint64_t seed, const std::string& preamble) {
    std::vector<int> units = remediation_unit_set(judgment, mode);
    if (units.empty()) return std::nullopt;
    if (mode == RemediationMode::random) {
        DetRng rng(derive_seed(seed, q.id));
        units = {units[rng.pick_index(units)]};
    }
    std::vector<std::string> texts;
    texts.reserve(units.size());
    for (int u : units) texts.push_back(pk.units.at(static_cast<size_t>(u)).text);

    ChatRequest req;
    req.model = model;
    req.user = render_remediation_prompt(q, texts, preamble);
    const std::string completion = gateway.chat(req);

    RemediationOutcome outcome;
    outcome.rationale = make_rationale(q, judgment.sample_id, model, completion);
    outcome.supplied_units = std::move(units);
    outcome.mode = mode;
    return outcome;
}

}  // namespace pkeval
