#include "pkeval/judging.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "pkeval/prompts.hpp"

namespace pkeval {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string strip_wrapping(std::string s) {
    s = trim(s);
    auto is_wrap = [](char c) { return c == '"' || c == '\'' || c == '*' || c == '_' || c == '`'; };
    while (s.size() >= 2 && is_wrap(s.front()) && is_wrap(s.back())) {
        s = trim(s.substr(1, s.size() - 2));
    }
    return s;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

/// Lowercase, collapse whitespace runs, drop punctuation. Used to match judge
/// concept echoes against PK unit texts.
std::string normalize_text(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            pending_space = true;
        }
        // punctuation dropped entirely
    }
    return out;
}

}  // namespace

std::optional<char> extract_answer(const std::string& clean_text) {
    // Primary: last "Answer: <L>" with optional markup and trailing punctuation.
    static const std::regex answer_re(
        R"(answer\s*(?:is)?\s*:?\s*[\*_"'\(\[\{]*\s*([A-Da-d])(?![A-Za-z]))",
        std::regex::icase);
    auto begin = std::sregex_iterator(clean_text.begin(), clean_text.end(), answer_re);
    auto end = std::sregex_iterator();
    std::optional<char> found;
    for (auto it = begin; it != end; ++it) {
        found = static_cast<char>(std::toupper(static_cast<unsigned char>((*it)[1].str()[0])));
    }
    if (found) return found;

    // Fallback: last parenthesized or isolated option letter in the final
    // non-empty line.
    size_t line_end = clean_text.find_last_not_of(" \t\r\n");
    if (line_end == std::string::npos) return std::nullopt;
    size_t line_begin = clean_text.find_last_of('\n', line_end);
    line_begin = line_begin == std::string::npos ? 0 : line_begin + 1;
    const std::string last_line = clean_text.substr(line_begin, line_end - line_begin + 1);

    static const std::regex paren_re(R"([\(\[]([A-Da-d])[\)\]])");
    for (auto it = std::sregex_iterator(last_line.begin(), last_line.end(), paren_re);
         it != std::sregex_iterator(); ++it) {
        found = static_cast<char>(std::toupper(static_cast<unsigned char>((*it)[1].str()[0])));
    }
    if (found) return found;

    static const std::regex isolated_re(R"((?:^|[^A-Za-z0-9])([A-D])(?![A-Za-z0-9]))");
    for (auto it = std::sregex_iterator(last_line.begin(), last_line.end(), isolated_re);
         it != std::sregex_iterator(); ++it) {
        found = (*it)[1].str()[0];
    }
    return found;
}

Rationale make_rationale(const Question& q, int sample_id, const std::string& model,
                         std::string raw_text, int max_token_cap, const Tokenizer& tokenizer) {
    Rationale r;
    r.question_id = q.id;
    r.sample_id = sample_id;
    r.model = model;
    r.raw_text = std::move(raw_text);
    ThinkStripResult stripped = strip_think(r.raw_text);
    r.clean_text = std::move(stripped.clean);
    r.omitted = stripped.omitted;
    r.token_count = tokenizer(r.clean_text);
    if (max_token_cap > 0 && r.token_count >= max_token_cap) r.omitted = true;
    r.extracted_answer = extract_answer(r.clean_text);
    r.answer_correct = r.extracted_answer && *r.extracted_answer == q.gold;
    return r;
}

std::vector<Rationale> sample_rationales(const Question& q, const SamplingPlan& plan,
                                         Gateway& gateway) {
    if (plan.n_samples < 1) throw std::runtime_error("sample_rationales: n_samples must be >= 1");
    std::vector<Rationale> out;
    out.reserve(static_cast<size_t>(plan.n_samples));
    const std::string prompt = render_question_prompt(q);
    for (int sample_id = 0; sample_id < plan.n_samples; ++sample_id) {
        ChatRequest req;
        req.model = plan.rationale_model;
        req.user = prompt;
        req.temperature = plan.temperature;
        req.max_tokens = plan.max_tokens;
        req.seed = sample_id;
        std::string completion = gateway.chat(req);
        out.push_back(make_rationale(q, sample_id, plan.rationale_model, std::move(completion),
                                     plan.max_tokens));
    }
    return out;
}

namespace {

struct ParsedBlock {
    std::optional<std::string> concept_text;
    std::optional<Application> application;
    std::optional<Correctness> correctness;
    std::string details;
};

std::optional<Application> parse_application_value(const std::string& raw) {
    const std::string v = lower(strip_wrapping(raw));
    if (v.rfind("explicit", 0) == 0) return Application::explicit_use;
    if (v.rfind("implicit", 0) == 0) return Application::implicit_use;
    if (v.rfind("unapplied", 0) == 0 || v.rfind("not applied", 0) == 0) return Application::unapplied;
    return std::nullopt;
}

std::optional<Correctness> parse_correctness_value(const std::string& raw) {
    const std::string v = lower(strip_wrapping(raw));
    if (v.rfind("incorrect", 0) == 0) return Correctness::incorrect;
    if (v.rfind("correct", 0) == 0) return Correctness::correct;
    if (v == "n/a" || v == "na" || v == "not applicable" || v == "not_applicable" || v == "none") {
        return Correctness::not_applicable;
    }
    return std::nullopt;
}

std::vector<ParsedBlock> split_blocks(const std::string& completion) {
    std::vector<std::string> chunks;
    {
        std::istringstream in(completion);
        std::string line, current;
        auto is_delimiter = [](const std::string& l) {
            const std::string t = trim(l);
            return t.size() >= 3 && t.find_first_not_of('-') == std::string::npos;
        };
        while (std::getline(in, line)) {
            if (is_delimiter(line)) {
                chunks.push_back(current);
                current.clear();
            } else {
                current += line;
                current += '\n';
            }
        }
        chunks.push_back(current);
    }

    std::vector<ParsedBlock> blocks;
    for (const auto& chunk : chunks) {
        ParsedBlock block;
        bool has_field = false;
        std::istringstream in(chunk);
        std::string line;
        std::string* continuation = nullptr;
        while (std::getline(in, line)) {
            const std::string t = trim(line);
            if (t.empty()) continue;
            size_t colon = t.find(':');
            std::string key = colon == std::string::npos ? "" : lower(strip_wrapping(t.substr(0, colon)));
            std::string value = colon == std::string::npos ? "" : trim(t.substr(colon + 1));
            if (key == "concept" || key == "knowledge") {
                block.concept_text = strip_wrapping(value);
                has_field = true;
                continuation = nullptr;
            } else if (key == "application") {
                block.application = parse_application_value(value);
                has_field = true;
                continuation = nullptr;
            } else if (key == "correctness") {
                block.correctness = parse_correctness_value(value);
                has_field = true;
                continuation = nullptr;
            } else if (key == "details") {
                block.details = strip_wrapping(value);
                has_field = true;
                continuation = &block.details;
            } else if (continuation) {
                *continuation += " " + t;
            }
        }
        if (has_field && block.application) blocks.push_back(std::move(block));
    }
    return blocks;
}

}  // namespace

std::vector<UnitLabel> parse_judgment(const std::string& completion, const PKCollection& pk,
                                      std::vector<std::string>* warnings) {
    auto warn = [&](const std::string& msg) {
        if (warnings) warnings->push_back(msg);
    };
    const std::vector<ParsedBlock> blocks = split_blocks(completion);
    if (blocks.empty()) {
        throw std::runtime_error("parse_judgment: no parseable evaluation blocks");
    }

    const size_t n = pk.units.size();
    std::map<std::string, std::vector<size_t>> unit_by_text;
    for (size_t i = 0; i < n; ++i) {
        unit_by_text[normalize_text(pk.units[i].text)].push_back(i);
    }

    // First pass: match blocks to units by normalized concept text.
    std::vector<int> block_for_unit(n, -1);
    std::vector<bool> block_used(blocks.size(), false);
    for (size_t b = 0; b < blocks.size(); ++b) {
        if (!blocks[b].concept_text) continue;
        auto it = unit_by_text.find(normalize_text(*blocks[b].concept_text));
        if (it == unit_by_text.end()) continue;
        for (size_t unit : it->second) {
            if (block_for_unit[unit] == -1) {
                block_for_unit[unit] = static_cast<int>(b);
                block_used[b] = true;
                break;
            }
        }
    }

    // Second pass: unmatched blocks fill unmatched units in order.
    {
        size_t unit = 0;
        for (size_t b = 0; b < blocks.size(); ++b) {
            if (block_used[b]) continue;
            while (unit < n && block_for_unit[unit] != -1) ++unit;
            if (unit >= n) {
                warn("parse_judgment: extra block ignored (concept: " +
                     blocks[b].concept_text.value_or("<none>") + ")");
                continue;
            }
            if (blocks[b].concept_text) {
                warn("parse_judgment: unknown concept text, matched by block order: " +
                     *blocks[b].concept_text);
            }
            block_for_unit[unit] = static_cast<int>(b);
            block_used[b] = true;
            ++unit;
        }
    }

    std::vector<UnitLabel> labels;
    labels.reserve(n);
    for (size_t unit = 0; unit < n; ++unit) {
        UnitLabel label;
        label.unit_index = static_cast<int>(unit);
        if (block_for_unit[unit] == -1) {
            label.application = Application::unapplied;
            label.correctness = Correctness::not_applicable;
            warn("parse_judgment: no block for unit " + std::to_string(unit) + ", treated as unapplied");
        } else {
            const ParsedBlock& block = blocks[static_cast<size_t>(block_for_unit[unit])];
            label.application = *block.application;
            label.details = block.details;
            Correctness c = block.correctness.value_or(Correctness::not_applicable);
            if (label.application == Application::unapplied) {
                if (c != Correctness::not_applicable) {
                    warn("parse_judgment: unapplied unit " + std::to_string(unit) +
                         " had correctness label, coerced to not_applicable");
                }
                label.correctness = Correctness::not_applicable;
            } else {
                if (c == Correctness::not_applicable) {
                    warn("parse_judgment: applied unit " + std::to_string(unit) +
                         " lacked a correctness verdict, coerced to incorrect");
                    c = Correctness::incorrect;
                }
                label.correctness = c;
            }
        }
        labels.push_back(std::move(label));
    }
    return labels;
}

std::string render_judgment(const std::vector<UnitLabel>& labels, const PKCollection& pk) {
    if (labels.size() != pk.units.size()) {
        throw std::runtime_error("render_judgment: label/unit count mismatch");
    }
    std::ostringstream ss;
    ss << "---\n";
    for (const auto& label : labels) {
        const auto& unit = pk.units.at(static_cast<size_t>(label.unit_index));
        ss << "Concept: " << unit.text << "\n";
        ss << "Application: \"" << to_string(label.application) << "\"\n";
        ss << "Correctness: \""
           << (label.correctness == Correctness::not_applicable ? "N/A" : to_string(label.correctness))
           << "\"\n";
        ss << "Details: \"" << label.details << "\"\n";
        ss << "---\n";
    }
    return ss.str();
}

ChatRequest build_judge_request(const Rationale& r, const Question& q, const PKCollection& pk,
                                const std::string& judge_model) {
    RenderedPrompt prompt = render_prompt(
        PromptTemplate::judgment,
        {{"question", format_question_with_choices(q)},
         {"answer", format_gold_answer(q)},
         {"knowledge", format_knowledge_list(pk.units)},
         {"rationale", r.clean_text}});
    ChatRequest req;
    req.model = judge_model;
    req.system = std::move(prompt.system);
    req.user = std::move(prompt.user);
    req.temperature = 0.0;
    return req;
}

JudgmentRecord judge(const Rationale& r, const Question& q, const PKCollection& pk,
                     const std::string& judge_model, Gateway& gateway,
                     std::vector<std::string>* warnings) {
    if (pk.units.empty()) throw std::runtime_error("judge: empty PK collection for " + q.id);
    if (r.omitted) throw std::runtime_error("judge: rationale is flagged omitted");

    JudgmentRecord record;
    record.question_id = r.question_id;
    record.sample_id = r.sample_id;
    record.judge_model = judge_model;

    ChatRequest req = build_judge_request(r, q, pk, judge_model);
    for (int attempt = 0; attempt < 2; ++attempt) {
        if (attempt == 1) req.seed = 1;  // deterministic re-ask, distinct cache key
        // Gateway/transport errors propagate; only parse failures trigger the
        // re-ask-then-fail path.
        std::string completion = gateway.chat(req);
        try {
            record.labels = parse_judgment(completion, pk, warnings);
            record.failed = false;
            return record;
        } catch (const std::runtime_error&) {
            if (attempt == 1) break;
        }
    }
    record.failed = true;
    record.labels.clear();
    if (warnings) {
        warnings->push_back("judge: unparseable completion for " + r.question_id + "#" +
                            std::to_string(r.sample_id) + " after re-ask; record flagged failed");
    }
    return record;
}

}  // namespace pkeval
