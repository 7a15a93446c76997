#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace pkeval {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Domain types. All types are immutable-by-convention after construction and
// safe to share across threads. JSONL field names are part of the on-disk
// contract and must not change.
// ---------------------------------------------------------------------------

enum class Split { train, test };

std::string to_string(Split s);
Split split_from_string(std::string_view s);

/// A multiple-choice item with gold answer; the unit of evaluation.
struct Question {
    std::string id;
    std::string subject;
    std::string text;
    std::vector<std::string> choices;  // exactly 4
    char gold = 'A';                   // 'A'..'D', indexes choices
    Split split = Split::train;
};

/// One generator model's raw extraction output for one question.
struct AtomicKnowledgeBatch {
    std::string question_id;
    std::string generator_model;
    std::vector<std::string> units;
};

/// A cluster-representative knowledge statement with its cluster size weight.
struct PKUnit {
    std::string text;
    int weight = 1;       // cluster size, >= 1
    int cluster_id = 0;
    std::string source_model;
};

/// The refined per-question set of principal knowledge units.
struct PKCollection {
    std::string question_id;
    std::vector<PKUnit> units;  // ordered by cluster_id, one per cluster

    int total_weight() const;
};

/// A model's chain-of-thought response after think-stripping and answer
/// extraction. `omitted` marks empty-after-strip or over-length samples that
/// are retained in files but excluded from judging and aggregates.
struct Rationale {
    std::string question_id;
    int sample_id = 0;
    std::string model;
    std::string raw_text;
    std::string clean_text;
    std::optional<char> extracted_answer;  // 'A'..'D'
    bool answer_correct = false;
    int token_count = 0;
    bool omitted = false;
};

enum class Application { explicit_use, implicit_use, unapplied };
enum class Correctness { correct, incorrect, not_applicable };

std::string to_string(Application a);
std::string to_string(Correctness c);
Application application_from_string(std::string_view s);
Correctness correctness_from_string(std::string_view s);

/// Per-unit application/correctness labels from the judge.
/// Invariant: unapplied <=> not_applicable.
struct UnitLabel {
    int unit_index = 0;
    Application application = Application::unapplied;
    Correctness correctness = Correctness::not_applicable;
    std::string details;

    bool applied() const { return application != Application::unapplied; }
};

/// One judge pass over one rationale: exactly one label per PK unit.
/// `failed` marks records whose completion could not be parsed even after the
/// deterministic re-ask; such records carry no labels and are excluded from
/// aggregates.
struct JudgmentRecord {
    std::string question_id;
    int sample_id = 0;
    std::string judge_model;
    std::vector<UnitLabel> labels;
    bool failed = false;
};

/// Per-rationale knowledge-grounded metrics. kp/wkp are absent when zero
/// units were applied; in that case kr = 0 and f1 = 0.
struct MetricsReport {
    std::string question_id;
    int sample_id = 0;
    std::optional<double> kp;
    double kr = 0.0;
    double f1 = 0.0;
    std::optional<double> wkp;
    double wkr = 0.0;
    bool answer_correct = false;
    int token_count = 0;
};

enum class Strategy { answer_driven, kr_random, kr_max, kr_min, len_max, len_min };

std::string to_string(Strategy s);
Strategy strategy_from_string(std::string_view s);

/// Metric snapshot stored on each side of a preference pair.
struct MetricSnapshot {
    int sample_id = 0;
    std::optional<double> wkp;
    double wkr = 0.0;
    int token_count = 0;
    bool answer_correct = false;
};

/// A (prompt, chosen, rejected) triplet with selection metadata.
struct PreferencePair {
    std::string question_id;
    std::string prompt;
    std::string chosen;    // clean_text of the preferred rationale
    std::string rejected;  // clean_text of the dispreferred rationale
    Strategy strategy = Strategy::answer_driven;
    MetricSnapshot chosen_meta;
    MetricSnapshot rejected_meta;
};

// ---------------------------------------------------------------------------
// JSON serialization. from_json validates every invariant and throws
// std::runtime_error with context. Round trip is the identity for every type.
// ---------------------------------------------------------------------------

void to_json(json& j, const Question& q);
void from_json(const json& j, Question& q);
void to_json(json& j, const AtomicKnowledgeBatch& b);
void from_json(const json& j, AtomicKnowledgeBatch& b);
void to_json(json& j, const PKUnit& u);
void from_json(const json& j, PKUnit& u);
void to_json(json& j, const PKCollection& c);
void from_json(const json& j, PKCollection& c);
void to_json(json& j, const Rationale& r);
void from_json(const json& j, Rationale& r);
void to_json(json& j, const UnitLabel& l);
void from_json(const json& j, UnitLabel& l);
void to_json(json& j, const JudgmentRecord& r);
void from_json(const json& j, JudgmentRecord& r);
void to_json(json& j, const MetricsReport& m);
void from_json(const json& j, MetricsReport& m);
void to_json(json& j, const MetricSnapshot& s);
void from_json(const json& j, MetricSnapshot& s);
void to_json(json& j, const PreferencePair& p);
void from_json(const json& j, PreferencePair& p);

// ---------------------------------------------------------------------------
// Think-block stripping and token counting.
// ---------------------------------------------------------------------------

struct ThinkStripResult {
    std::string clean;
    bool omitted = false;  // unterminated <think> or empty after stripping
};

/// Removes well-formed <think>...</think> spans and trims outer whitespace.
/// An unterminated <think> empties the text and flags the rationale omitted.
ThinkStripResult strip_think(std::string_view raw);

/// Counts whitespace-separated tokens.
int count_tokens_ws(std::string_view text);

/// Pluggable tokenizer hook; defaults to whitespace counting. Lengths are
/// only used for relative comparison, so callers may swap in a model
/// tokenizer without affecting metric definitions.
using Tokenizer = std::function<int(std::string_view)>;

Tokenizer whitespace_tokenizer();

// ---------------------------------------------------------------------------
// Dataset validation.
// ---------------------------------------------------------------------------

struct DatasetSummary {
    std::map<std::string, int> per_subject;
    std::map<std::string, int> per_split;
    int total = 0;
    std::vector<std::string> errors;  // empty means the file is valid

    bool ok() const { return errors.empty(); }
};

/// Validates a question JSONL file, collecting all schema violations rather
/// than stopping at the first. Malformed lines, duplicate ids, and invariant
/// breaks are reported with line numbers.
DatasetSummary validate_dataset(const std::filesystem::path& file);

}  // namespace pkeval
