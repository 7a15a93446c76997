#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pkeval/model.hpp"

namespace pkeval {

struct SelectionConfig {
    Strategy strategy = Strategy::answer_driven;
    uint64_t seed = 0;
    int min_len_floor = 100;  // tokens; len_min preferred candidates below it are avoided
};

/// One pool entry: a rationale joined with its metrics.
struct Candidate {
    Rationale rationale;
    MetricsReport metrics;
};

/// Selects the (preferred, dispreferred) pair for one question's candidate
/// pool, or nullopt when the question is discarded (all candidates incorrect,
/// or no distinct pair exists).
///
/// Ranking rules (candidates keep pool order; WKP/WKR treat an absent value
/// as 0):
///   answer_driven  preferred: uniform draw among correct.
///                  dispreferred: uniform draw among incorrect.
///   kr_*           preferred: argmax WKP among correct; WKP ties break by
///                  strategy (kr_random: uniform draw; kr_max: max WKR;
///                  kr_min: min WKR), remaining ties by lowest sample_id.
///                  dispreferred: argmin WKP among incorrect with the
///                  opposite tie rule (kr_random: independent draw; kr_max:
///                  min WKR; kr_min: max WKR), then lowest sample_id.
///   len_max        preferred: longest correct; dispreferred: shortest
///                  incorrect; length ties by lowest sample_id.
///   len_min        preferred: shortest correct with token_count >=
///                  min_len_floor, falling back to shortest correct overall;
///                  dispreferred: longest incorrect.
/// All-correct pools draw both roles from the correct set: the dispreferred
/// side applies its rule over the correct candidates minus the preferred one.
/// All-incorrect pools are discarded.
///
/// Draw protocol (part of the contract, relied on by the selection oracle):
/// the RNG stream is seeded from (cfg.seed, question_id); the preferred draw
/// always precedes the dispreferred draw; answer_driven consumes one uniform
/// draw per role regardless of pool size, while kr_random consumes a
/// tie-break draw only when two or more candidates remain tied. Every draw
/// picks a uniform index into the candidate sublist in pool order.
std::optional<PreferencePair> select_pair(const std::vector<Candidate>& candidates,
                                          const SelectionConfig& cfg,
                                          const std::string& prompt = "");

struct PrefBuildSummary {
    int pairs_emitted = 0;
    int discarded_all_incorrect = 0;
    int skipped_no_pool = 0;    // no usable (non-omitted, judged) candidate
    int floor_fallbacks = 0;    // len_min pools with no candidate at the floor
};

/// Whether a len_min pool had to fall back below the token floor (reported in
/// the stage summary).
bool len_min_floor_fallback(const std::vector<Candidate>& candidates, int min_len_floor);

struct PrefDatasetResult {
    std::vector<PreferencePair> pairs;  // in train-question order
    PrefBuildSummary summary;
};

/// Runs select_pair over every train question's pool. The pair prompt is the
/// question's rationale-sampling prompt, so it is identical across strategies
/// and runs. Questions without a pool entry are counted skipped.
PrefDatasetResult build_pref_dataset(
    const std::vector<Question>& train_questions,
    const std::map<std::string, std::vector<Candidate>>& pools, const SelectionConfig& cfg);

// --- evaluator distillation ---------------------------------------------------

struct SftRecord {
    std::string question_id;
    int sample_id = 0;
    std::string system;
    std::string user;
    std::string assistant;
    std::string assistant_source;  // "cache" or "rerendered"
};

void to_json(json& j, const SftRecord& r);
void from_json(const json& j, SftRecord& r);

class Gateway;

/// Builds evaluator-distillation SFT data: for each train question and each
/// of the first `samples_per_question` sample_ids, emits the exact judgment
/// prompt plus the teacher's completion. The completion is reconstructed
/// verbatim from the response cache when available, otherwise re-rendered
/// from the parsed labels (assistant_source records which). Failed teacher
/// records throw; they should be filtered upstream.
std::vector<SftRecord> build_distill_sft(const std::vector<Question>& train_questions,
                                         const std::map<std::string, PKCollection>& pk,
                                         const std::vector<Rationale>& rationales,
                                         const std::vector<JudgmentRecord>& teacher,
                                         const std::string& judge_model, Gateway& gateway,
                                         int samples_per_question = 5);

// --- teacher/student agreement -------------------------------------------------

struct ConfusionCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    int tn = 0;

    int total() const { return tp + fp + fn + tn; }
};

struct AgreementScore {
    double application_f1 = 0.0;  // positive class: applied, teacher as reference
    double correctness_f1 = 0.0;  // positive class: correct, over teacher-applied units
    int n_units = 0;
    ConfusionCounts application;
    ConfusionCounts correctness;
};

void to_json(json& j, const AgreementScore& s);

/// Scores teacher/student agreement over records aligned on
/// (question_id, sample_id, unit_index). Records flagged failed on either
/// side are dropped from both; the remaining key sets must match exactly.
/// Application F1 treats applied (explicit or implicit) as the positive
/// class. Correctness F1 is restricted to units the teacher labels applied,
/// with student-unapplied counting as a negative-class prediction.
AgreementScore agreement(const std::vector<JudgmentRecord>& teacher,
                         const std::vector<JudgmentRecord>& student);

}  // namespace pkeval
