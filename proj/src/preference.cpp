#include "pkeval/preference.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "pkeval/gateway.hpp"
#include "pkeval/judging.hpp"
#include "pkeval/prompts.hpp"
#include "pkeval/rng.hpp"

namespace pkeval {

namespace {

double wkp_or_zero(const MetricsReport& m) { return m.wkp.value_or(0.0); }

/// Indices (into `candidates`) of pool members with the given correctness,
/// in pool order.
std::vector<size_t> filter_by_answer(const std::vector<Candidate>& candidates, bool correct) {
    std::vector<size_t> out;
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].metrics.answer_correct == correct) out.push_back(i);
    }
    return out;
}

/// Members of `pool` attaining the extreme of key(), in pool order.
template <typename Key>
std::vector<size_t> arg_extreme(const std::vector<Candidate>& candidates,
                                const std::vector<size_t>& pool, Key key, bool maximize) {
    std::vector<size_t> best;
    double best_v = 0.0;
    for (size_t i : pool) {
        const double v = key(candidates[i]);
        if (best.empty() || (maximize ? v > best_v : v < best_v)) {
            best_v = v;
            best = {i};
        } else if (v == best_v) {
            best.push_back(i);
        }
    }
    return best;
}

size_t lowest_sample_id(const std::vector<Candidate>& candidates,
                        const std::vector<size_t>& pool) {
    size_t best = pool.front();
    for (size_t i : pool) {
        if (candidates[i].metrics.sample_id < candidates[best].metrics.sample_id) best = i;
    }
    return best;
}

/// Resolves WKP ties via the strategy's WKR rule; `invert` flips max/min for
/// the dispreferred side. kr_random consumes one draw whenever it has to pick.
size_t resolve_kr_tie(const std::vector<Candidate>& candidates, std::vector<size_t> ties,
                      Strategy strategy, bool invert, DetRng& rng) {
    if (ties.size() == 1) return ties.front();
    if (strategy == Strategy::kr_random) {
        return ties[rng.pick_index(ties)];
    }
    const bool want_max = (strategy == Strategy::kr_max) != invert;
    ties = arg_extreme(candidates, ties, [](const Candidate& c) { return c.metrics.wkr; }, want_max);
    return lowest_sample_id(candidates, ties);
}

size_t pick_preferred(const std::vector<Candidate>& candidates, const std::vector<size_t>& pool,
                      const SelectionConfig& cfg, DetRng& rng, bool* floor_fallback) {
    switch (cfg.strategy) {
        case Strategy::answer_driven:
            return pool[rng.pick_index(pool)];
        case Strategy::kr_random:
        case Strategy::kr_max:
        case Strategy::kr_min: {
            auto ties = arg_extreme(candidates, pool,
                                    [](const Candidate& c) { return wkp_or_zero(c.metrics); }, true);
            return resolve_kr_tie(candidates, std::move(ties), cfg.strategy, false, rng);
        }
        case Strategy::len_max: {
            auto ties = arg_extreme(candidates, pool,
                                    [](const Candidate& c) { return double(c.metrics.token_count); },
                                    true);
            return lowest_sample_id(candidates, ties);
        }
        case Strategy::len_min: {
            std::vector<size_t> eligible;
            for (size_t i : pool) {
                if (candidates[i].metrics.token_count >= cfg.min_len_floor) eligible.push_back(i);
            }
            if (eligible.empty()) {
                eligible = pool;  // no correct candidate reaches the floor
                if (floor_fallback) *floor_fallback = true;
            }
            auto ties = arg_extreme(candidates, eligible,
                                    [](const Candidate& c) { return double(c.metrics.token_count); },
                                    false);
            return lowest_sample_id(candidates, ties);
        }
    }
    throw std::runtime_error("unreachable strategy");
}

size_t pick_dispreferred(const std::vector<Candidate>& candidates, const std::vector<size_t>& pool,
                         const SelectionConfig& cfg, DetRng& rng) {
    switch (cfg.strategy) {
        case Strategy::answer_driven:
            return pool[rng.pick_index(pool)];
        case Strategy::kr_random:
        case Strategy::kr_max:
        case Strategy::kr_min: {
            auto ties = arg_extreme(candidates, pool,
                                    [](const Candidate& c) { return wkp_or_zero(c.metrics); }, false);
            return resolve_kr_tie(candidates, std::move(ties), cfg.strategy, true, rng);
        }
        case Strategy::len_max: {  // dispreferred: shortest
            auto ties = arg_extreme(candidates, pool,
                                    [](const Candidate& c) { return double(c.metrics.token_count); },
                                    false);
            return lowest_sample_id(candidates, ties);
        }
        case Strategy::len_min: {  // dispreferred: longest
            auto ties = arg_extreme(candidates, pool,
                                    [](const Candidate& c) { return double(c.metrics.token_count); },
                                    true);
            return lowest_sample_id(candidates, ties);
        }
    }
    throw std::runtime_error("unreachable strategy");
}

MetricSnapshot snapshot_of(const Candidate& c) {
    MetricSnapshot s;
    s.sample_id = c.metrics.sample_id;
    s.wkp = c.metrics.wkp;
    s.wkr = c.metrics.wkr;
    s.token_count = c.metrics.token_count;
    s.answer_correct = c.metrics.answer_correct;
    return s;
}

}  // namespace

bool len_min_floor_fallback(const std::vector<Candidate>& candidates, int min_len_floor) {
    bool any_correct = false;
    for (const auto& c : candidates) {
        if (!c.metrics.answer_correct) continue;
        any_correct = true;
        if (c.metrics.token_count >= min_len_floor) return false;
    }
    return any_correct;
}

std::optional<PreferencePair> select_pair(const std::vector<Candidate>& candidates,
                                          const SelectionConfig& cfg, const std::string& prompt) {
    if (candidates.empty()) throw std::runtime_error("select_pair: empty candidate pool");
    const std::string& question_id = candidates.front().metrics.question_id;
    for (const auto& c : candidates) {
        if (c.metrics.question_id != question_id || c.rationale.question_id != question_id) {
            throw std::runtime_error("select_pair: pool spans multiple questions");
        }
        if (c.rationale.sample_id != c.metrics.sample_id) {
            throw std::runtime_error("select_pair: candidate missing its metric snapshot");
        }
    }

    const std::vector<size_t> correct = filter_by_answer(candidates, true);
    const std::vector<size_t> incorrect = filter_by_answer(candidates, false);
    if (correct.empty()) return std::nullopt;  // all-incorrect pool is discarded

    DetRng rng(derive_seed(cfg.seed, question_id));
    bool floor_fallback = false;
    const size_t preferred = pick_preferred(candidates, correct, cfg, rng, &floor_fallback);

    std::vector<size_t> opposite_pool = incorrect;
    if (opposite_pool.empty()) {
        // All-correct pool: dispreferred comes from the correct set minus the
        // preferred candidate, by the same (opposite-extreme) logic.
        for (size_t i : correct) {
            if (i != preferred) opposite_pool.push_back(i);
        }
        if (opposite_pool.empty()) return std::nullopt;  // singleton pool
    }
    const size_t dispreferred = pick_dispreferred(candidates, opposite_pool, cfg, rng);

    PreferencePair pair;
    pair.question_id = question_id;
    pair.prompt = prompt;
    pair.chosen = candidates[preferred].rationale.clean_text;
    pair.rejected = candidates[dispreferred].rationale.clean_text;
    pair.strategy = cfg.strategy;
    pair.chosen_meta = snapshot_of(candidates[preferred]);
    pair.rejected_meta = snapshot_of(candidates[dispreferred]);
    return pair;
}

PrefDatasetResult build_pref_dataset(
    const std::vector<Question>& train_questions,
    const std::map<std::string, std::vector<Candidate>>& pools, const SelectionConfig& cfg) {
    PrefDatasetResult result;
    for (const auto& q : train_questions) {
        auto it = pools.find(q.id);
        if (it == pools.end() || it->second.empty()) {
            result.summary.skipped_no_pool += 1;
            continue;
        }
        if (cfg.strategy == Strategy::len_min &&
            len_min_floor_fallback(it->second, cfg.min_len_floor)) {
            result.summary.floor_fallbacks += 1;
        }
        auto pair = select_pair(it->second, cfg, render_question_prompt(q));
        if (!pair) {
            result.summary.discarded_all_incorrect += 1;
            continue;
        }
        result.pairs.push_back(std::move(*pair));
        result.summary.pairs_emitted += 1;
    }
    return result;
}

std::vector<SftRecord> build_distill_sft(const std::vector<Question>& train_questions,
                                         const std::map<std::string, PKCollection>& pk,
                                         const std::vector<Rationale>& rationales,
                                         const std::vector<JudgmentRecord>& teacher,
                                         const std::string& judge_model, Gateway& gateway,
                                         int samples_per_question) {
    using Key = std::pair<std::string, int>;
    std::map<Key, const Rationale*> rationale_by_key;
    for (const auto& r : rationales) rationale_by_key[{r.question_id, r.sample_id}] = &r;
    std::map<Key, const JudgmentRecord*> judgment_by_key;
    for (const auto& r : teacher) {
        if (!r.failed) judgment_by_key[{r.question_id, r.sample_id}] = &r;
    }

    std::vector<SftRecord> records;
    for (const auto& q : train_questions) {
        auto pk_it = pk.find(q.id);
        if (pk_it == pk.end()) {
            throw std::runtime_error("build_distill_sft: no PK collection for " + q.id);
        }
        for (int sample_id = 0; sample_id < samples_per_question; ++sample_id) {
            auto j_it = judgment_by_key.find({q.id, sample_id});
            auto r_it = rationale_by_key.find({q.id, sample_id});
            if (j_it == judgment_by_key.end() || r_it == rationale_by_key.end()) {
                throw std::runtime_error("build_distill_sft: missing teacher judgment for " +
                                         q.id + "#" + std::to_string(sample_id));
            }
            ChatRequest req = build_judge_request(*r_it->second, q, pk_it->second, judge_model);
            SftRecord record;
            record.question_id = q.id;
            record.sample_id = sample_id;
            record.system = req.system;
            record.user = req.user;
            if (auto cached = gateway.cached_completion(req)) {
                record.assistant = *cached;
                record.assistant_source = "cache";
            } else {
                record.assistant = render_judgment(j_it->second->labels, pk_it->second);
                record.assistant_source = "rerendered";
            }
            records.push_back(std::move(record));
        }
    }
    return records;
}

// --- SFT records ----------------------------------------------------------------

void to_json(json& j, const SftRecord& r) {
    j = json{{"question_id", r.question_id},
             {"sample_id", r.sample_id},
             {"messages",
              json::array({json{{"role", "system"}, {"content", r.system}},
                           json{{"role", "user"}, {"content", r.user}},
                           json{{"role", "assistant"}, {"content", r.assistant}}})},
             {"assistant_source", r.assistant_source}};
}

void from_json(const json& j, SftRecord& r) {
    r.question_id = j.at("question_id").get<std::string>();
    r.sample_id = j.at("sample_id").get<int>();
    const auto& messages = j.at("messages");
    if (!messages.is_array() || messages.size() != 3) {
        throw std::runtime_error("SftRecord: expected three chat messages");
    }
    r.system = messages[0].at("content").get<std::string>();
    r.user = messages[1].at("content").get<std::string>();
    r.assistant = messages[2].at("content").get<std::string>();
    r.assistant_source = j.value("assistant_source", "cache");
}

// --- agreement --------------------------------------------------------------------

namespace {

double binary_f1(const ConfusionCounts& c) {
    const int denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;  // no positives on either side: trivial agreement
    return 2.0 * c.tp / denom;
}

}  // namespace

void to_json(json& j, const AgreementScore& s) {
    auto confusion = [](const ConfusionCounts& c) {
        return json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
    };
    j = json{{"application_f1", s.application_f1},
             {"correctness_f1", s.correctness_f1},
             {"n_units", s.n_units},
             {"application_confusion", confusion(s.application)},
             {"correctness_confusion", confusion(s.correctness)}};
}

AgreementScore agreement(const std::vector<JudgmentRecord>& teacher,
                         const std::vector<JudgmentRecord>& student) {
    using Key = std::pair<std::string, int>;
    std::map<Key, const JudgmentRecord*> teacher_by_key;
    std::map<Key, const JudgmentRecord*> student_by_key;
    for (const auto& r : teacher) {
        if (!r.failed) teacher_by_key[{r.question_id, r.sample_id}] = &r;
    }
    for (const auto& r : student) {
        if (!r.failed) student_by_key[{r.question_id, r.sample_id}] = &r;
    }
    if (teacher_by_key.empty() || teacher_by_key.size() != student_by_key.size()) {
        throw std::runtime_error("agreement: misaligned record sets");
    }

    AgreementScore score;
    for (const auto& [key, t] : teacher_by_key) {
        auto it = student_by_key.find(key);
        if (it == student_by_key.end()) {
            throw std::runtime_error("agreement: student record missing for " + key.first + "#" +
                                     std::to_string(key.second));
        }
        const JudgmentRecord* s = it->second;
        if (t->labels.size() != s->labels.size()) {
            throw std::runtime_error("agreement: label count mismatch for " + key.first + "#" +
                                     std::to_string(key.second));
        }
        // Both sides are unit_index-complete permutations of [0, n).
        std::vector<const UnitLabel*> s_by_index(s->labels.size());
        for (const auto& l : s->labels) s_by_index[static_cast<size_t>(l.unit_index)] = &l;
        for (const auto& tl : t->labels) {
            const UnitLabel& sl = *s_by_index[static_cast<size_t>(tl.unit_index)];
            score.n_units += 1;
            const bool t_applied = tl.applied();
            const bool s_applied = sl.applied();
            if (t_applied && s_applied) score.application.tp += 1;
            else if (!t_applied && s_applied) score.application.fp += 1;
            else if (t_applied && !s_applied) score.application.fn += 1;
            else score.application.tn += 1;

            if (!t_applied) continue;  // correctness task conditions on teacher-applied
            const bool t_correct = tl.correctness == Correctness::correct;
            // A student "unapplied" counts as a negative-class prediction here.
            const bool s_correct = s_applied && sl.correctness == Correctness::correct;
            if (t_correct && s_correct) score.correctness.tp += 1;
            else if (!t_correct && s_correct) score.correctness.fp += 1;
            else if (t_correct && !s_correct) score.correctness.fn += 1;
            else score.correctness.tn += 1;
        }
    }
    score.application_f1 = binary_f1(score.application);
    score.correctness_f1 = binary_f1(score.correctness);
    return score;
}

}  // namespace pkeval
