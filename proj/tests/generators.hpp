// Deterministic random-instance generators shared by unit and acceptance tests.
#pragma once

#include <string>
#include <vector>

#include "pkeval/model.hpp"
#include "pkeval/preference.hpp"
#include "pkeval/rng.hpp"

namespace testgen {

inline pkeval::Question make_question(const std::string& id, const std::string& subject = "algebra",
                                      char gold = 'B') {
    pkeval::Question q;
    q.id = id;
    q.subject = subject;
    q.text = "Which value satisfies the equation for case " + id + "?";
    q.choices = {"first option", "second option", "third option", "fourth option"};
    q.gold = gold;
    q.split = pkeval::Split::train;
    return q;
}

inline pkeval::PKCollection make_pk(const std::string& qid, const std::vector<int>& weights) {
    pkeval::PKCollection pk;
    pk.question_id = qid;
    for (size_t i = 0; i < weights.size(); ++i) {
        pkeval::PKUnit u;
        u.text = "Statement " + std::to_string(i) + " about " + qid + ".";
        u.weight = weights[i];
        u.cluster_id = static_cast<int>(i);
        u.source_model = "gen-" + std::to_string(i % 3);
        pk.units.push_back(std::move(u));
    }
    return pk;
}

inline std::vector<pkeval::UnitLabel> random_labels(pkeval::DetRng& rng, size_t n) {
    using pkeval::Application;
    using pkeval::Correctness;
    std::vector<pkeval::UnitLabel> labels;
    labels.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        pkeval::UnitLabel l;
        l.unit_index = static_cast<int>(i);
        const uint64_t roll = rng.bounded(100);
        if (roll < 35) {
            l.application = Application::explicit_use;
        } else if (roll < 55) {
            l.application = Application::implicit_use;
        } else {
            l.application = Application::unapplied;
        }
        if (l.application == Application::unapplied) {
            l.correctness = Correctness::not_applicable;
            l.details = "";
        } else {
            l.correctness = rng.bounded(100) < 70 ? Correctness::correct : Correctness::incorrect;
            l.details = "Detail sentence " + std::to_string(rng.bounded(1000)) + ".";
        }
        labels.push_back(std::move(l));
    }
    return labels;
}

inline std::vector<int> random_weights(pkeval::DetRng& rng, size_t n) {
    std::vector<int> weights(n);
    for (auto& w : weights) w = 1 + static_cast<int>(rng.bounded(5));
    return weights;
}

/// Pools with deliberately coarse metric grids so WKP/WKR and length ties are
/// common; optionally forces all-correct or all-incorrect pools.
inline std::vector<pkeval::Candidate> random_pool(pkeval::DetRng& rng, const std::string& qid,
                                                  size_t max_size) {
    const size_t size = 1 + rng.bounded(max_size);
    const uint64_t pool_kind = rng.bounded(10);  // 0: all correct, 1: all incorrect
    std::vector<pkeval::Candidate> pool;
    pool.reserve(size);
    for (size_t s = 0; s < size; ++s) {
        pkeval::Candidate c;
        c.rationale.question_id = qid;
        c.rationale.sample_id = static_cast<int>(s);
        c.rationale.model = "reasoner";
        c.rationale.clean_text = "Candidate text " + std::to_string(s) + ". Answer: B";
        c.metrics.question_id = qid;
        c.metrics.sample_id = static_cast<int>(s);
        bool correct = rng.bounded(2) == 0;
        if (pool_kind == 0) correct = true;
        if (pool_kind == 1) correct = false;
        c.metrics.answer_correct = correct;
        c.rationale.answer_correct = correct;
        c.rationale.extracted_answer = correct ? 'B' : 'C';
        if (rng.bounded(8) == 0) {
            c.metrics.wkp.reset();  // nothing applied
            c.metrics.wkr = 0.0;
            c.metrics.kr = 0.0;
        } else {
            c.metrics.wkp = 0.5 * static_cast<double>(rng.bounded(5));
            c.metrics.wkr = 0.25 * static_cast<double>(rng.bounded(5));
            c.metrics.kp = 0.5;
            c.metrics.kr = 0.5;
            c.metrics.f1 = 0.5;
        }
        c.metrics.token_count = static_cast<int>(25 * (1 + rng.bounded(8)));  // 25..200
        c.rationale.token_count = c.metrics.token_count;
        pool.push_back(std::move(c));
    }
    return pool;
}

}  // namespace testgen
