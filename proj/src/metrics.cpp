#include "pkeval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

namespace pkeval {

MetricsReport compute_metrics(const JudgmentRecord& j, const PKCollection& pk,
                              const Rationale& r) {
    if (j.question_id != pk.question_id || j.question_id != r.question_id ||
        j.sample_id != r.sample_id) {
        throw std::runtime_error("compute_metrics: mismatched keys");
    }
    if (j.failed) {
        throw std::runtime_error("compute_metrics: judgment record is flagged failed");
    }
    if (j.labels.size() != pk.units.size()) {
        throw std::runtime_error("compute_metrics: " + std::to_string(j.labels.size()) +
                                 " labels for " + std::to_string(pk.units.size()) + " units");
    }

    long applied = 0;
    long correct = 0;
    long correct_weight = 0;
    for (const auto& label : j.labels) {
        if (!label.applied()) continue;
        ++applied;
        if (label.correctness == Correctness::correct) {
            ++correct;
            correct_weight += pk.units.at(static_cast<size_t>(label.unit_index)).weight;
        }
    }
    const long total = static_cast<long>(pk.units.size());

    MetricsReport m;
    m.question_id = j.question_id;
    m.sample_id = j.sample_id;
    m.kr = static_cast<double>(correct) / static_cast<double>(total);
    m.wkr = static_cast<double>(correct_weight) / static_cast<double>(total);
    if (applied > 0) {
        m.kp = static_cast<double>(correct) / static_cast<double>(applied);
        m.wkp = static_cast<double>(correct_weight) / static_cast<double>(applied);
    }
    if (m.kp && (*m.kp + m.kr) > 0.0) {
        m.f1 = 2.0 * *m.kp * m.kr / (*m.kp + m.kr);
    } else {
        m.f1 = 0.0;
    }
    m.answer_correct = r.answer_correct;
    m.token_count = r.token_count;
    return m;
}

std::string to_string(GroupField f) {
    switch (f) {
        case GroupField::model: return "model";
        case GroupField::subject: return "subject";
        case GroupField::category: return "category";
        case GroupField::answer_correct: return "answer_correct";
    }
    throw std::runtime_error("unreachable group field");
}

GroupField group_field_from_string(std::string_view s) {
    if (s == "model") return GroupField::model;
    if (s == "subject") return GroupField::subject;
    if (s == "category") return GroupField::category;
    if (s == "answer_correct") return GroupField::answer_correct;
    throw std::runtime_error("unknown group field \"" + std::string(s) + "\"");
}

void to_json(json& j, const AggregateReport& a) {
    j = json{{"key", a.key},
             {"mean_kr", a.mean_kr},
             {"mean_f1", a.mean_f1},
             {"accuracy", a.accuracy},
             {"mean_token_count", a.mean_token_count},
             {"n", a.n},
             {"n_excluded", a.n_excluded}};
    j["mean_kp"] = a.mean_kp ? json(*a.mean_kp) : json(nullptr);
}

namespace {

std::string field_value(GroupField f, const std::string& model, const std::string& subject,
                        bool answer_correct,
                        const std::map<std::string, std::string>& category_of_subject) {
    switch (f) {
        case GroupField::model: return model;
        case GroupField::subject: return subject;
        case GroupField::category: {
            auto it = category_of_subject.find(subject);
            return it == category_of_subject.end() ? subject : it->second;
        }
        case GroupField::answer_correct: return answer_correct ? "correct" : "incorrect";
    }
    throw std::runtime_error("unreachable group field");
}

std::map<std::string, std::string> build_key(
    const std::vector<GroupField>& group_by, const std::string& model,
    const std::string& subject, bool answer_correct,
    const std::map<std::string, std::string>& category_of_subject) {
    std::map<std::string, std::string> key;
    for (GroupField f : group_by) {
        key[to_string(f)] = field_value(f, model, subject, answer_correct, category_of_subject);
    }
    return key;
}

struct Accumulator {
    double kp_sum = 0.0;
    int kp_n = 0;
    double kr_sum = 0.0;
    double f1_sum = 0.0;
    double token_sum = 0.0;
    int correct_n = 0;
    int n = 0;
    int upstream_excluded = 0;
};

}  // namespace

std::vector<AggregateReport> aggregate(
    const std::vector<TaggedMetrics>& reports, const std::vector<GroupField>& group_by,
    const std::map<std::string, std::string>& category_of_subject,
    const std::vector<ExcludedRecord>& excluded) {
    // std::map keys give the deterministic row order.
    std::map<std::map<std::string, std::string>, Accumulator> groups;
    for (const auto& t : reports) {
        auto key = build_key(group_by, t.model, t.subject, t.report.answer_correct,
                             category_of_subject);
        Accumulator& acc = groups[key];
        acc.n += 1;
        if (t.report.kp) {
            acc.kp_sum += *t.report.kp;
            acc.kp_n += 1;
        }
        acc.kr_sum += t.report.kr;
        acc.f1_sum += t.report.f1;
        acc.token_sum += static_cast<double>(t.report.token_count);
        if (t.report.answer_correct) acc.correct_n += 1;
    }
    for (const auto& e : excluded) {
        auto key = build_key(group_by, e.model, e.subject, e.answer_correct, category_of_subject);
        auto it = groups.find(key);
        if (it != groups.end()) it->second.upstream_excluded += 1;
        // Groups consisting only of excluded records are not emitted (n = 0).
    }

    std::vector<AggregateReport> rows;
    rows.reserve(groups.size());
    for (const auto& [key, acc] : groups) {
        AggregateReport row;
        row.key = key;
        if (acc.kp_n > 0) row.mean_kp = acc.kp_sum / acc.kp_n;
        row.mean_kr = acc.kr_sum / acc.n;
        row.mean_f1 = acc.f1_sum / acc.n;
        row.accuracy = static_cast<double>(acc.correct_n) / acc.n;
        row.mean_token_count = acc.token_sum / acc.n;
        row.n = acc.n;
        row.n_excluded = acc.upstream_excluded + (acc.n - acc.kp_n);
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

std::string fmt(double v, int precision = 4) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(precision) << v;
    return ss.str();
}

std::string fmt_opt(const std::optional<double>& v, int precision = 4) {
    return v ? fmt(*v, precision) : std::string("-");
}

}  // namespace

std::string render_report_markdown(const std::vector<TaggedMetrics>& reports,
                                   const std::vector<ExcludedRecord>& excluded) {
    const auto overall = aggregate(reports, {GroupField::model}, {}, excluded);
    const auto strata =
        aggregate(reports, {GroupField::model, GroupField::answer_correct}, {}, excluded);

    auto stratum_of = [&](const std::string& model, const char* which) -> const AggregateReport* {
        for (const auto& row : strata) {
            if (row.key.at("model") == model && row.key.at("answer_correct") == which) return &row;
        }
        return nullptr;
    };

    std::ostringstream ss;
    ss << "# Knowledge-grounded metrics report\n\n";
    ss << "| Model | Acc | KP (correct) | KR (correct) | F1 (correct) | KP (incorrect) | "
          "KR (incorrect) | F1 (incorrect) | Tokens (correct) | Tokens (incorrect) | n | excluded |\n";
    ss << "|---|---|---|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& row : overall) {
        const std::string& model = row.key.at("model");
        const AggregateReport* c = stratum_of(model, "correct");
        const AggregateReport* i = stratum_of(model, "incorrect");
        ss << "| " << model << " | " << fmt(row.accuracy) << " | "
           << (c ? fmt_opt(c->mean_kp) : "-") << " | " << (c ? fmt(c->mean_kr) : "-") << " | "
           << (c ? fmt(c->mean_f1) : "-") << " | " << (i ? fmt_opt(i->mean_kp) : "-") << " | "
           << (i ? fmt(i->mean_kr) : "-") << " | " << (i ? fmt(i->mean_f1) : "-") << " | "
           << (c ? fmt(c->mean_token_count, 1) : "-") << " | "
           << (i ? fmt(i->mean_token_count, 1) : "-") << " | " << row.n << " | " << row.n_excluded
           << " |\n";
    }
    return ss.str();
}

std::string render_report_csv(const std::vector<AggregateReport>& rows) {
    std::ostringstream ss;
    ss << "group,mean_kp,mean_kr,mean_f1,accuracy,mean_token_count,n,n_excluded\n";
    for (const auto& row : rows) {
        std::string group;
        for (const auto& [field, value] : row.key) {
            if (!group.empty()) group += ';';
            group += field + "=" + value;
        }
        ss << '"' << group << "\"," << fmt_opt(row.mean_kp, 6) << ',' << fmt(row.mean_kr, 6) << ','
           << fmt(row.mean_f1, 6) << ',' << fmt(row.accuracy, 6) << ','
           << fmt(row.mean_token_count, 2) << ',' << row.n << ',' << row.n_excluded << '\n';
    }
    return ss.str();
}

std::map<std::string, std::string> default_subject_categories() {
    static const std::map<std::string, std::string> categories = {
        {"abstract_algebra", "STEM"},
        {"anatomy", "STEM"},
        {"astronomy", "STEM"},
        {"college_biology", "STEM"},
        {"college_chemistry", "STEM"},
        {"college_computer_science", "STEM"},
        {"college_mathematics", "STEM"},
        {"college_physics", "STEM"},
        {"computer_security", "STEM"},
        {"conceptual_physics", "STEM"},
        {"electrical_engineering", "STEM"},
        {"elementary_mathematics", "STEM"},
        {"high_school_biology", "STEM"},
        {"high_school_chemistry", "STEM"},
        {"high_school_computer_science", "STEM"},
        {"high_school_mathematics", "STEM"},
        {"high_school_physics", "STEM"},
        {"high_school_statistics", "STEM"},
        {"machine_learning", "STEM"},
        {"formal_logic", "Humanities"},
        {"high_school_european_history", "Humanities"},
        {"high_school_us_history", "Humanities"},
        {"high_school_world_history", "Humanities"},
        {"international_law", "Humanities"},
        {"jurisprudence", "Humanities"},
        {"logical_fallacies", "Humanities"},
        {"moral_disputes", "Humanities"},
        {"moral_scenarios", "Humanities"},
        {"philosophy", "Humanities"},
        {"prehistory", "Humanities"},
        {"professional_law", "Humanities"},
        {"world_religions", "Humanities"},
        {"econometrics", "Social Sciences"},
        {"high_school_geography", "Social Sciences"},
        {"high_school_government_and_politics", "Social Sciences"},
        {"high_school_macroeconomics", "Social Sciences"},
        {"high_school_microeconomics", "Social Sciences"},
        {"high_school_psychology", "Social Sciences"},
        {"human_sexuality", "Social Sciences"},
        {"professional_psychology", "Social Sciences"},
        {"public_relations", "Social Sciences"},
        {"security_studies", "Social Sciences"},
        {"sociology", "Social Sciences"},
        {"us_foreign_policy", "Social Sciences"},
        {"business_ethics", "Other"},
        {"clinical_knowledge", "Other"},
        {"college_medicine", "Other"},
        {"global_facts", "Other"},
        {"human_aging", "Other"},
        {"management", "Other"},
        {"marketing", "Other"},
        {"medical_genetics", "Other"},
        {"miscellaneous", "Other"},
        {"nutrition", "Other"},
        {"professional_accounting", "Other"},
        {"professional_medicine", "Other"},
        {"virology", "Other"},
    };
    return categories;
}

}  // namespace pkeval
