#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pkeval/judging.hpp"
#include "pkeval/kmeans.hpp"
#include "pkeval/metrics.hpp"
#include "pkeval/model.hpp"
#include "pkeval/pk_builder.hpp"
#include "pkeval/preference.hpp"
#include "pkeval/prompts.hpp"
#include "pkeval/pipeline.hpp"

namespace py = pybind11;
using namespace pkeval;

namespace {

UnitLabel label_from_strings(int index, const std::string& application,
                             const std::string& correctness) {
    UnitLabel l;
    l.unit_index = index;
    l.application = application_from_string(application);
    l.correctness = correctness_from_string(correctness);
    return l;
}

py::dict metrics_to_dict(const MetricsReport& m) {
    py::dict d;
    d["kp"] = m.kp ? py::object(py::float_(*m.kp)) : py::object(py::none());
    d["kr"] = m.kr;
    d["f1"] = m.f1;
    d["wkp"] = m.wkp ? py::object(py::float_(*m.wkp)) : py::object(py::none());
    d["wkr"] = m.wkr;
    return d;
}

}  // namespace

PYBIND11_MODULE(_pkeval, m) {
    m.doc() = "Knowledge-grounded reasoning evaluation: core operations";
    m.attr("__version__") = kToolVersion;

    m.def(
        "strip_think",
        [](const std::string& raw) {
            ThinkStripResult r = strip_think(raw);
            return py::make_tuple(r.clean, r.omitted);
        },
        py::arg("raw"), "Remove <think> blocks; returns (clean_text, omitted)");

    m.def("count_tokens", [](const std::string& text) { return count_tokens_ws(text); },
          py::arg("text"), "Whitespace token count");

    m.def(
        "extract_answer",
        [](const std::string& text) -> py::object {
            auto letter = extract_answer(text);
            if (!letter) return py::none();
            return py::str(std::string(1, *letter));
        },
        py::arg("clean_text"), "Final answer letter or None");

    m.def("parse_knowledge_list", &parse_knowledge_list, py::arg("completion"),
          "Unit strings parsed from an extraction completion");

    m.def("cluster_count", &cluster_count, py::arg("unit_counts_per_model"),
          "Cluster count: round-half-up mean + 2, clamped to [1, total]");

    m.def(
        "kmeans",
        [](const std::vector<std::vector<double>>& points, int n, uint64_t seed, int max_iters,
           double tol) {
            std::vector<EmbeddingVector> vectors;
            vectors.reserve(points.size());
            for (const auto& p : points) vectors.push_back(EmbeddingVector{p});
            ClusterConfig cfg;
            cfg.seed = seed;
            cfg.max_iters = max_iters;
            cfg.tol = tol;
            ClusterAssignment a = kmeans(vectors, n, cfg);
            py::dict d;
            d["labels"] = a.labels;
            d["centroids"] = a.centroids;
            d["inertia"] = a.inertia;
            return d;
        },
        py::arg("points"), py::arg("n"), py::arg("seed") = 0, py::arg("max_iters") = 100,
        py::arg("tol") = 1e-4, "Seeded deterministic k-means over row vectors");

    m.def(
        "metrics_from_labels",
        [](const std::vector<std::string>& applications,
           const std::vector<std::string>& correctness, const std::vector<int>& weights) {
            if (applications.size() != correctness.size() || applications.size() != weights.size()) {
                throw std::invalid_argument("applications, correctness, weights must align");
            }
            PKCollection pk;
            pk.question_id = "q";
            JudgmentRecord j;
            j.question_id = "q";
            j.judge_model = "py";
            Rationale r;
            r.question_id = "q";
            for (size_t i = 0; i < applications.size(); ++i) {
                PKUnit u;
                u.text = "unit " + std::to_string(i);
                u.weight = weights[i];
                u.cluster_id = static_cast<int>(i);
                u.source_model = "py";
                pk.units.push_back(std::move(u));
                j.labels.push_back(
                    label_from_strings(static_cast<int>(i), applications[i], correctness[i]));
            }
            return metrics_to_dict(compute_metrics(j, pk, r));
        },
        py::arg("applications"), py::arg("correctness"), py::arg("weights"),
        "KP/KR/F1/WKP/WKR from per-unit label strings and weights");

    m.def(
        "render_prompt",
        [](const std::string& template_name, const std::map<std::string, std::string>& slots) {
            RenderedPrompt p = render_prompt(prompt_template_from_string(template_name), slots);
            return py::make_tuple(p.system, p.user);
        },
        py::arg("template"), py::arg("slots"),
        "(system, user) for knowledge_extraction|judgment|factuality|relevance");

    m.def(
        "parse_judgment",
        [](const std::string& completion, const std::vector<std::string>& unit_texts) {
            PKCollection pk;
            pk.question_id = "q";
            for (size_t i = 0; i < unit_texts.size(); ++i) {
                PKUnit u;
                u.text = unit_texts[i];
                u.cluster_id = static_cast<int>(i);
                u.source_model = "py";
                pk.units.push_back(std::move(u));
            }
            std::vector<py::dict> out;
            for (const auto& label : parse_judgment(completion, pk)) {
                py::dict d;
                d["unit_index"] = label.unit_index;
                d["application"] = to_string(label.application);
                d["correctness"] = to_string(label.correctness);
                d["details"] = label.details;
                out.push_back(std::move(d));
            }
            return out;
        },
        py::arg("completion"), py::arg("unit_texts"),
        "Labels parsed from a judge completion, one per unit");

    m.def(
        "agreement_f1",
        [](const std::vector<std::pair<std::string, std::string>>& teacher,
           const std::vector<std::pair<std::string, std::string>>& student) {
            if (teacher.size() != student.size()) {
                throw std::invalid_argument("teacher and student must align");
            }
            JudgmentRecord t, s;
            t.question_id = s.question_id = "q";
            t.judge_model = "teacher";
            s.judge_model = "student";
            for (size_t i = 0; i < teacher.size(); ++i) {
                t.labels.push_back(label_from_strings(static_cast<int>(i), teacher[i].first,
                                                      teacher[i].second));
                s.labels.push_back(label_from_strings(static_cast<int>(i), student[i].first,
                                                      student[i].second));
            }
            AgreementScore score = agreement({t}, {s});
            py::dict d;
            d["application_f1"] = score.application_f1;
            d["correctness_f1"] = score.correctness_f1;
            d["n_units"] = score.n_units;
            return d;
        },
        py::arg("teacher"), py::arg("student"),
        "Application/correctness F1 from aligned (application, correctness) label pairs");

    m.def(
        "select_pair",
        [](const py::list& candidates, const std::string& strategy, uint64_t seed,
           int min_len_floor) -> py::object {
            std::vector<Candidate> pool;
            for (const auto& item : candidates) {
                py::dict d = item.cast<py::dict>();
                Candidate c;
                c.metrics.question_id = c.rationale.question_id =
                    d.contains("question_id") ? d["question_id"].cast<std::string>() : "q";
                c.metrics.sample_id = c.rationale.sample_id = d["sample_id"].cast<int>();
                c.metrics.answer_correct = c.rationale.answer_correct =
                    d["answer_correct"].cast<bool>();
                c.metrics.token_count = c.rationale.token_count = d["token_count"].cast<int>();
                if (d.contains("wkp") && !d["wkp"].is_none()) {
                    c.metrics.wkp = d["wkp"].cast<double>();
                }
                c.metrics.wkr = d.contains("wkr") ? d["wkr"].cast<double>() : 0.0;
                c.rationale.clean_text =
                    d.contains("text") ? d["text"].cast<std::string>()
                                       : "sample " + std::to_string(c.metrics.sample_id);
                pool.push_back(std::move(c));
            }
            SelectionConfig cfg;
            cfg.strategy = strategy_from_string(strategy);
            cfg.seed = seed;
            cfg.min_len_floor = min_len_floor;
            auto pair = select_pair(pool, cfg);
            if (!pair) return py::none();
            py::dict d;
            d["chosen_sample_id"] = pair->chosen_meta.sample_id;
            d["rejected_sample_id"] = pair->rejected_meta.sample_id;
            d["strategy"] = to_string(pair->strategy);
            return d;
        },
        py::arg("candidates"), py::arg("strategy"), py::arg("seed") = 0,
        py::arg("min_len_floor") = 100,
        "Preference pair over candidate dicts (sample_id, answer_correct, token_count, wkp, wkr)");
}
