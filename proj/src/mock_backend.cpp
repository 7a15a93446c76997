#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "pkeval/digest.hpp"
#include "pkeval/gateway.hpp"
#include "pkeval/jsonl.hpp"
#include "pkeval/rng.hpp"

namespace pkeval {

namespace {

// Vocabulary for synthetic sentences. Content is meaningless; only
// determinism and format conformance matter.
constexpr const char* kWords[] = {
    "pressure",  "momentum",  "equilibrium", "catalyst",   "gradient",  "voltage",
    "entropy",   "inertia",   "frequency",   "amplitude",  "density",   "velocity",
    "reaction",  "isotope",   "molecule",    "spectrum",   "tension",   "friction",
    "current",   "resistance", "diffusion",  "osmosis",    "enzyme",    "neuron",
    "synthesis", "oxidation", "reduction",   "polymer",    "lattice",   "orbital",
    "quantum",   "thermal",   "kinetic",     "potential",  "magnetic",  "electric",
    "nuclear",   "organic",   "aqueous",     "gaseous",    "elastic",   "plastic",
    "relative",  "absolute",  "discrete",    "continuous", "linear",    "cyclic",
};
constexpr size_t kNumWords = sizeof(kWords) / sizeof(kWords[0]);

uint64_t seed_from(const std::string& material) {
    return derive_seed(0, material);
}

std::string pick_words(DetRng& rng, int count) {
    std::ostringstream ss;
    for (int i = 0; i < count; ++i) {
        if (i) ss << ' ';
        ss << kWords[rng.bounded(kNumWords)];
    }
    return ss.str();
}

/// Slice of `text` strictly between two markers; empty when absent.
std::string slice_between(const std::string& text, const std::string& from, const std::string& to) {
    size_t a = text.find(from);
    if (a == std::string::npos) return {};
    a += from.size();
    size_t b = to.empty() ? std::string::npos : text.find(to, a);
    return text.substr(a, b == std::string::npos ? std::string::npos : b - a);
}

std::string trim_copy(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Parses "1. text" lines out of a prompt section.
std::vector<std::string> numbered_items(const std::string& section) {
    std::vector<std::string> items;
    std::istringstream in(section);
    std::string line;
    while (std::getline(in, line)) {
        size_t i = line.find_first_not_of(" \t");
        if (i == std::string::npos) continue;
        size_t d = i;
        while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
        if (d == i || d >= line.size() || (line[d] != '.' && line[d] != ')')) continue;
        std::string item = trim_copy(line.substr(d + 1));
        if (!item.empty()) items.push_back(item);
    }
    return items;
}

/// Knowledge statement i for a question; shared across generator models so
/// that clustering sees genuine duplicates.
std::string knowledge_sentence(const std::string& question_key, size_t i) {
    DetRng rng(seed_from("mock-knowledge|" + question_key + "|" + std::to_string(i)));
    std::string words = pick_words(rng, 3);
    words[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(words[0])));
    return words + " is a principle relevant to this question.";
}

std::string synthesize_extraction(const ChatRequest& req) {
    const std::string question_part =
        trim_copy(slice_between(req.user, "### Question", "### The Answer"));
    const std::string qkey = sha256_hex(question_part);
    DetRng rng(seed_from("mock-extract|" + req.model + "|" + qkey));
    const size_t count = 4 + rng.bounded(4);
    std::ostringstream ss;
    ss << "### Required Conceptual Knowledge\n";
    for (size_t i = 0; i < count; ++i) {
        ss << (i + 1) << ". \"" << knowledge_sentence(qkey, i) << "\"\n";
    }
    return ss.str();
}

std::string synthesize_judgment(const ChatRequest& req) {
    const std::string knowledge =
        slice_between(req.user, "### Required Conceptual Knowledge", "### Rationale");
    const std::string rationale = slice_between(req.user, "### Rationale", "### Evaluation");
    const std::vector<std::string> concepts = numbered_items(knowledge);
    std::ostringstream ss;
    ss << "---\n";
    for (const auto& concept_text : concepts) {
        DetRng rng(seed_from("mock-judge|" + concept_text + "|" + sha256_hex(rationale)));
        const uint64_t app_roll = rng.bounded(100);
        const char* application = app_roll < 40 ? "explicit" : app_roll < 60 ? "implicit" : "unapplied";
        ss << "Concept: " << concept_text << "\n";
        ss << "Application: \"" << application << "\"\n";
        if (app_roll < 60) {
            const bool correct = rng.bounded(100) < 75;
            ss << "Correctness: \"" << (correct ? "correct" : "incorrect") << "\"\n";
            ss << "Details: \"" << (app_roll < 40 ? "Stated directly in the rationale." : "Implied by the reasoning.") << "\"\n";
        } else {
            ss << "Correctness: \"N/A\"\n";
            ss << "Details: \"Not mentioned in the rationale.\"\n";
        }
        ss << "---\n";
    }
    return ss.str();
}

std::string synthesize_answer(const ChatRequest& req) {
    json payload;
    to_json(payload, req);
    DetRng rng(seed_from("mock-answer|" + payload.dump()));
    std::ostringstream ss;
    if (rng.bounded(4) == 0) {
        ss << "<think>" << pick_words(rng, 12) << "</think>";
    }
    const int body_words = 20 + static_cast<int>(rng.bounded(180));
    ss << "Consider the options carefully. " << pick_words(rng, body_words) << ". Answer: "
       << static_cast<char>('A' + rng.bounded(4));
    return ss.str();
}

std::string synthesize_factuality(const ChatRequest& req) {
    DetRng rng(seed_from("mock-fact|" + req.user));
    const bool verdict = rng.bounded(100) < 90;
    std::ostringstream ss;
    ss << "### Feedback:\nThe statement was checked against standard references and "
       << (verdict ? "no factual inaccuracy was found." : "a factual inaccuracy was found.")
       << "\n\n### Evaluation:\n" << (verdict ? "True" : "False");
    return ss.str();
}

std::string synthesize_relevance(const ChatRequest& req) {
    DetRng rng(seed_from("mock-relevance|" + req.user));
    std::ostringstream ss;
    ss << "Evaluation:\nRelevance: The knowledge addresses a concept connected to the question. Score: "
       << (1 + rng.bounded(5));
    return ss.str();
}

}  // namespace

std::shared_ptr<MockBackend> MockBackend::from_fixture_file(const std::filesystem::path& path) {
    auto backend = std::make_shared<MockBackend>();
    json j = json::parse(read_text_file(path));
    for (const auto& rule : j.value("rules", json::array())) {
        backend->add_rule(rule.at("match").get<std::string>(),
                          rule.at("response").get<std::string>());
    }
    if (j.contains("embeddings")) {
        for (const auto& [text, values] : j.at("embeddings").items()) {
            backend->set_embedding(text, values.get<std::vector<double>>());
        }
    }
    backend->set_embed_dim(j.value("embed_dim", 16));
    return backend;
}

void MockBackend::add_rule(std::string match, std::string response) {
    rules_.push_back(MockRule{std::move(match), std::move(response)});
}

void MockBackend::set_embedding(const std::string& text, std::vector<double> values) {
    canned_embeddings_[text] = std::move(values);
}

std::string MockBackend::chat(const ChatRequest& req) {
    for (const auto& rule : rules_) {
        if (req.user.find(rule.match) != std::string::npos ||
            req.system.find(rule.match) != std::string::npos) {
            return rule.response;
        }
    }
    return synthesize(req);
}

std::string MockBackend::synthesize(const ChatRequest& req) const {
    const bool has_answer_header = req.user.find("### The Answer to the Question") != std::string::npos;
    if (has_answer_header &&
        req.user.find("### Required Conceptual Knowledge") != std::string::npos &&
        req.user.find("### Rationale") == std::string::npos) {
        return synthesize_extraction(req);
    }
    if (req.user.find("### Rationale") != std::string::npos &&
        req.user.find("### Evaluation") != std::string::npos) {
        return synthesize_judgment(req);
    }
    if (req.user.find("### Statement to Evaluate:") != std::string::npos) {
        return synthesize_factuality(req);
    }
    if (req.user.find("### Score Rubric:") != std::string::npos) {
        return synthesize_relevance(req);
    }
    if (req.user.find("Answer the following multiple-choice question") != std::string::npos) {
        return synthesize_answer(req);
    }
    json payload;
    to_json(payload, req);
    return "mock-response-" + sha256_hex(payload.dump()).substr(0, 16);
}

std::vector<EmbeddingVector> MockBackend::embed(const std::string& /*model*/,
                                                const std::vector<std::string>& texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        auto it = canned_embeddings_.find(text);
        if (it != canned_embeddings_.end()) {
            out.push_back(EmbeddingVector{it->second});
            continue;
        }
        DetRng rng(seed_from("mock-embed|" + text));
        std::vector<double> v(static_cast<size_t>(embed_dim_));
        double norm2 = 0.0;
        for (auto& x : v) {
            x = rng.uniform_real(-1.0, 1.0);
            norm2 += x * x;
        }
        const double norm = std::sqrt(norm2);
        if (norm > 0) {
            for (auto& x : v) x /= norm;
        } else {
            v[0] = 1.0;
        }
        out.push_back(EmbeddingVector{std::move(v)});
    }
    return out;
}

}  // namespace pkeval
