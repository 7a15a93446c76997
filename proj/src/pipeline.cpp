#include "pkeval/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pkeval/digest.hpp"
#include "pkeval/jsonl.hpp"
#include "pkeval/metrics.hpp"
#include "pkeval/pk_builder.hpp"
#include "pkeval/prompts.hpp"
#include "pkeval/rng.hpp"

namespace pkeval {

namespace fs = std::filesystem;

// --- config ---------------------------------------------------------------------

PipelineConfig PipelineConfig::from_file(const fs::path& path) {
    return from_json(json::parse(read_text_file(path)));
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        c.paths.dataset = p.value("dataset", c.paths.dataset);
        c.paths.workdir = p.value("workdir", c.paths.workdir);
    }
    c.generator_models = j.value("generator_models", c.generator_models);
    c.judge_model = j.value("judge_model", c.judge_model);
    c.rationale_model = j.value("rationale_model", c.rationale_model);
    c.embed_model = j.value("embed_model", c.embed_model);
    if (j.contains("cluster")) {
        const auto& k = j.at("cluster");
        c.cluster.seed = k.value("seed", c.cluster.seed);
        c.cluster.max_iters = k.value("max_iters", c.cluster.max_iters);
        c.cluster.tol = k.value("tol", c.cluster.tol);
    }
    if (j.contains("sampling")) {
        const auto& s = j.at("sampling");
        c.sampling.n_samples = s.value("n_samples", c.sampling.n_samples);
        c.sampling.temperature = s.value("temperature", c.sampling.temperature);
        c.sampling.max_tokens = s.value("max_tokens", c.sampling.max_tokens);
    }
    c.sampling.rationale_model = c.rationale_model;
    if (j.contains("selection")) {
        const auto& s = j.at("selection");
        if (s.contains("strategy")) {
            c.selection.strategy = strategy_from_string(s.at("strategy").get<std::string>());
        }
        c.selection.seed = s.value("seed", c.selection.seed);
        c.selection.min_len_floor = s.value("min_len_floor", c.selection.min_len_floor);
    }
    if (j.contains("gateway")) {
        const auto& g = j.at("gateway");
        c.gateway.base_url_env = g.value("base_url_env", c.gateway.base_url_env);
        c.gateway.api_key_env = g.value("api_key_env", c.gateway.api_key_env);
        c.gateway.concurrency = g.value("concurrency", c.gateway.concurrency);
        c.gateway.cache_dir = g.value("cache_dir", c.gateway.cache_dir);
        c.gateway.cache_enabled = g.value("cache_enabled", c.gateway.cache_enabled);
        c.gateway.mock = g.value("mock", c.gateway.mock);
        c.gateway.mock_fixture = g.value("mock_fixture", c.gateway.mock_fixture);
        c.gateway.embed_dim = g.value("embed_dim", c.gateway.embed_dim);
        c.gateway.embed_chunk_size = g.value("embed_chunk_size", c.gateway.embed_chunk_size);
        c.gateway.timeout_s = g.value("timeout_s", c.gateway.timeout_s);
    }
    c.remediation_preamble = j.value("remediation_preamble", c.remediation_preamble);
    c.split_seed = j.value("split_seed", c.split_seed);
    c.split_train_fraction = j.value("split_train_fraction", c.split_train_fraction);
    c.distill_samples = j.value("distill_samples", c.distill_samples);
    if (c.sampling.n_samples < 1 || c.sampling.max_tokens < 1) {
        throw std::runtime_error("config: sampling parameters must be positive");
    }
    if (c.cluster.max_iters < 1 || c.cluster.tol <= 0.0) {
        throw std::runtime_error("config: cluster parameters out of range");
    }
    if (c.selection.min_len_floor < 0) {
        throw std::runtime_error("config: min_len_floor must be >= 0");
    }
    return c;
}

json PipelineConfig::to_json() const {
    return json{
        {"paths", {{"dataset", paths.dataset}, {"workdir", paths.workdir}}},
        {"generator_models", generator_models},
        {"judge_model", judge_model},
        {"rationale_model", rationale_model},
        {"embed_model", embed_model},
        {"cluster",
         {{"seed", cluster.seed}, {"max_iters", cluster.max_iters}, {"tol", cluster.tol}}},
        {"sampling",
         {{"n_samples", sampling.n_samples},
          {"temperature", sampling.temperature},
          {"max_tokens", sampling.max_tokens}}},
        {"selection",
         {{"strategy", to_string(selection.strategy)},
          {"seed", selection.seed},
          {"min_len_floor", selection.min_len_floor}}},
        {"gateway",
         {{"base_url_env", gateway.base_url_env},
          {"api_key_env", gateway.api_key_env},
          {"concurrency", gateway.concurrency},
          {"cache_dir", gateway.cache_dir},
          {"cache_enabled", gateway.cache_enabled},
          {"mock", gateway.mock},
          {"mock_fixture", gateway.mock_fixture},
          {"embed_dim", gateway.embed_dim},
          {"embed_chunk_size", gateway.embed_chunk_size},
          {"timeout_s", gateway.timeout_s}}},
        {"remediation_preamble", remediation_preamble},
        {"split_seed", split_seed},
        {"split_train_fraction", split_train_fraction},
        {"distill_samples", distill_samples},
    };
}

// --- stages ----------------------------------------------------------------------

std::string to_string(Stage s) {
    switch (s) {
        case Stage::validate: return "validate";
        case Stage::collect: return "collect";
        case Stage::cluster: return "cluster";
        case Stage::sample: return "sample";
        case Stage::judge: return "judge";
        case Stage::metrics: return "metrics";
        case Stage::prefs: return "prefs";
        case Stage::distill: return "distill";
        case Stage::agreement: return "agreement";
        case Stage::factuality: return "factuality";
        case Stage::relevance: return "relevance";
        case Stage::remediate: return "remediate";
        case Stage::report: return "report";
    }
    throw std::runtime_error("unreachable stage");
}

Stage stage_from_string(std::string_view s) {
    for (Stage stage : all_stages()) {
        if (to_string(stage) == s) return stage;
    }
    throw std::runtime_error("unknown stage \"" + std::string(s) + "\"");
}

std::vector<Stage> all_stages() {
    return {Stage::validate, Stage::collect, Stage::cluster,   Stage::sample,
            Stage::judge,    Stage::metrics, Stage::prefs,     Stage::distill,
            Stage::agreement, Stage::factuality, Stage::relevance, Stage::remediate,
            Stage::report};
}

PipelineConfig effective_config(const PipelineConfig& config, const StageFlags& flags) {
    PipelineConfig c = config;
    if (flags.mock) c.gateway.mock = *flags.mock;
    if (flags.seed) {
        c.selection.seed = *flags.seed;
        c.cluster.seed = *flags.seed;
        c.split_seed = *flags.seed;
    }
    if (flags.strategy) c.selection.strategy = *flags.strategy;
    return c;
}

std::shared_ptr<Gateway> make_gateway(const PipelineConfig& config) {
    std::shared_ptr<Backend> backend;
    if (config.gateway.mock) {
        if (!config.gateway.mock_fixture.empty()) {
            backend = MockBackend::from_fixture_file(config.gateway.mock_fixture);
        } else {
            auto mock = std::make_shared<MockBackend>();
            mock->set_embed_dim(config.gateway.embed_dim);
            backend = mock;
        }
    } else {
        const char* base_url = std::getenv(config.gateway.base_url_env.c_str());
        if (!base_url || !*base_url) {
            throw std::runtime_error("gateway: set " + config.gateway.base_url_env +
                                     " or run with --mock");
        }
        HttpBackendConfig http;
        http.base_url = base_url;
        const char* key = std::getenv(config.gateway.api_key_env.c_str());
        http.api_key = key ? key : "";
        http.timeout_s = config.gateway.timeout_s;
        backend = std::make_shared<HttpBackend>(http);
    }
    GatewayConfig gw;
    gw.cache_dir = config.resolved_cache_dir();
    gw.cache_enabled = config.gateway.cache_enabled;
    gw.concurrency = config.gateway.concurrency;
    gw.embed_chunk_size = config.gateway.embed_chunk_size;
    return std::make_shared<Gateway>(std::move(backend), std::move(gw));
}

void assign_splits(std::vector<Question>& questions, uint64_t seed, double train_fraction) {
    std::map<std::string, std::vector<size_t>> by_subject;
    for (size_t i = 0; i < questions.size(); ++i) {
        by_subject[questions[i].subject].push_back(i);
    }
    for (auto& [subject, indices] : by_subject) {
        DetRng rng(derive_seed(seed, "split|" + subject));
        rng.shuffle(indices);
        const size_t n_train = static_cast<size_t>(
            std::min<double>(static_cast<double>(indices.size()),
                             std::floor(train_fraction * static_cast<double>(indices.size()) + 0.5)));
        for (size_t k = 0; k < indices.size(); ++k) {
            questions[indices[k]].split = k < n_train ? Split::train : Split::test;
        }
    }
}

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

struct MissingInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string pad_key(int v) {
    std::ostringstream ss;
    ss << std::setw(8) << std::setfill('0') << v;
    return ss.str();
}

/// Runs fn(i) for i in [0, count) on a bounded worker pool. The first thrown
/// exception aborts remaining work and is rethrown after the joins.
template <typename Fn>
void parallel_for(size_t count, int workers, Fn&& fn) {
    workers = std::max(1, std::min<int>(workers, static_cast<int>(count ? count : 1)));
    if (workers == 1) {
        for (size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::atomic<bool> abort{false};
    std::mutex err_mu;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= count || abort.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                    abort.store(true);
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

/// Keyed, resumable output collector. Completed rows are appended to
/// <final>.partial as they finish; finalize() sorts by key, writes the final
/// file, and removes the partial. A crash leaves the partial in place so a
/// rerun can skip completed keys.
class StageOutput {
public:
    explicit StageOutput(fs::path final_path) : final_path_(std::move(final_path)) {
        partial_path_ = final_path_;
        partial_path_ += ".partial";
        if (fs::exists(partial_path_)) {
            for_each_jsonl(partial_path_, [&](size_t, json&& row) {
                rows_[row.at("key").get<std::string>()] = row.at("row");
            });
        }
    }

    bool done(const std::string& key) const { return rows_.count(key) > 0; }
    size_t resumed() const { return rows_.size(); }

    void add(const std::string& key, json row) {
        std::lock_guard<std::mutex> lock(mu_);
        append_jsonl(partial_path_, json{{"key", key}, {"row", row}});
        rows_[key] = std::move(row);
    }

    std::vector<json> finalize() {
        std::vector<json> rows;
        rows.reserve(rows_.size());
        for (auto& [key, row] : rows_) rows.push_back(row);
        write_jsonl(final_path_, rows);
        fs::remove(partial_path_);
        return rows;
    }

private:
    fs::path final_path_;
    fs::path partial_path_;
    std::map<std::string, json> rows_;  // sorted by key
    std::mutex mu_;
};

/// Per-stage bookkeeping: input registration, completed-manifest check, and
/// manifest emission.
struct StageIo {
    Stage stage;
    const PipelineConfig& cfg;
    json params;
    fs::path dir;
    bool force = false;
    std::map<std::string, std::string> inputs;  // path -> digest

    StageIo(Stage s, const PipelineConfig& c, json params_json, bool force_rerun)
        : stage(s),
          cfg(c),
          params(std::move(params_json)),
          dir(c.stage_dir(to_string(s))),
          force(force_rerun) {}

    fs::path input_from(Stage producer, const std::string& filename) {
        const fs::path path = cfg.stage_dir(to_string(producer)) / filename;
        if (!fs::exists(path)) {
            throw MissingInputError(to_string(stage) + ": requires " + filename + " (run " +
                                    to_string(producer) + ")");
        }
        inputs[path.string()] = sha256_file(path);
        return path;
    }

    fs::path external_input(const std::string& path_str, const std::string& what) {
        const fs::path path = path_str;
        if (path_str.empty() || !fs::exists(path)) {
            throw MissingInputError(to_string(stage) + ": " + what + " not found: " +
                                    (path_str.empty() ? "<unset>" : path_str));
        }
        inputs[path.string()] = sha256_file(path);
        return path;
    }

    std::string params_digest() const {
        json j{{"config", cfg.to_json()}, {"params", params}};
        return sha256_hex(j.dump());
    }

    /// True when a manifest from a previous run matches the current inputs,
    /// params, and outputs, so the stage can no-op.
    bool already_complete() const {
        if (force) return false;
        const fs::path manifest_path = dir / "manifest.json";
        if (!fs::exists(manifest_path)) return false;
        json m;
        try {
            m = json::parse(read_text_file(manifest_path));
        } catch (...) {
            return false;
        }
        if (m.value("tool_version", "") != kToolVersion) return false;
        if (m.value("params_digest", "") != params_digest()) return false;
        if (!m.contains("inputs") || m["inputs"] != json(inputs)) return false;
        const json outputs = m.value("outputs", json::object());
        for (const auto& [name, digest] : outputs.items()) {
            const fs::path out = dir / name;
            if (!fs::exists(out) || sha256_file(out) != digest.get<std::string>()) return false;
        }
        return true;
    }

    void write_manifest(const std::vector<std::string>& output_files) const {
        json outputs = json::object();
        for (const auto& name : output_files) {
            outputs[name] = sha256_file(dir / name);
        }
        json manifest{{"stage", to_string(stage)},
                      {"tool_version", kToolVersion},
                      {"params_digest", params_digest()},
                      {"inputs", inputs},
                      {"outputs", outputs}};
        write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
    }
};

// --- typed loaders -----------------------------------------------------------------

std::vector<Question> load_questions(const fs::path& path) {
    std::vector<Question> out;
    for_each_jsonl(path, [&](size_t, json&& j) { out.push_back(j.get<Question>()); });
    return out;
}

std::map<std::string, PKCollection> load_pk(const fs::path& path) {
    std::map<std::string, PKCollection> out;
    for_each_jsonl(path, [&](size_t, json&& j) {
        PKCollection pk = j.get<PKCollection>();
        out[pk.question_id] = std::move(pk);
    });
    return out;
}

std::vector<Rationale> load_rationales(const fs::path& path) {
    std::vector<Rationale> out;
    for_each_jsonl(path, [&](size_t, json&& j) { out.push_back(j.get<Rationale>()); });
    return out;
}

std::vector<JudgmentRecord> load_judgments(const fs::path& path) {
    std::vector<JudgmentRecord> out;
    for_each_jsonl(path, [&](size_t, json&& j) { out.push_back(j.get<JudgmentRecord>()); });
    return out;
}

struct MetricsFile {
    std::vector<TaggedMetrics> rows;
};

MetricsFile load_metrics(const fs::path& path) {
    MetricsFile out;
    for_each_jsonl(path, [&](size_t, json&& j) {
        TaggedMetrics t;
        t.report = j.get<MetricsReport>();
        t.model = j.value("model", std::string{});
        t.subject = j.value("subject", std::string{});
        out.rows.push_back(std::move(t));
    });
    return out;
}

std::vector<ExcludedRecord> load_excluded(const fs::path& path) {
    std::vector<ExcludedRecord> out;
    if (!fs::exists(path)) return out;
    for_each_jsonl(path, [&](size_t, json&& j) {
        out.push_back(ExcludedRecord{j.value("model", std::string{}),
                                     j.value("subject", std::string{}),
                                     j.value("answer_correct", false)});
    });
    return out;
}

std::vector<Question> train_questions_sorted(const std::vector<Question>& questions) {
    std::vector<Question> train;
    for (const auto& q : questions) {
        if (q.split == Split::train) train.push_back(q);
    }
    std::sort(train.begin(), train.end(),
              [](const Question& a, const Question& b) { return a.id < b.id; });
    return train;
}

// --- stage implementations -----------------------------------------------------------

StageResult stage_validate(StageIo& io, const PipelineConfig& cfg, const StageFlags& flags) {
    const fs::path dataset = io.external_input(cfg.paths.dataset, "dataset file");
    if (io.already_complete()) return {0, "validate: up to date"};

    DatasetSummary summary = validate_dataset(dataset);
    json summary_json{{"total", summary.total},
                      {"per_subject", summary.per_subject},
                      {"per_split", summary.per_split},
                      {"errors", summary.errors}};
    if (!summary.ok()) {
        write_text_file(io.dir / "summary.json", summary_json.dump(2) + "\n");
        std::string msg = "validate: " + std::to_string(summary.errors.size()) + " error(s); first: " +
                          summary.errors.front();
        return {1, msg};
    }

    std::vector<Question> questions = load_questions(dataset);
    if (flags.do_split) {
        assign_splits(questions, cfg.split_seed, cfg.split_train_fraction);
        summary_json["per_split"].clear();
        for (const auto& q : questions) {
            const std::string s = to_string(q.split);
            summary_json["per_split"][s] = summary_json["per_split"].value(s, 0) + 1;
        }
    }
    std::vector<json> rows;
    rows.reserve(questions.size());
    for (const auto& q : questions) rows.push_back(json(q));
    write_jsonl(io.dir / "questions.jsonl", rows);
    write_text_file(io.dir / "summary.json", summary_json.dump(2) + "\n");
    io.write_manifest({"questions.jsonl", "summary.json"});
    return {0, "validate: " + std::to_string(summary.total) + " questions OK"};
}

StageResult stage_collect(StageIo& io, const PipelineConfig& cfg) {
    const fs::path questions_path = io.input_from(Stage::validate, "questions.jsonl");
    if (cfg.generator_models.empty()) {
        return {1, "collect: config has no generator_models"};
    }
    if (io.already_complete()) return {0, "collect: up to date"};

    const std::vector<Question> questions = load_questions(questions_path);
    auto gateway = make_gateway(cfg);
    StageOutput output(io.dir / "atomic.jsonl");

    struct Item {
        const Question* q;
        const std::string* model;
    };
    std::vector<Item> items;
    for (const auto& q : questions) {
        for (const auto& model : cfg.generator_models) items.push_back({&q, &model});
    }

    std::atomic<int> empty_batches{0};
    parallel_for(items.size(), cfg.gateway.concurrency, [&](size_t i) {
        const Item& item = items[i];
        const std::string key = item.q->id + "\x1f" + *item.model;
        if (output.done(key)) return;
        RenderedPrompt prompt = render_prompt(
            PromptTemplate::knowledge_extraction,
            {{"question", format_question_with_choices(*item.q)},
             {"answer", format_gold_answer(*item.q)}});
        ChatRequest req;
        req.model = *item.model;
        req.system = prompt.system;
        req.user = prompt.user;
        const std::string completion = gateway->chat(req);
        AtomicKnowledgeBatch batch;
        batch.question_id = item.q->id;
        batch.generator_model = *item.model;
        batch.units = parse_knowledge_list(completion);
        if (batch.units.empty()) empty_batches.fetch_add(1);
        output.add(key, json(batch));
    });

    const auto rows = output.finalize();
    long units_total = 0;
    for (const auto& row : rows) units_total += static_cast<long>(row.at("units").size());
    json summary{{"batches", rows.size()},
                 {"empty_batches", empty_batches.load()},
                 {"units_total", units_total}};
    write_text_file(io.dir / "summary.json", summary.dump(2) + "\n");
    io.write_manifest({"atomic.jsonl", "summary.json"});
    if (empty_batches.load() > 0) {
        return {2, "collect: " + std::to_string(empty_batches.load()) + " empty batch(es) flagged"};
    }
    return {0, "collect: " + std::to_string(rows.size()) + " batches, " +
                   std::to_string(units_total) + " units"};
}

StageResult stage_cluster(StageIo& io, const PipelineConfig& cfg) {
    const fs::path atomic_path = io.input_from(Stage::collect, "atomic.jsonl");
    if (io.already_complete()) return {0, "cluster: up to date"};

    std::map<std::string, std::vector<AtomicKnowledgeBatch>> batches_by_question;
    for_each_jsonl(atomic_path, [&](size_t, json&& j) {
        AtomicKnowledgeBatch b = j.get<AtomicKnowledgeBatch>();
        batches_by_question[b.question_id].push_back(std::move(b));
    });
    std::vector<const std::vector<AtomicKnowledgeBatch>*> groups;
    std::vector<std::string> group_ids;
    for (const auto& [qid, batches] : batches_by_question) {
        group_ids.push_back(qid);
        groups.push_back(&batches);
    }

    auto gateway = make_gateway(cfg);
    StageOutput output(io.dir / "pk.jsonl");
    std::atomic<int> skipped{0};
    parallel_for(groups.size(), cfg.gateway.concurrency, [&](size_t i) {
        const std::string& key = group_ids[i];
        if (output.done(key)) return;
        bool any_units = false;
        for (const auto& b : *groups[i]) any_units = any_units || !b.units.empty();
        if (!any_units) {
            skipped.fetch_add(1);
            return;
        }
        PKCollection pk = refine(*groups[i], *gateway, cfg.cluster, cfg.embed_model);
        output.add(key, json(pk));
    });

    const auto rows = output.finalize();
    long total_units = 0;
    long total_weight = 0;
    for (const auto& row : rows) {
        PKCollection pk = row.get<PKCollection>();
        total_units += static_cast<long>(pk.units.size());
        total_weight += pk.total_weight();
    }
    json summary{{"questions", rows.size()},
                 {"skipped_empty", skipped.load()},
                 {"total_units", total_units},
                 {"total_weight", total_weight}};
    write_text_file(io.dir / "summary.json", summary.dump(2) + "\n");
    io.write_manifest({"pk.jsonl", "summary.json"});
    if (skipped.load() > 0) {
        return {2, "cluster: " + std::to_string(skipped.load()) + " question(s) had no units"};
    }
    return {0, "cluster: " + std::to_string(rows.size()) + " collections, " +
                   std::to_string(total_units) + " units"};
}

StageResult stage_sample(StageIo& io, const PipelineConfig& cfg) {
    const fs::path questions_path = io.input_from(Stage::validate, "questions.jsonl");
    if (io.already_complete()) return {0, "sample: up to date"};

    const std::vector<Question> questions = load_questions(questions_path);
    auto gateway = make_gateway(cfg);
    StageOutput output(io.dir / "rationales.jsonl");

    struct Item {
        const Question* q;
        int sample_id;
    };
    std::vector<Item> items;
    for (const auto& q : questions) {
        for (int s = 0; s < cfg.sampling.n_samples; ++s) items.push_back({&q, s});
    }

    std::atomic<int> omitted{0};
    parallel_for(items.size(), cfg.gateway.concurrency, [&](size_t i) {
        const Item& item = items[i];
        const std::string key = item.q->id + "\x1f" + pad_key(item.sample_id);
        if (output.done(key)) return;
        ChatRequest req;
        req.model = cfg.sampling.rationale_model;
        req.user = render_question_prompt(*item.q);
        req.temperature = cfg.sampling.temperature;
        req.max_tokens = cfg.sampling.max_tokens;
        req.seed = item.sample_id;
        const std::string completion = gateway->chat(req);
        Rationale r = make_rationale(*item.q, item.sample_id, cfg.sampling.rationale_model,
                                     completion, cfg.sampling.max_tokens);
        if (r.omitted) omitted.fetch_add(1);
        output.add(key, json(r));
    });

    const auto rows = output.finalize();
    json summary{{"rationales", rows.size()}, {"omitted", omitted.load()}};
    write_text_file(io.dir / "summary.json", summary.dump(2) + "\n");
    io.write_manifest({"rationales.jsonl", "summary.json"});
    return {0, "sample: " + std::to_string(rows.size()) + " rationales (" +
                   std::to_string(omitted.load()) + " omitted)"};
}

StageResult stage_judge(StageIo& io, const PipelineConfig& cfg) {
    const fs::path rationales_path = io.input_from(Stage::sample, "rationales.jsonl");
    const fs::path pk_path = io.input_from(Stage::cluster, "pk.jsonl");
    const fs::path questions_path = io.input_from(Stage::validate, "questions.jsonl");
    if (io.already_complete()) return {0, "judge: up to date"};

    const std::vector<Question> questions = load_questions(questions_path);
    std::map<std::string, const Question*> question_by_id;
    for (const auto& q : questions) question_by_id[q.id] = &q;
    const auto pk = load_pk(pk_path);
    const std::vector<Rationale> rationales = load_rationales(rationales_path);

    std::vector<const Rationale*> items;
    int skipped_omitted = 0;
    int skipped_no_pk = 0;
    for (const auto& r : rationales) {
        if (r.omitted) {
            ++skipped_omitted;
            continue;
        }
        if (!pk.count(r.question_id)) {
            ++skipped_no_pk;
            continue;
        }
        items.push_back(&r);
    }

    auto gateway = make_gateway(cfg);
    StageOutput output(io.dir / "judgments.jsonl");
    std::atomic<int> failed{0};
    std::mutex warn_mu;
    std::vector<std::string> warnings;
    parallel_for(items.size(), cfg.gateway.concurrency, [&](size_t i) {
        const Rationale& r = *items[i];
        const std::string key = r.question_id + "\x1f" + pad_key(r.sample_id);
        if (output.done(key)) return;
        std::vector<std::string> local_warnings;
        JudgmentRecord record = judge(r, *question_by_id.at(r.question_id), pk.at(r.question_id),
                                      cfg.judge_model, *gateway, &local_warnings);
        if (record.failed) failed.fetch_add(1);
        if (!local_warnings.empty()) {
            std::lock_guard<std::mutex> lock(warn_mu);
            warnings.insert(warnings.end(), local_warnings.begin(), local_warnings.end());
        }
        output.add(key, json(record));
    });

    const auto rows = output.finalize();
    std::sort(warnings.begin(), warnings.end());
    json summary{{"judged", rows.size()},
                 {"failed", failed.load()},
                 {"skipped_omitted", skipped_omitted},
                 {"skipped_no_pk", skipped_no_pk},
                 {"warnings", warnings}};
    write_text_file(io.dir / "summary.json", summary.dump(2) + "\n");
    io.write_manifest({"judgments.jsonl", "summary.json"});
    if (failed.load() > 0) {
        return {2, "judge: " + std::to_string(failed.load()) + " record(s) failed to parse"};
    }
    return {0, "judge: " + std::to_string(rows.size()) + " records"};
}

StageResult stage_metrics(StageIo& io, const PipelineConfig& cfg) {
    const fs::path judgments_path = io.input_from(Stage::judge, "judgments.jsonl");
    const fs::path pk_path = io.input_from(Stage::cluster, "pk.jsonl");
    const fs::path rationales_path = io.input_from(Stage::sample, "rationales.jsonl");
    const fs::path questions_path = io.input_from(Stage::validate, "questions.jsonl");
    if (io.already_complete()) return {0, "metrics: up to date"};

    const std::vector<Question> questions = load_questions(questions_path);
    std::map<std::string, std::string> subject_by_id;
    for (const auto& q : questions) subject_by_id[q.id] = q.subject;
    const auto pk = load_pk(pk_path);
    const std::vector<Rationale> rationales = load_rationales(rationales_path);
    std::map<std::pair<std::string, int>, const Rationale*> rationale_by_key;
    for (const auto& r : rationales) rationale_by_key[{r.question_id, r.sample_id}] = &r;

    std::vector<json> rows;
    std::vector<json> excluded;
    for (const auto& r : rationales) {
        if (r.omitted) {
            excluded.push_back(json{{"question_id", r.question_id},
                                    {"sample_id", r.sample_id},
                                    {"model", r.model},
                                    {"subject", subject_by_id.at(r.question_id)},
                                    {"answer_correct", r.answer_correct},
                                    {"reason", "omitted"}});
        }
    }
    for_each_jsonl(judgments_path, [&](size_t, json&& j) {
        JudgmentRecord record = j.get<JudgmentRecord>();
        auto r_it = rationale_by_key.find({record.question_id, record.sample_id});
        if (r_it == rationale_by_key.end()) {
            fail("metrics: judgment for unknown rationale " + record.question_id + "#" +
                 std::to_string(record.sample_id));
        }
        const Rationale& r = *r_it->second;
        if (record.failed) {
            excluded.push_back(json{{"question_id", r.question_id},
                                    {"sample_id", r.sample_id},
                                    {"model", r.model},
                                    {"subject", subject_by_id.at(r.question_id)},
                                    {"answer_correct", r.answer_correct},
                                    {"reason", "judge_failed"}});
            return;
        }
        MetricsReport m = compute_metrics(record, pk.at(record.question_id), r);
        json row(m);
        row["model"] = r.model;
        row["subject"] = subject_by_id.at(r.question_id);
        rows.push_back(std::move(row));
    });

    std::sort(rows.begin(), rows.end(), [](const json& a, const json& b) {
        auto key = [](const json& r) {
            return std::make_pair(r.at("question_id").get<std::string>(),
                                  r.at("sample_id").get<int>());
        };
        return key(a) < key(b);
    });
    std::sort(excluded.begin(), excluded.end(), [](const json& a, const json& b) {
        return a.dump() < b.dump();
    });
    write_jsonl(io.dir / "metrics.jsonl", rows);
    write_jsonl(io.dir / "excluded.jsonl", excluded);
    json summary{{"records", rows.size()}, {"excluded", excluded.size()}};
    write_text_file(io.dir / "summary.json", summary.dump(2) + "\n");
    io.write_manifest({"metrics.jsonl", "excluded.jsonl", "summary.json"});
    return {0, "metrics: " + std::to_string(rows.size()) + " records (" +
                   std::to_string(excluded.size()) + " excluded)"};
}

StageResult stage_prefs(StageIo& io, const PipelineConfig& cfg) {
    const fs::path questions_path = io.input_from(Stage::validate, "questions.jsonl");
    const fs::path rationales_path = io.input_from(Stage::sample, "rationales.jsonl");
    const fs::path metrics_path = io.input_from(Stage::metrics, "metrics.jsonl");
    if (io.already_complete()) return {0, "prefs: up to date"};

    const std::vector<Question> train = train_questions_sorted(load_questions(questions_path));
    const std::vector<Rationale> rationales = load_rationales(rationales_path);
    std::map<std::pair<std::string, int>, const Rationale*> rationale_by_key;
    for (const auto& r : rationales) rationale_by_key[{r.question_id, r.sample_id}] = &r;

    std::map<std::string, std::vector<Candidate>> pools;
    for (const auto& t : load_metrics(metrics_path).rows) {
        auto it = rationale_by_key.find({t.report.question_id, t.report.sample_id});
        if (it == rationale_by_key.end()) {
            fail("prefs: metrics row without rationale " + t.report.question_id + "#" +
                 std::to_string(t.report.sample_id));
        }
        pools[t.report.question_id].push_back(Candidate{*it->second, t.report});
    }
    for (auto& [qid, pool] : pools) {
        std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
            return a.metrics.sample_id < b.metrics.sample_id;
        });
    }

    PrefDatasetResult result = build_pref_dataset(train, pools, cfg.selection);
    std::vector<json> rows;
    rows.reserve(result.pairs.size());
    for (const auto& pair : result.pairs) rows.push_back(json(pair));
    write_jsonl(io.dir / "prefs.jsonl", rows);
    json summary{{"strategy", to_string(cfg.selection.strategy)},
                 {"seed", cfg.selection.seed},
                 {"pairs_emitted", result.summary.pairs_emitted},
                 {"discarded_all_incorrect", result.summary.discarded_all_incorrect},
                 {"skipped_no_pool", result.summary.skipped_no_pool},
                 {"floor_fallbacks", result.summary.floor_fallbacks}};
    write_text_file(io.dir / "summary.json", summary.dump(2) + "\n");
    io.write_manifest({"prefs.jsonl", "summary.json"});
    return {0, "prefs: " + std::to_string(result.summary.pairs_emitted) + " pairs (" +
                   std::to_string(result.summary.discarded_all_incorrect) + " discarded)"};
}

StageResult stage_distill(StageIo& io, const PipelineConfig& cfg) {
    const fs::path questions_path = io.input_from(Stage::validate, "questions.jsonl");
    const fs::path pk_path = io.input_from(Stage::cluster, "pk.jsonl");
    const fs::path rationales_path = io.input_from(Stage::sample, "rationales.jsonl");
    const fs::path judgments_path = io.input_from(Stage::judge, "judgments.jsonl");
    if (io.already_complete()) return {0, "distill: up to date"};

    const std::vector<Question> train = train_questions_sorted(load_questions(questions_path));
    const auto pk = load_pk(pk_path);
    const std::vector<Rationale> rationales = load_rationales(rationales_path);
    const std::vector<JudgmentRecord> judgments = load_judgments(judgments_path);

    std::set<std::pair<std::string, int>> judged;
    for (const auto& j : judgments) {
        if (!j.failed) judged.insert({j.question_id, j.sample_id});
    }
    std::vector<Question> eligible;
    int skipped = 0;
    for (const auto& q : train) {
        bool ok = pk.count(q.id) > 0;
        for (int s = 0; ok && s < cfg.distill_samples; ++s) {
            ok = judged.count({q.id, s}) > 0;
        }
        if (ok) {
            eligible.push_back(q);
        } else {
            ++skipped;
        }
    }

    auto gateway = make_gateway(cfg);
    std::vector<SftRecord> records = build_distill_sft(eligible, pk, rationales, judgments,
                                                       cfg.judge_model, *gateway,
                                                       cfg.distill_samples);
    std::vector<json> rows;
    rows.reserve(records.size());
    int from_cache = 0;
    for (const auto& r : records) {
        if (r.assistant_source == "cache") ++from_cache;
        rows.push_back(json(r));
    }
    write_jsonl(io.dir / "sft.jsonl", rows);
    json summary{{"records", rows.size()},
                 {"questions", eligible.size()},
                 {"skipped_questions", skipped},
                 {"from_cache", from_cache},
                 {"rerendered", static_cast<int>(rows.size()) - from_cache}};
    write_text_file(io.dir / "summary.json", summary.dump(2) + "\n");
    io.write_manifest({"sft.jsonl", "summary.json"});
    if (skipped > 0) {
        return {2, "distill: " + std::to_string(skipped) + " train question(s) lacked teacher judgments"};
    }
    return {0, "distill: " + std::to_string(rows.size()) + " SFT records"};
}

StageResult stage_agreement(StageIo& io, const PipelineConfig& cfg, const StageFlags& flags) {
    const fs::path teacher_path = io.input_from(Stage::judge, "judgments.jsonl");
    fs::path student_path = teacher_path;
    if (flags.student_judgments) {
        student_path = io.external_input(*flags.student_judgments, "student judgments");
    }
    if (io.already_complete()) return {0, "agreement: up to date"};

    const auto teacher = load_judgments(teacher_path);
    const auto student = load_judgments(student_path);
    AgreementScore score = agreement(teacher, student);
    json out(score);
    out["teacher"] = cfg.judge_model;
    // As given, not resolved: keeps the artifact byte-identical across workdirs.
    out["student_file"] = flags.student_judgments.value_or("(teacher)");
    write_text_file(io.dir / "agreement.json", out.dump(2) + "\n");
    io.write_manifest({"agreement.json"});
    std::ostringstream msg;
    msg << "agreement: application_f1=" << score.application_f1
        << " correctness_f1=" << score.correctness_f1 << " over " << score.n_units << " units";
    return {0, msg.str()};
}

StageResult stage_factuality(StageIo& io, const PipelineConfig& cfg) {
    const fs::path questions_path = io.input_from(Stage::validate, "questions.jsonl");
    const fs::path pk_path = io.input_from(Stage::cluster, "pk.jsonl");
    if (io.already_complete()) return {0, "factuality: up to date"};

    const auto questions = load_questions(questions_path);
    std::vector<PKCollection> collections;
    for (auto& [qid, pk] : load_pk(pk_path)) collections.push_back(pk);
    auto gateway = make_gateway(cfg);
    FactualityResult result = check_factuality(questions, collections, cfg.judge_model, *gateway);

    std::vector<json> rows;
    for (const auto& v : result.verdicts) rows.push_back(json(v));
    write_jsonl(io.dir / "factuality.jsonl", rows);
    json summary{{"judged", result.verdicts.size()},
                 {"unparseable", result.unparseable},
                 {"accuracy", result.accuracy},
                 {"judge_model", cfg.judge_model},
                 {"web_search", "not available through this endpoint; verdicts reflect the judge's"
                                " parametric knowledge"}};
    write_text_file(io.dir / "summary.json", summary.dump(2) + "\n");
    io.write_manifest({"factuality.jsonl", "summary.json"});
    if (result.unparseable > 0) {
        return {2, "factuality: " + std::to_string(result.unparseable) + " unparseable verdict(s)"};
    }
    std::ostringstream msg;
    msg << "factuality: accuracy " << result.accuracy << " over " << result.verdicts.size()
        << " units";
    return {0, msg.str()};
}

StageResult stage_relevance(StageIo& io, const PipelineConfig& cfg) {
    const fs::path questions_path = io.input_from(Stage::validate, "questions.jsonl");
    const fs::path pk_path = io.input_from(Stage::cluster, "pk.jsonl");
    if (io.already_complete()) return {0, "relevance: up to date"};

    const auto questions = load_questions(questions_path);
    std::vector<PKCollection> collections;
    for (auto& [qid, pk] : load_pk(pk_path)) collections.push_back(pk);
    auto gateway = make_gateway(cfg);
    RelevanceResult result = score_relevance(questions, collections, cfg.judge_model, *gateway);

    std::vector<json> rows;
    for (const auto& s : result.scores) rows.push_back(json(s));
    write_jsonl(io.dir / "relevance.jsonl", rows);
    json summary{{"scored", result.scores.size()},
                 {"excluded", result.unparseable},
                 {"mean", result.mean},
                 {"judge_model", cfg.judge_model}};
    write_text_file(io.dir / "summary.json", summary.dump(2) + "\n");
    io.write_manifest({"relevance.jsonl", "summary.json"});
    if (result.unparseable > 0) {
        return {2, "relevance: " + std::to_string(result.unparseable) + " score(s) excluded"};
    }
    std::ostringstream msg;
    msg << "relevance: mean " << result.mean << " over " << result.scores.size() << " units";
    return {0, msg.str()};
}

StageResult stage_remediate(StageIo& io, const PipelineConfig& cfg, const StageFlags& flags) {
    const fs::path questions_path = io.input_from(Stage::validate, "questions.jsonl");
    const fs::path pk_path = io.input_from(Stage::cluster, "pk.jsonl");
    const fs::path rationales_path = io.input_from(Stage::sample, "rationales.jsonl");
    const fs::path judgments_path = io.input_from(Stage::judge, "judgments.jsonl");
    const fs::path metrics_path = io.input_from(Stage::metrics, "metrics.jsonl");
    if (io.already_complete()) return {0, "remediate: up to date"};

    const RemediationMode mode = flags.mode.value_or(RemediationMode::all);
    const auto questions = load_questions(questions_path);
    std::map<std::string, const Question*> question_by_id;
    for (const auto& q : questions) question_by_id[q.id] = &q;
    const auto pk = load_pk(pk_path);
    const auto judgments = load_judgments(judgments_path);
    std::map<std::pair<std::string, int>, const JudgmentRecord*> judgment_by_key;
    for (const auto& j : judgments) {
        if (!j.failed) judgment_by_key[{j.question_id, j.sample_id}] = &j;
    }
    const auto metrics = load_metrics(metrics_path);

    // Error cases: per question, the judged incorrect record with the lowest
    // sample_id, filtered to the requested cohort.
    std::map<std::string, const TaggedMetrics*> error_case;
    for (const auto& t : metrics.rows) {
        if (t.report.answer_correct) continue;
        if (!judgment_by_key.count({t.report.question_id, t.report.sample_id})) continue;
        auto [it, inserted] = error_case.try_emplace(t.report.question_id, &t);
        if (!inserted && t.report.sample_id < it->second->report.sample_id) it->second = &t;
    }
    auto in_cohort = [&](const MetricsReport& m) {
        if (flags.cohort == "a") return m.kp.has_value() && *m.kp == 1.0 && m.kr < 1.0;
        if (flags.cohort == "b") return m.kp.has_value() && *m.kp < 1.0;
        return true;
    };

    struct Item {
        const Question* q;
        const JudgmentRecord* judgment;
    };
    std::vector<Item> items;
    for (const auto& [qid, t] : error_case) {
        if (!in_cohort(t->report)) continue;
        if (!pk.count(qid)) continue;
        items.push_back(Item{question_by_id.at(qid),
                             judgment_by_key.at({qid, t->report.sample_id})});
    }

    auto gateway = make_gateway(cfg);
    StageOutput output(io.dir / "remediation.jsonl");
    std::atomic<int> skipped_empty{0};
    std::atomic<int> corrected{0};
    parallel_for(items.size(), cfg.gateway.concurrency, [&](size_t i) {
        const Item& item = items[i];
        const std::string key = item.q->id;
        if (output.done(key)) return;
        auto outcome = remediate(*item.q, *item.judgment, pk.at(item.q->id), mode, *gateway,
                                 cfg.rationale_model, cfg.selection.seed, cfg.remediation_preamble);
        if (!outcome) {
            skipped_empty.fetch_add(1);
            return;
        }
        if (outcome->rationale.answer_correct) corrected.fetch_add(1);
        json row{{"question_id", item.q->id},
                 {"sample_id", item.judgment->sample_id},
                 {"mode", to_string(mode)},
                 {"supplied_units", outcome->supplied_units},
                 {"answer_correct", outcome->rationale.answer_correct},
                 {"token_count", outcome->rationale.token_count}};
        row["extracted_answer"] = outcome->rationale.extracted_answer
                                      ? json(std::string(1, *outcome->rationale.extracted_answer))
                                      : json(nullptr);
        output.add(key, row);
    });

    const auto rows = output.finalize();
    const double accuracy =
        rows.empty() ? 0.0 : static_cast<double>(corrected.load()) / static_cast<double>(rows.size());
    json summary{{"mode", to_string(mode)},
                 {"cohort", flags.cohort},
                 {"preamble", cfg.remediation_preamble},
                 {"error_cases", items.size()},
                 {"remediated", rows.size()},
                 {"skipped_empty_mode_set", skipped_empty.load()},
                 {"accuracy_after", accuracy}};
    write_text_file(io.dir / "summary.json", summary.dump(2) + "\n");
    std::ostringstream md;
    md << "# Remediation summary\n\n"
       << "- mode: " << to_string(mode) << "\n- cohort: " << flags.cohort << "\n- error cases: "
       << items.size() << "\n- remediated: " << rows.size() << "\n- skipped (empty mode set): "
       << skipped_empty.load() << "\n- accuracy after remediation: " << accuracy << "\n";
    write_text_file(io.dir / "summary.md", md.str());
    io.write_manifest({"remediation.jsonl", "summary.json", "summary.md"});
    std::ostringstream msg;
    msg << "remediate: " << rows.size() << " case(s), accuracy after " << accuracy;
    return {0, msg.str()};
}

StageResult stage_report(StageIo& io, const PipelineConfig& cfg) {
    const fs::path metrics_path = io.input_from(Stage::metrics, "metrics.jsonl");
    const fs::path excluded_path = cfg.stage_dir("metrics") / "excluded.jsonl";
    if (fs::exists(excluded_path)) {
        io.inputs[excluded_path.string()] = sha256_file(excluded_path);
    }
    if (io.already_complete()) return {0, "report: up to date"};

    const auto metrics = load_metrics(metrics_path);
    const auto excluded = load_excluded(excluded_path);
    const auto categories = default_subject_categories();

    std::vector<AggregateReport> csv_rows;
    for (const auto& group_by :
         std::vector<std::vector<GroupField>>{{GroupField::model},
                                              {GroupField::model, GroupField::answer_correct},
                                              {GroupField::subject},
                                              {GroupField::category}}) {
        auto rows = aggregate(metrics.rows, group_by, categories, excluded);
        csv_rows.insert(csv_rows.end(), rows.begin(), rows.end());
    }
    write_text_file(io.dir / "report.csv", render_report_csv(csv_rows));
    write_text_file(io.dir / "report.md", render_report_markdown(metrics.rows, excluded));
    io.write_manifest({"report.csv", "report.md"});
    return {0, "report: " + std::to_string(csv_rows.size()) + " aggregate rows"};
}

}  // namespace

StageResult run_stage(Stage stage, const PipelineConfig& config, const StageFlags& flags) {
    const PipelineConfig cfg = effective_config(config, flags);
    json params{{"stage", to_string(stage)}};
    if (stage == Stage::validate) params["split"] = flags.do_split;
    if (stage == Stage::remediate) {
        params["mode"] = to_string(flags.mode.value_or(RemediationMode::all));
        params["cohort"] = flags.cohort;
    }
    if (stage == Stage::agreement && flags.student_judgments) {
        params["student"] = *flags.student_judgments;
    }

    StageIo io(stage, cfg, params, flags.force);
    try {
        std::filesystem::create_directories(io.dir);
        switch (stage) {
            case Stage::validate: return stage_validate(io, cfg, flags);
            case Stage::collect: return stage_collect(io, cfg);
            case Stage::cluster: return stage_cluster(io, cfg);
            case Stage::sample: return stage_sample(io, cfg);
            case Stage::judge: return stage_judge(io, cfg);
            case Stage::metrics: return stage_metrics(io, cfg);
            case Stage::prefs: return stage_prefs(io, cfg);
            case Stage::distill: return stage_distill(io, cfg);
            case Stage::agreement: return stage_agreement(io, cfg, flags);
            case Stage::factuality: return stage_factuality(io, cfg);
            case Stage::relevance: return stage_relevance(io, cfg);
            case Stage::remediate: return stage_remediate(io, cfg, flags);
            case Stage::report: return stage_report(io, cfg);
        }
        return {1, "unknown stage"};
    } catch (const MissingInputError& e) {
        return {1, e.what()};
    } catch (const std::exception& e) {
        // Partial progress, if any, stays on disk for resumption.
        const bool partial = fs::exists(io.dir) && !fs::is_empty(io.dir);
        return {partial ? 2 : 1,
                to_string(stage) + std::string(": ") + e.what() +
                    (partial ? " (partial progress kept; rerun to resume)" : "")};
    }
}

}  // namespace pkeval
