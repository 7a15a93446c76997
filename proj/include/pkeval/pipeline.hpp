#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pkeval/gateway.hpp"
#include "pkeval/judging.hpp"
#include "pkeval/kmeans.hpp"
#include "pkeval/model.hpp"
#include "pkeval/preference.hpp"
#include "pkeval/validation.hpp"

namespace pkeval {

inline constexpr const char* kToolVersion = "0.1.0";

/// Single hierarchical config file (JSON); every flag overrides it. Defaults
/// mirror the operational parameters: 32 samples, temperature 1.0, 8192 max
/// tokens, 100-token length floor, cluster count = mean + 2.
struct PipelineConfig {
    struct Paths {
        std::string dataset;  // question JSONL
        std::string workdir = "work";
    } paths;

    std::vector<std::string> generator_models;
    std::string judge_model = "judge";
    std::string rationale_model = "reasoner";
    std::string embed_model = "embedder";

    ClusterConfig cluster;
    SamplingPlan sampling;
    SelectionConfig selection;

    struct GatewaySettings {
        std::string base_url_env = "OPENAI_BASE_URL";
        std::string api_key_env = "OPENAI_API_KEY";
        int concurrency = 8;
        std::string cache_dir;  // empty: <workdir>/cache
        bool cache_enabled = true;
        bool mock = false;
        std::string mock_fixture;  // optional canned-response file
        int embed_dim = 16;        // mock embedding dimension
        int embed_chunk_size = 128;
        int timeout_s = 120;
    } gateway;

    std::string remediation_preamble =
        "Use the following knowledge to answer the question.";
    uint64_t split_seed = 0;
    double split_train_fraction = 0.8;
    int distill_samples = 5;

    static PipelineConfig from_file(const std::filesystem::path& path);
    static PipelineConfig from_json(const json& j);
    json to_json() const;

    std::filesystem::path workdir() const { return paths.workdir; }
    std::filesystem::path stage_dir(const std::string& stage) const {
        return workdir() / stage;
    }
    std::string resolved_cache_dir() const {
        return gateway.cache_dir.empty() ? (workdir() / "cache").string() : gateway.cache_dir;
    }
};

enum class Stage {
    validate,
    collect,
    cluster,
    sample,
    judge,
    metrics,
    prefs,
    distill,
    agreement,
    factuality,
    relevance,
    remediate,
    report,
};

std::string to_string(Stage s);
Stage stage_from_string(std::string_view s);
std::vector<Stage> all_stages();

struct StageFlags {
    std::optional<bool> mock;
    std::optional<uint64_t> seed;      // overrides selection, cluster, and split seeds
    std::optional<Strategy> strategy;  // overrides selection.strategy
    bool do_split = false;             // validate: assign stratified train/test splits
    std::optional<std::string> student_judgments;  // agreement: student file
    std::optional<RemediationMode> mode;           // remediate
    std::string cohort = "all";                    // remediate: a (kp=1, kr<1), b (kp<1), all
    bool force = false;                            // rerun even when the manifest matches
};

/// Exit codes: 0 success (including an idempotent no-op), 1 hard failure,
/// 2 partial failure (outputs written or resumable partial progress exists,
/// but some items were flagged, skipped, or unprocessed).
struct StageResult {
    int exit_code = 0;
    std::string message;
};

/// Applies flag overrides to a copy of the config.
PipelineConfig effective_config(const PipelineConfig& config, const StageFlags& flags);

/// Builds the configured gateway (mock or HTTP with env-provided URL/key).
std::shared_ptr<Gateway> make_gateway(const PipelineConfig& config);

/// Runs one pipeline stage: checks upstream files (naming the producing stage
/// when missing), skips work when the stage manifest matches current inputs
/// and config, persists partial progress for resumption, and writes a
/// manifest with input/output digests alongside the outputs.
StageResult run_stage(Stage stage, const PipelineConfig& config, const StageFlags& flags);

/// Stratified per-subject train/test split; mutates the questions in place.
/// Within each subject, ids are shuffled by a seed derived from
/// (seed, subject) and the first round(fraction * n) become train.
void assign_splits(std::vector<Question>& questions, uint64_t seed, double train_fraction);

}  // namespace pkeval
