// pkeval: batch pipeline for knowledge-grounded reasoning evaluation.
// Every pipeline stage is a subcommand sharing one config file; stage outputs
// land under <workdir>/<stage>/ with a manifest, and completed stages are
// skipped on rerun.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "pkeval/pipeline.hpp"

namespace {

struct CliOptions {
    std::string config_path;
    pkeval::StageFlags flags;
    std::optional<std::string> strategy;
    std::optional<std::string> mode;
    std::optional<uint64_t> seed;
    bool mock = false;
};

void add_common(CLI::App* cmd, CliOptions& opts) {
    cmd->add_option("--config", opts.config_path, "pipeline config file (JSON)")->required();
    cmd->add_option("--seed", opts.seed, "override selection/cluster/split seeds");
    cmd->add_flag("--mock", opts.mock, "use the deterministic offline mock backend");
    cmd->add_flag("--force", opts.flags.force, "rerun even if the stage manifest is current");
}

int run(pkeval::Stage stage, CliOptions& opts) {
    pkeval::PipelineConfig config;
    try {
        config = pkeval::PipelineConfig::from_file(opts.config_path);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    if (opts.mock) opts.flags.mock = true;
    if (opts.seed) opts.flags.seed = *opts.seed;
    try {
        if (opts.strategy) opts.flags.strategy = pkeval::strategy_from_string(*opts.strategy);
        if (opts.mode) opts.flags.mode = pkeval::remediation_mode_from_string(*opts.mode);
    } catch (const std::exception& e) {
        std::cerr << "flag error: " << e.what() << "\n";
        return 1;
    }
    pkeval::StageResult result = pkeval::run_stage(stage, config, opts.flags);
    (result.exit_code == 0 ? std::cout : std::cerr) << result.message << "\n";
    return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-grounded reasoning evaluation pipeline"};
    app.require_subcommand(1);

    CliOptions opts;
    std::map<std::string, pkeval::Stage> stage_of_name;
    for (pkeval::Stage stage : pkeval::all_stages()) {
        stage_of_name[pkeval::to_string(stage)] = stage;
    }

    for (auto& [name, stage] : stage_of_name) {
        CLI::App* cmd = app.add_subcommand(name, name + " stage");
        add_common(cmd, opts);
        if (stage == pkeval::Stage::validate) {
            cmd->add_flag("--split", opts.flags.do_split,
                          "assign a stratified per-subject train/test split");
        }
        if (stage == pkeval::Stage::prefs) {
            cmd->add_option("--strategy", opts.strategy,
                            "answer_driven|kr_random|kr_max|kr_min|len_max|len_min");
        }
        if (stage == pkeval::Stage::agreement) {
            cmd->add_option("--student", opts.flags.student_judgments,
                            "student judgments file (defaults to the judge stage output)");
        }
        if (stage == pkeval::Stage::remediate) {
            cmd->add_option("--mode", opts.mode, "random|correct|incorrect|all");
            cmd->add_option("--cohort", opts.flags.cohort,
                            "a (kp=1, kr<1) | b (kp<1) | all");
        }
        cmd->callback([&, stage_copy = stage] { std::exit(run(stage_copy, opts)); });
    }

    CLI11_PARSE(app, argc, argv);
    return 0;
}
