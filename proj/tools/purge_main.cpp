// purge: train, unlearn, simulate and analyze from the command line.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "purge/error.hpp"
#include "purge/experiment.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    bool parallel = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config, "experiment config (JSON)");
        cmd->add_option("--set", overrides, "override a config field, e.g. --set student.mode=naive_sisa");
        cmd->add_option("--seed", seed, "experiment seed");
        cmd->add_flag("--parallel", parallel, "train constituents concurrently");
    }

    purge::ExperimentConfig load() const {
        std::optional<std::filesystem::path> path;
        if (!config.empty()) path = config;
        auto cfg = purge::load_config(path, overrides, seed);
        if (parallel) cfg.parallel = true;
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sharded teacher-student distillation with exact unlearning"};
    app.require_subcommand(1);

    CommonFlags train_flags;
    std::string train_out = "purge_run";
    auto* train = app.add_subcommand("train", "train teachers and students, write the system to --out");
    train_flags.attach(train);
    train->add_option("--out", train_out, "output directory");

    std::string system_dir, requests_path;
    bool verify = false, prune = false;
    auto* unlearn = app.add_subcommand("unlearn", "apply a request stream to a trained system");
    unlearn->add_option("system", system_dir, "directory written by `train`")->required();
    unlearn->add_option("--requests", requests_path, "request stream (seq,target_kind,point_id)");
    unlearn->add_flag("--verify", verify, "check every request against scratch retraining");
    unlearn->add_flag("--prune", prune, "drop superseded checkpoint generations afterwards");

    CommonFlags sim_flags;
    std::string sim_out = "purge_sim";
    auto* simulate = app.add_subcommand("simulate", "step-count simulation of teacher-side requests");
    sim_flags.attach(simulate);
    simulate->add_option("--out", sim_out, "output directory");

    std::vector<std::string> analyze_inputs;
    std::string analyze_out = "purge_analysis";
    auto* analyze = app.add_subcommand("analyze", "summarise run directories and simulation tables");
    analyze->add_option("inputs", analyze_inputs, "run directories or report files");
    analyze->add_option("--out", analyze_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train) {
            purge::cmd_train({train_flags.load(), train_out});
        } else if (*unlearn) {
            const std::filesystem::path dir = system_dir;
            const auto failures = purge::cmd_unlearn(
                {dir, requests_path.empty() ? dir / "requests.csv" : std::filesystem::path(requests_path), verify,
                 prune});
            if (failures > 0) {
                std::cerr << "purge: " << failures << " request(s) failed verification\n";
                return 4;
            }
        } else if (*simulate) {
            purge::cmd_simulate(sim_flags.load(), sim_out);
        } else if (*analyze) {
            std::vector<std::filesystem::path> inputs(analyze_inputs.begin(), analyze_inputs.end());
            purge::cmd_analyze(inputs, analyze_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "purge: " << e.what() << '\n';
        return purge::exit_code_for(e);
    }
    return 0;
}
