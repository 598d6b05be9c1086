// Command-line front end: run experiments, compare runs, analyze recorded tensors.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "drtdiff/error.hpp"
#include "drtdiff/experiment.hpp"

namespace ex = drtdiff::experiment;

namespace {

std::string default_out_dir() {
    if (const char* env = std::getenv("DRTDIFF_OUT_DIR"); env && *env) return env;
    return "drtdiff_out";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decentralized learning simulator: classical vs DRT diffusion"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
    std::string config_path, strategy, out_dir;
    int threads = 0;
    bool dump_tensors = false, plain_mean = false, freeze = false;
    int checkpoint_every = -1;
    run->add_option("--config", config_path, "Experiment config (JSON); defaults apply to missing fields");
    run->add_option("--strategy", strategy, "classical | drt | both")->check(CLI::IsMember({"classical", "drt", "both"}));
    run->add_option("--threads", threads, "Worker threads (1 = bitwise reproducible)")->check(CLI::PositiveNumber);
    run->add_flag("--dump-tensors", dump_tensors, "Write every mixing tensor to <out>/tensors/");
    run->add_option("--checkpoint-every", checkpoint_every, "Write agent parameters every n rounds");
    run->add_flag("--plain-mean-centroid", plain_mean, "Measure disagreement around the plain mean");
    run->add_flag("--freeze-weights-within-round", freeze, "DRT: reuse the first tensor for all consensus steps");
    run->add_option("--out", out_dir, "Output directory (default $DRTDIFF_OUT_DIR or ./drtdiff_out)");

    auto* report = app.add_subcommand("report", "Steady-state comparison table from metrics CSVs");
    std::vector<std::string> inputs;
    report->add_option("--inputs", inputs, "metrics.csv files")->required()->expected(1, -1);

    auto* diagnose = app.add_subcommand("diagnose", "Centroid, disagreement and contraction diagnostics of a run");
    std::string run_dir;
    int horizon = 50;
    diagnose->add_option("--run", run_dir, "Run directory (needs tensor dumps and checkpoints)")->required();
    diagnose->add_option("--horizon", horizon, "Backward-product horizon H")->check(CLI::PositiveNumber);

    auto* defaults = app.add_subcommand("defaults", "Print the default configuration");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            ex::ExperimentConfig cfg = config_path.empty() ? ex::ExperimentConfig{} : ex::load_config(config_path);
            if (!strategy.empty()) cfg.run.strategy = strategy;
            if (threads > 0) cfg.run.threads = threads;
            if (dump_tensors) cfg.output.dump_tensors = true;
            if (checkpoint_every >= 0) cfg.output.checkpoint_every = checkpoint_every;
            if (plain_mean) cfg.run.centroid = "mean";
            if (freeze) cfg.run.freeze_weights_within_round = true;
            if (!out_dir.empty()) cfg.output.dir = out_dir;
            if (cfg.output.dir.empty()) cfg.output.dir = default_out_dir();

            const auto result = ex::run_experiment(cfg);
            std::cout << "topology " << result.topology_label << "  lambda2 " << result.lambda2 << '\n';
            for (const auto& s : result.summary)
                std::cout << s.strategy << ": final test acc " << s.final_test_acc << ", steady test acc "
                          << s.steady_test_acc << ", steady gen gap " << s.steady_gen_gap << '\n';
            std::cout << "artifacts in " << cfg.output.dir << '\n';
        } else if (*report) {
            std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
            ex::print_report(std::cout, ex::compare_report(paths));
        } else if (*diagnose) {
            ex::diagnose(run_dir, horizon, &std::cout);
            std::cout << "wrote " << (std::filesystem::path(run_dir) / "diagnostics.csv").string() << '\n';
        } else if (*defaults) {
            std::cout << ex::serialize_config(ex::ExperimentConfig{});
        }
    } catch (const drtdiff::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const drtdiff::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
