#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kdpdfl/experiment.hpp"

namespace ex = kdpdfl::experiment;

int main(int argc, char** argv) {
    CLI::App app{"Decentralized personalized federated learning simulator"};
    app.require_subcommand(1);

    std::string run_config;
    auto* run = app.add_subcommand("run", "Run one experiment from a JSON config");
    run->add_option("--config", run_config, "Path to the experiment config")->required();

    std::string sweep_config, axis;
    std::vector<std::string> values;
    auto* sweep = app.add_subcommand("sweep", "Sweep neighbor_cap or mu_grid");
    sweep->add_option("--config", sweep_config, "Path to the base experiment config")->required();
    sweep->add_option("--axis", axis, "neighbor_cap | mu_grid")->required();
    sweep->add_option("--values", values, "Axis values; mu_grid accepts mu1:mu2 pairs or a grid of numbers")
        ->required()
        ->delimiter(',');

    std::string dir;
    auto* summarize = app.add_subcommand("summarize", "Rebuild summary tables from run directories");
    summarize->add_option("--dir", dir, "Directory containing run outputs")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto cfg = ex::parse_config(run_config);
            const auto record = ex::run_experiment(cfg);
            const std::vector<ex::RunRecord> runs{record};
            std::cout << ex::summary_text(ex::emit_summary(runs));
        } else if (*sweep) {
            const auto cfg = ex::parse_config(sweep_config);
            const auto points = ex::sweep(cfg, ex::parse_axis(axis), values);
            std::vector<ex::RunRecord> runs;
            for (const auto& p : points) {
                const std::vector<ex::RunRecord> one{p.record};
                const auto row = ex::emit_summary(one).rows.front();
                std::cout << p.label << ": " << row.mean << " +- " << row.std << "\n";
            }
        } else if (*summarize) {
            std::cout << ex::summary_text(ex::summarize_directory(dir));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
