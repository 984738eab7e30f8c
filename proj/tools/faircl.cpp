// faircl: run experiment grids, generate synthetic data, print reports.

#include <iostream>

#include <CLI11.hpp>

#include "faircl/experiment/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Fairness benchmark for domain-incremental continual learning"};
    app.require_subcommand(1);

    faircl::RunFlags run;
    std::vector<std::uint64_t> seeds;
    std::size_t epochs = 0;
    std::string out_dir;
    auto* run_cmd = app.add_subcommand("run", "Train the method x augmentation x seed grid of a config");
    run_cmd->add_option("--config", run.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("--jobs", run.jobs, "Parallel cells")->check(CLI::PositiveNumber);
    run_cmd->add_flag("--force", run.force, "Retrain cells that already have records");
    run_cmd->add_option("--out", out_dir, "Output directory (overrides FAIRCL_OUT and the config)");
    run_cmd->add_option("--seeds", seeds, "Override the seed list")->delimiter(',');
    run_cmd->add_option("--epochs", epochs, "Override epochs per episode");

    faircl::SynthFlags synth;
    std::string task = "expression";
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic domain-shift dataset as a manifest");
    synth_cmd->add_option("--out", synth.out, "Output directory")->required();
    synth_cmd->add_option("--domains", synth.domains, "Number of domains");
    synth_cmd->add_option("--classes", synth.classes, "Classes (or action units with --task au)");
    synth_cmd->add_option("--n", synth.n, "Total samples");
    synth_cmd->add_option("--imbalance", synth.imbalance, "Domain ratios, summing to 1")->delimiter(',');
    synth_cmd->add_option("--shift", synth.shift, "Domain shift strength");
    synth_cmd->add_option("--noise", synth.noise, "Noise sigma");
    synth_cmd->add_option("--dim", synth.dim, "Feature dimension (vector mode)");
    synth_cmd->add_option("--seed", synth.seed, "Generator seed");
    synth_cmd->add_option("--task", task, "expression or au")->check(CLI::IsMember({"expression", "au"}));
    synth_cmd->add_flag("--image", synth.image, "1x32x32 images instead of vectors");
    synth_cmd->add_flag("--force", synth.force, "Overwrite a non-empty output directory");

    faircl::ReportFlags report;
    auto* report_cmd = app.add_subcommand("report", "Tabulate fairness and accuracy from run directories");
    report_cmd->add_option("--runs", report.runs, "Run output directories")->required();
    report_cmd->add_option("--format", report.format, "text or csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : faircl::kExitUsage;
    }

    if (*run_cmd) {
        if (!seeds.empty()) run.seeds = seeds;
        if (epochs) run.epochs = epochs;
        if (!out_dir.empty()) run.out = out_dir;
        return faircl::cmd_run(run, std::cout, std::cerr);
    }
    if (*synth_cmd) {
        synth.au = task == "au";
        return faircl::cmd_synth(synth, std::cout, std::cerr);
    }
    return faircl::cmd_report(report, std::cout, std::cerr);
}
