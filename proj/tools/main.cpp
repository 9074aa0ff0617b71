#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace fs = std::filesystem;
using namespace difflab;
using namespace difflab::cli;

namespace {

void add_oracle_flags(CLI::App* cmd, OracleSpec& spec, bool* given = nullptr) {
    auto* opt = cmd->add_option("--oracle", spec.name,
                                "five-point | four-point | twenty-point | cloud | line | gaussian | smoothed | spiral");
    if (given) opt->each([given](const std::string&) { *given = true; });
    cmd->add_option("--mu", spec.mu, "Gaussian mean, comma separated")->delimiter(',');
    cmd->add_option("--sigma", spec.sigma, "Gaussian std or smoothing width");
    cmd->add_option("--cloud", spec.cloud_csv, "Point cloud CSV (cloud, smoothed)");
}

void add_schedule_flags(CLI::App* cmd, ScheduleArgs& s) {
    cmd->add_option("--t1", s.t1, "Smallest grid time");
    cmd->add_option("--T", s.T, "Final time");
    cmd->add_option("--K", s.K, "Number of grid points");
}

void print_report(const nlohmann::json& report, const fs::path& root) {
    std::cout << report["command"].get<std::string>() << ' ' << report["status"].get<std::string>() << ": "
              << (root / report["run_id"].get<std::string>()).string() << '\n';
    if (!report["summary"].empty()) std::cout << report["summary"].dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional-expectation diffusion experiments"};
    app.require_subcommand(1);

    TrainOptions train;
    auto* train_cmd = app.add_subcommand("train", "Train a network from a JSON config");
    train_cmd->add_option("config", train.config_path, "Config file")->required();
    train_cmd->add_option("--out", train.out_root, "Output root");

    SampleOptions sample;
    OracleSpec sample_oracle;
    bool sample_oracle_given = false;
    auto* sample_cmd = app.add_subcommand("sample", "Run the backward sampler");
    sample_cmd->add_option("--checkpoint", sample.checkpoint, "Trained model.json");
    sample_cmd->add_option("--kind", sample.kind, "SCORE_S | EPSILON | COND_EXP_F (overrides checkpoint)");
    add_oracle_flags(sample_cmd, sample_oracle, &sample_oracle_given);
    add_schedule_flags(sample_cmd, sample.schedule);
    sample_cmd->add_option("--n", sample.n, "Number of samples");
    sample_cmd->add_option("--seed", sample.seed, "Seed");
    sample_cmd->add_option("--snapshots", sample.snapshot_times, "Times to save, snapped to the grid; 0 = final")
        ->delimiter(',');
    sample_cmd->add_option("--tol", sample.tol, "Absorption radius");
    sample_cmd->add_option("--out", sample.out_root, "Output root");

    EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "Error curves against an oracle");
    eval_cmd->add_option("mode", eval.mode, "pointwise | l2 | singularity | lambda")->required();
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Trained model.json");
    eval_cmd->add_option("--kind", eval.kind, "Overrides the checkpoint's target kind");
    add_oracle_flags(eval_cmd, eval.oracle);
    add_schedule_flags(eval_cmd, eval.schedule);
    eval_cmd->add_option("--x", eval.x, "Evaluation point, comma separated")->delimiter(',');
    eval_cmd->add_option("--last", eval.last, "Number of smallest grid times (pointwise, l2)");
    eval_cmd->add_option("--n", eval.n, "Monte-Carlo samples per time (l2, lambda)");
    eval_cmd->add_option("--times", eval.num_times, "Number of lambda times");
    eval_cmd->add_option("--max-time", eval.max_time, "Upper time for the singularity profile");
    eval_cmd->add_option("--seed", eval.seed, "Seed");
    eval_cmd->add_option("--out", eval.out_root, "Output root");

    SweepOptions sweep;
    auto* sweep_cmd = app.add_subcommand("t1-sweep", "Sample with the analytic drift for several t1");
    add_oracle_flags(sweep_cmd, sweep.oracle);
    sweep_cmd->add_option("--t1", sweep.t1_values, "Comma-separated t1 values")->delimiter(',');
    sweep_cmd->add_option("--T", sweep.T, "Final time");
    sweep_cmd->add_option("--K", sweep.K, "Number of grid points");
    sweep_cmd->add_option("--n", sweep.n, "Samples per t1");
    sweep_cmd->add_option("--seed", sweep.seed, "Seed");
    sweep_cmd->add_option("--tol", sweep.tol, "Absorption radius");
    sweep_cmd->add_option("--out", sweep.out_root, "Output root");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*train_cmd) {
            print_report(cmd_train(train), train.out_root);
        } else if (*sample_cmd) {
            if (sample_oracle_given) sample.oracle = sample_oracle;
            print_report(cmd_sample(sample), sample.out_root);
        } else if (*eval_cmd) {
            print_report(cmd_eval(eval), eval.out_root);
        } else if (*sweep_cmd) {
            print_report(cmd_t1_sweep(sweep), sweep.out_root);
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
