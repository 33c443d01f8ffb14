// cocola — build templated task streams, run chained low-rank fine-tuning
// with rehearsal, evaluate with ROUGE-L F1, and report forgetting.

#include "cocola/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"chained low-rank adaptation trainer with rehearsal"};
    app.require_subcommand(1);

    cli::BuildArgs build;
    CLI::App* cmd_build = app.add_subcommand("build", "render templates into task streams");
    cmd_build->add_option("--templates", build.template_dir, "directory of .tmpl template files");
    cmd_build->add_option("--data", build.data_file, "JSON-lines record file");
    cmd_build->add_option("--out", build.out_dir, "output directory")->required();
    cmd_build->add_option("--cap", build.cap, "max instances per stream");
    cmd_build->add_option("--seed", build.seed, "master seed");
    cmd_build->add_flag("--synth", build.synth, "emit the built-in synthetic tasks");
    cmd_build->add_flag("--force", build.force, "overwrite existing outputs");

    cli::TrainArgs train;
    CLI::App* cmd_train = app.add_subcommand("train", "run the chained tuning loop");
    cmd_train->add_option("--config", train.config_file, "train config JSON")->required();
    cmd_train->add_option("--streams", train.streams_dir, "directory of stream .jsonl files")
        ->required();
    cmd_train->add_option("--out", train.out_dir, "output directory")->required();
    uint64_t seed_override = 0;
    double rehearsal_override = 0.0;
    int cap_override = 0, threads_override = 0;
    CLI::Option* opt_seed = cmd_train->add_option("--seed", seed_override, "override config seed");
    CLI::Option* opt_r =
        cmd_train->add_option("--rehearsal", rehearsal_override, "override rehearsal fraction");
    CLI::Option* opt_cap = cmd_train->add_option("--cap", cap_override, "override stream cap");
    CLI::Option* opt_threads =
        cmd_train->add_option("--threads", threads_override, "override eval thread count");
    cmd_train->add_flag("--force", train.force, "overwrite existing outputs");

    cli::EvalArgs ev;
    CLI::App* cmd_eval = app.add_subcommand("eval", "score a checkpoint on eval streams");
    cmd_eval->add_option("--checkpoint", ev.checkpoint, "model checkpoint (.tlm)")->required();
    cmd_eval->add_option("--eval", ev.eval_dir, "directory of eval stream .jsonl files")
        ->required();
    cmd_eval->add_option("--out", ev.out_file, "output report JSON")->required();
    cmd_eval->add_option("--max-new", ev.max_new, "cap on generated tokens (0 = per-instance)");
    cmd_eval->add_option("--threads", ev.threads, "scoring threads");
    cmd_eval->add_flag("--force", ev.force, "overwrite existing outputs");

    cli::ReportArgs rep;
    CLI::App* cmd_report = app.add_subcommand("report", "forgetting table from a chain report");
    cmd_report->add_option("--chain", rep.chain_report, "chain_report.json from train")
        ->required();
    cmd_report->add_option("--snapshots", rep.snapshots,
                           "per-iteration eval report JSON files (default: embedded)");
    std::string report_out;
    CLI::Option* opt_report_out =
        cmd_report->add_option("--out", report_out, "also write the trace as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return cli::kConfigExit;
    }

    if (*cmd_build) {
        if (!build.synth && (build.template_dir.empty() || build.data_file.empty())) {
            std::cerr << "config error: build requires --templates and --data (or --synth)\n";
            return cli::kConfigExit;
        }
        return cli::cmd_build(build, std::cout, std::cerr);
    }
    if (*cmd_train) {
        if (*opt_seed) train.seed_override = seed_override;
        if (*opt_r) train.rehearsal_override = rehearsal_override;
        if (*opt_cap) train.cap_override = cap_override;
        if (*opt_threads) train.threads_override = threads_override;
        return cli::cmd_train(train, std::cout, std::cerr);
    }
    if (*cmd_eval) return cli::cmd_eval(ev, std::cout, std::cerr);
    if (*cmd_report) {
        if (*opt_report_out) rep.out_file = report_out;
        return cli::cmd_report(rep, std::cout, std::cerr);
    }
    return cli::kInternalError;
}
