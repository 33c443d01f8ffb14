#include "cocola/commands.hpp"

#include "cocola/cocola.hpp"
#include "cocola/container.hpp"
#include "cocola/errors.hpp"
#include "cocola/rougeval.hpp"
#include "cocola/taskflow.hpp"
#include "cocola/tinylm.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <ostream>
#include <sstream>

namespace cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string iso_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

int guard(std::ostream& err, const std::function<void()>& fn) {
    try {
        fn();
        return kOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigExit;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kDataExit;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kNumericExit;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kInternalError;
    }
}

void require_absent(const fs::path& p, bool force) {
    if (!force && fs::exists(p))
        throw ConfigError("output already exists: " + p.string() + " (use --force to overwrite)");
}

// Collects manifest content through a run; timestamps live here and only
// here so every other output is byte-identical across reruns.
struct Manifest {
    ordered_json j;

    Manifest(const std::string& command, uint64_t seed) {
        j["tool"] = kToolName;
        j["version"] = kToolVersion;
        j["command"] = command;
        j["seed"] = seed;
        j["inputs"] = ordered_json::object();
        j["outputs"] = ordered_json::array();
        j["started_at"] = iso_now();
    }
    void input(const fs::path& p) {
        j["inputs"][p.string()] = "fnv1a64:" + container::hex64(container::file_digest(p));
    }
    void output(const fs::path& p) { j["outputs"].push_back(p.string()); }
    void config(ordered_json snapshot) { j["config"] = std::move(snapshot); }
    void write(const fs::path& file) {
        j["finished_at"] = iso_now();
        container::write_text_atomic(file, j.dump(2) + "\n");
    }
};

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ext)
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    return files;
}

std::string stream_file_name(const taskflow::TemplateStream& s) {
    return s.template_name + "." + taskflow::split_name(s.split) + ".jsonl";
}

void write_streams(const std::vector<taskflow::TemplateStream>& streams, const fs::path& out_dir,
                   bool force, Manifest& manifest, std::ostream& out) {
    for (const auto& s : streams) {
        const fs::path p = out_dir / stream_file_name(s);
        require_absent(p, force);
        taskflow::write_stream_jsonl(s, p);
        manifest.output(p);
        out << "wrote " << p.string() << " (" << s.instances.size() << " instances)\n";
    }
}

std::string fmt_mean(const std::optional<double>& m) {
    if (!m) return "absent";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *m);
    return buf;
}

void print_eval_table(const rougeval::EvalReport& report, std::ostream& out) {
    size_t name_w = 8;
    for (const auto& ts : report.per_template) name_w = std::max(name_w, ts.template_name.size());
    out << "template" << std::string(name_w - 8, ' ') << "  split          rouge_l_f1  count\n";
    for (const auto& ts : report.per_template) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "  %-13s %10.4f  %5zu\n",
                      taskflow::split_name(ts.split).c_str(), ts.mean_f1, ts.count);
        out << ts.template_name << std::string(name_w - ts.template_name.size(), ' ') << buf;
    }
    out << "held_in mean:  " << fmt_mean(report.held_in_mean) << "\n";
    out << "held_out mean: " << fmt_mean(report.held_out_mean) << "\n";
}

}  // namespace

int cmd_build(const BuildArgs& args, std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        fs::create_directories(args.out_dir);
        Manifest manifest("build", args.seed);
        ordered_json cfg;
        cfg["cap"] = args.cap;
        cfg["synth"] = args.synth;

        std::vector<taskflow::TemplateStream> streams;
        if (args.synth) {
            const taskflow::SynthTasks tasks = taskflow::synth_tasks(args.seed);
            streams.insert(streams.end(), tasks.train.begin(), tasks.train.end());
            streams.insert(streams.end(), tasks.held_in.begin(), tasks.held_in.end());
            streams.insert(streams.end(), tasks.held_out.begin(), tasks.held_out.end());
        } else {
            cfg["template_dir"] = args.template_dir.string();
            cfg["data_file"] = args.data_file.string();
            const auto template_files = sorted_files(args.template_dir, ".tmpl");
            if (template_files.empty())
                throw DataError("no .tmpl template files in " + args.template_dir.string());
            // digests recorded before any parsing happens
            for (const auto& p : template_files) manifest.input(p);
            manifest.input(args.data_file);

            std::vector<taskflow::PromptTemplate> templates;
            for (const auto& p : template_files)
                templates.push_back(taskflow::read_template_file(p));
            const auto records = taskflow::read_records_jsonl(args.data_file);
            numkit::Rng rng(numkit::Rng::mix(args.seed, 0xB11D));
            streams = taskflow::build_task(records, templates, args.cap, rng);
        }
        manifest.config(std::move(cfg));
        write_streams(streams, args.out_dir, args.force, manifest, out);
        manifest.write(args.out_dir / "manifest.json");
        out << "wrote " << streams.size() << " streams to " << args.out_dir.string() << "\n";
    });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        cocola::TrainConfig cfg = cocola::load_config(args.config_file);
        if (args.seed_override) cfg.seed = *args.seed_override;
        if (args.rehearsal_override) cfg.rehearsal_r = *args.rehearsal_override;
        if (args.cap_override) cfg.cap = *args.cap_override;
        if (args.threads_override) cfg.threads = *args.threads_override;
        cfg.validate();
        if (cfg.template_order.empty())
            throw ConfigError("config: template_order must list the training templates");

        fs::create_directories(args.out_dir);
        Manifest manifest("train", cfg.seed);
        manifest.input(args.config_file);

        std::vector<taskflow::TemplateStream> train_streams;
        std::vector<taskflow::TemplateStream> eval_streams;
        for (const auto& p : sorted_files(args.streams_dir, ".jsonl")) {
            manifest.input(p);
            taskflow::TemplateStream s = taskflow::read_stream_jsonl(p);
            if (s.split == taskflow::Split::Train) train_streams.push_back(std::move(s));
            else eval_streams.push_back(std::move(s));
        }

        // pre-flight: config/stream mismatches surface before any training
        std::vector<std::string> missing;
        for (const auto& name : cfg.template_order) {
            const bool found = std::any_of(train_streams.begin(), train_streams.end(),
                                           [&](const auto& s) { return s.template_name == name; });
            if (!found) missing.push_back(name);
        }
        if (!missing.empty()) {
            std::ostringstream os;
            os << "missing train stream(s) for template_order entr"
               << (missing.size() == 1 ? "y:" : "ies:");
            for (const auto& m : missing) os << " " << m;
            throw ConfigError(os.str());
        }
        for (auto& s : train_streams)
            if (s.instances.size() > static_cast<size_t>(cfg.cap))
                s.instances.resize(static_cast<size_t>(cfg.cap));

        const fs::path report_path = args.out_dir / "chain_report.json";
        const fs::path csv_path = args.out_dir / "loss_log.csv";
        const fs::path final_path = args.out_dir / "model_final.tlm";
        require_absent(report_path, args.force);
        require_absent(csv_path, args.force);
        require_absent(final_path, args.force);

        tinylm::TinyLMConfig mc;
        mc.vocab_size = tinylm::kVocabSize;
        mc.dim = cfg.model_dim;
        mc.n_blocks = cfg.model_blocks;
        mc.context_len = cfg.context_len;
        numkit::Rng model_rng(numkit::Rng::mix(cfg.seed, 0xB0DE));
        tinylm::TinyLM model = tinylm::TinyLM::random_init(mc, cfg.model_init_std, model_rng);

        std::vector<fs::path> checkpoints;
        const cocola::ChainHook hook = [&](int iteration, cocola::ChainPhase phase,
                                           const tinylm::TinyLM& m) {
            if (phase != cocola::ChainPhase::AfterMerge) return;
            char name[48];
            std::snprintf(name, sizeof name, "checkpoint_%02d.tlm", iteration + 1);
            const fs::path p = args.out_dir / name;
            require_absent(p, args.force);
            tinylm::save_model(m, p);
            checkpoints.push_back(p);
        };

        const cocola::ChainReport report = cocola::run_chain(model, train_streams, eval_streams,
                                                             cfg, hook);

        tinylm::save_model(model, final_path);
        container::write_text_atomic(report_path, cocola::report_to_json(report).dump(2) + "\n");
        container::write_text_atomic(csv_path, cocola::loss_log_csv(report));

        manifest.config(cocola::config_to_json(cfg));
        for (const auto& p : checkpoints) manifest.output(p);
        manifest.output(final_path);
        manifest.output(report_path);
        manifest.output(csv_path);
        manifest.write(args.out_dir / "manifest.json");

        for (const auto& ir : report.iterations) {
            out << "iteration " << ir.generation + 1 << " [" << ir.template_name << "]";
            if (!ir.losses.empty()) {
                char buf[64];
                std::snprintf(buf, sizeof buf, " loss %.4f -> %.4f", ir.losses.front().loss,
                              ir.losses.back().loss);
                out << buf;
            }
            if (ir.eval_snapshot) {
                out << " | held_in " << fmt_mean(ir.eval_snapshot->held_in_mean) << " held_out "
                    << fmt_mean(ir.eval_snapshot->held_out_mean);
            }
            out << "\n";
        }
        out << "wrote " << report_path.string() << "\n";
    });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        require_absent(args.out_file, args.force);
        const tinylm::TinyLM model = tinylm::load_model(args.checkpoint);

        Manifest manifest("eval", 0);
        manifest.input(args.checkpoint);
        std::vector<taskflow::TemplateStream> streams;
        for (const auto& p : sorted_files(args.eval_dir, ".jsonl")) {
            taskflow::TemplateStream s = taskflow::read_stream_jsonl(p);
            if (s.split == taskflow::Split::Train) continue;  // eval streams only
            manifest.input(p);
            streams.push_back(std::move(s));
        }
        if (streams.empty())
            throw DataError("no eval-labeled streams (.jsonl with held_in_eval/held_out_eval) in " +
                            args.eval_dir.string());

        const rougeval::EvalReport report =
            rougeval::evaluate(model, nullptr, streams, args.max_new, tinylm::kEos, args.threads);

        container::write_text_atomic(args.out_file,
                                     rougeval::eval_report_to_json(report).dump(2) + "\n");
        manifest.output(args.out_file);
        fs::path manifest_path = args.out_file;
        manifest_path += ".manifest.json";
        manifest.write(manifest_path);

        print_eval_table(report, out);
        out << "wrote " << args.out_file.string() << "\n";
    });
}

int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        std::ifstream is(args.chain_report);
        if (!is) throw DataError("cannot open chain report: " + args.chain_report.string());
        json j;
        try {
            is >> j;
        } catch (const json::exception& e) {
            throw DataError(args.chain_report.string() + ": " + e.what());
        }

        std::vector<std::string> template_order;
        std::vector<rougeval::EvalReport> snapshots;
        try {
            template_order = j.at("config").at("template_order").get<std::vector<std::string>>();
            if (!args.snapshots.empty()) {
                if (args.snapshots.size() != j.at("iterations").size())
                    throw DataError("got " + std::to_string(args.snapshots.size()) +
                                    " snapshot files for " +
                                    std::to_string(j.at("iterations").size()) +
                                    " chain iterations");
                for (const auto& p : args.snapshots) {
                    std::ifstream sis(p);
                    if (!sis) throw DataError("missing snapshot file: " + p.string());
                    json sj;
                    try {
                        sis >> sj;
                    } catch (const json::exception& e) {
                        throw DataError(p.string() + ": " + e.what());
                    }
                    snapshots.push_back(rougeval::eval_report_from_json(sj));
                }
            } else {
                for (const auto& it : j.at("iterations")) {
                    if (!it.contains("eval") || it["eval"].is_null())
                        throw DataError(
                            "chain report has no embedded eval snapshots; pass snapshot files");
                    snapshots.push_back(rougeval::eval_report_from_json(it["eval"]));
                }
            }
        } catch (const json::exception& e) {
            throw DataError(args.chain_report.string() + ": " + e.what());
        }

        const rougeval::ForgettingTrace trace =
            rougeval::forgetting_trace(snapshots, template_order);
        out << rougeval::render_forgetting_table(trace);
        if (args.out_file) {
            container::write_text_atomic(*args.out_file,
                                         rougeval::forgetting_trace_to_json(trace).dump(2) + "\n");
            out << "wrote " << args.out_file->string() << "\n";
        }
    });
}

}  // namespace cli
