#include "cocola/cocola.hpp"

#include "cocola/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace cocola {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + key + "'" +
                              (where.empty() ? "" : " in " + where));
    }
}

size_t rehearsal_count(size_t stream_size, double r) {
    if (r <= 0.0 || stream_size == 0) return 0;
    const auto rounded = static_cast<size_t>(
        std::llround(r * static_cast<double>(stream_size)));
    return std::min(stream_size, std::max<size_t>(1, rounded));
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr0 >= 0.0)) throw ConfigError("config: lr0 must be >= 0");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (epochs_per_phase < 0) throw ConfigError("config: epochs_per_phase must be >= 0");
    if (!(rehearsal_r >= 0.0 && rehearsal_r <= 1.0))
        throw ConfigError("config: rehearsal_r must be in [0, 1]");
    if (lora_rank < 1) throw ConfigError("config: lora_rank must be >= 1");
    if (!(lora_alpha > 0.0)) throw ConfigError("config: lora_alpha must be > 0");
    if (!(init_std >= 0.0)) throw ConfigError("config: init_std must be >= 0");
    if (cap < 1) throw ConfigError("config: cap must be >= 1");
    if (model_dim < 1 || model_blocks < 1 || context_len < 2)
        throw ConfigError("config: model dimensions must be positive (context_len >= 2)");
    if (!(model_init_std >= 0.0)) throw ConfigError("config: model.init_std must be >= 0");
    if (lora_targets.empty()) throw ConfigError("config: lora_targets must be non-empty");
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
    if (eval_max_new < 0) throw ConfigError("config: eval_max_new must be >= 0");
}

TrainConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    require_keys(j, {"lr0", "batch_size", "epochs_per_phase", "rehearsal_r", "lora_rank",
                     "lora_alpha", "init_std", "seed", "template_order", "cap", "model",
                     "lora_targets", "eval_max_new", "threads"},
                 "");
    TrainConfig cfg;
    try {
        cfg.lr0 = j.value("lr0", cfg.lr0);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.epochs_per_phase = j.value("epochs_per_phase", cfg.epochs_per_phase);
        cfg.rehearsal_r = j.value("rehearsal_r", cfg.rehearsal_r);
        cfg.lora_rank = j.value("lora_rank", cfg.lora_rank);
        cfg.lora_alpha = j.contains("lora_alpha") ? j["lora_alpha"].get<double>()
                                                  : static_cast<double>(cfg.lora_rank);
        cfg.init_std = j.value("init_std", cfg.init_std);
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("template_order"))
            cfg.template_order = j["template_order"].get<std::vector<std::string>>();
        cfg.cap = j.value("cap", cfg.cap);
        if (j.contains("model")) {
            const json& m = j["model"];
            if (!m.is_object()) throw ConfigError("config: 'model' must be an object");
            require_keys(m, {"dim", "n_blocks", "context_len", "init_std"}, "'model'");
            cfg.model_dim = m.value("dim", cfg.model_dim);
            cfg.model_blocks = m.value("n_blocks", cfg.model_blocks);
            cfg.context_len = m.value("context_len", cfg.context_len);
            cfg.model_init_std = m.value("init_std", cfg.model_init_std);
        }
        if (j.contains("lora_targets"))
            cfg.lora_targets = j["lora_targets"].get<std::vector<std::string>>();
        cfg.eval_max_new = j.value("eval_max_new", cfg.eval_max_new);
        cfg.threads = j.value("threads", cfg.threads);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ordered_json config_to_json(const TrainConfig& cfg) {
    ordered_json j;
    j["lr0"] = cfg.lr0;
    j["batch_size"] = cfg.batch_size;
    j["epochs_per_phase"] = cfg.epochs_per_phase;
    j["rehearsal_r"] = cfg.rehearsal_r;
    j["lora_rank"] = cfg.lora_rank;
    j["lora_alpha"] = cfg.lora_alpha;
    j["init_std"] = cfg.init_std;
    j["seed"] = cfg.seed;
    j["template_order"] = cfg.template_order;
    j["cap"] = cfg.cap;
    j["model"] = {{"dim", cfg.model_dim},
                  {"n_blocks", cfg.model_blocks},
                  {"context_len", cfg.context_len},
                  {"init_std", cfg.model_init_std}};
    j["lora_targets"] = cfg.lora_targets;
    j["eval_max_new"] = cfg.eval_max_new;
    j["threads"] = cfg.threads;
    return j;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

TrainSet rehearsal_mixture(const std::vector<taskflow::TemplateStream>& history,
                           const taskflow::TemplateStream& current, double r, Rng& rng) {
    if (!(r >= 0.0 && r <= 1.0))
        throw std::invalid_argument("rehearsal_mixture: r must be in [0, 1]");
    for (const auto& h : history)
        if (h.template_name == current.template_name)
            throw std::invalid_argument("rehearsal_mixture: current template '" +
                                        current.template_name + "' is already in the history");

    TrainSet out;
    out.current_template = current.template_name;
    out.examples = current.instances;
    for (const auto& prev : history) {
        const size_t s = rehearsal_count(prev.instances.size(), r);
        out.rehearsal_counts[prev.template_name] = s;
        if (s == 0) continue;
        const auto picked = numkit::sample_without_replacement(prev.instances.size(), s, rng);
        for (const size_t idx : picked) out.examples.push_back(prev.instances[idx]);
    }
    numkit::shuffle(out.examples, rng);
    return out;
}

void adamw_step(lora::AdapterSet& params, const tinylm::Gradients& grads, OptimizerState& state,
                double lr) {
    if (!(lr >= 0.0)) throw std::invalid_argument("adamw_step: lr must be >= 0");
    if (params.consumed) throw std::invalid_argument("adamw_step: adapter set was consumed");
    ++state.step;
    const double b1 = state.hyper.beta1;
    const double b2 = state.hyper.beta2;
    const double bc1 = 1.0 - std::pow(b1, state.step);
    const double bc2 = 1.0 - std::pow(b2, state.step);

    const auto update = [&](const std::string& key, Matrix& p, const Matrix& g,
                            const std::string& layer_id) {
        if (!numkit::all_finite(g))
            throw NumericError("adamw_step: non-finite gradient for " + layer_id);
        if (g.rows() != p.rows() || g.cols() != p.cols())
            throw std::invalid_argument("adamw_step: gradient shape mismatch for " + layer_id);
        auto& mom = state.moments[key];
        if (mom.m.size() == 0) {
            mom.m = Matrix::Zero(p.rows(), p.cols());
            mom.v = Matrix::Zero(p.rows(), p.cols());
        }
        mom.m = b1 * mom.m + (1.0 - b1) * g;
        mom.v = b2 * mom.v.array() + (1.0 - b2) * g.array().square();
        const Matrix mhat = mom.m / bc1;
        const Matrix vhat = mom.v / bc2;
        p.array() -= lr * mhat.array() / (vhat.array().sqrt() + state.hyper.eps);
        p -= (lr * state.hyper.weight_decay) * p;
    };

    for (auto& [id, adapter] : params.adapters) {
        const auto it = grads.adapter.find(id);
        if (it == grads.adapter.end())
            throw std::invalid_argument("adamw_step: no gradient entry for layer " + id);
        update(id + "/A", adapter.A, it->second.A, id);
        update(id + "/B", adapter.B, it->second.B, id);
    }
}

double linear_lr(int step, int total_steps, double lr0) {
    if (total_steps < 1) throw std::invalid_argument("linear_lr: total_steps must be >= 1");
    if (step < 0 || step > total_steps)
        throw std::invalid_argument("linear_lr: step must be in [0, total_steps]");
    return lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

std::pair<tinylm::TokenSeq, std::vector<int>> training_pair(const taskflow::PromptInstance& inst,
                                                            int context_len) {
    tinylm::TokenSeq full;
    full.push_back(tinylm::kBos);
    for (const int t : tinylm::encode_bytes(inst.input_text)) full.push_back(t);
    size_t prompt_len = full.size();
    for (const int t : tinylm::encode_bytes(inst.target_text)) full.push_back(t);
    full.push_back(tinylm::kEos);

    const auto max_len = static_cast<size_t>(context_len) + 1;  // inputs are full[:-1]
    if (full.size() > max_len) {
        const size_t drop = full.size() - max_len;
        if (drop >= prompt_len)
            throw DataError("training_pair: target alone exceeds the context length");
        full.erase(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(drop));
        prompt_len -= drop;
    }

    tinylm::TokenSeq input(full.begin(), full.end() - 1);
    std::vector<int> targets(input.size(), tinylm::kIgnoreIndex);
    for (size_t i = prompt_len - 1; i < input.size(); ++i) targets[i] = full[i + 1];
    return {std::move(input), std::move(targets)};
}

std::vector<LossPoint> tune_phase(tinylm::TinyLM& model, lora::AdapterSet& adapters,
                                  const TrainSet& trainset, const TrainConfig& cfg, Rng& rng) {
    if (trainset.examples.empty()) throw DataError("tune_phase: empty train set");
    if (adapters.consumed) throw std::invalid_argument("tune_phase: adapter set was consumed");
    if (adapters.empty()) throw std::invalid_argument("tune_phase: empty adapter set");

    std::vector<LossPoint> log;
    if (cfg.epochs_per_phase == 0) return log;

    // tokenize once
    std::vector<std::pair<tinylm::TokenSeq, std::vector<int>>> pairs;
    pairs.reserve(trainset.examples.size());
    for (const auto& inst : trainset.examples)
        pairs.push_back(training_pair(inst, model.config().context_len));

    const size_t n = pairs.size();
    const auto batch = static_cast<size_t>(cfg.batch_size);
    const int steps_per_epoch = static_cast<int>((n + batch - 1) / batch);
    const int total_steps = cfg.epochs_per_phase * steps_per_epoch;

    OptimizerState opt;
    std::vector<size_t> order(n);
    int gstep = 0;
    for (int epoch = 0; epoch < cfg.epochs_per_phase; ++epoch) {
        for (size_t i = 0; i < n; ++i) order[i] = i;
        numkit::shuffle(order, rng);
        for (size_t begin = 0; begin < n; begin += batch) {
            const size_t end = std::min(begin + batch, n);
            const double inv = 1.0 / static_cast<double>(end - begin);

            tinylm::Gradients acc;
            for (size_t k = begin; k < end; ++k) {
                const auto& [input, targets] = pairs[order[k]];
                tinylm::Gradients g =
                    tinylm::backward(model, adapters, input, targets, tinylm::Trainable::AdaptersOnly);
                acc.loss += g.loss;
                for (auto& [id, ag] : g.adapter) {
                    auto it = acc.adapter.find(id);
                    if (it == acc.adapter.end()) acc.adapter.emplace(id, std::move(ag));
                    else {
                        it->second.A += ag.A;
                        it->second.B += ag.B;
                    }
                }
            }
            acc.loss *= inv;
            for (auto& [id, ag] : acc.adapter) {
                ag.A *= inv;
                ag.B *= inv;
            }

            const double lr = linear_lr(gstep, total_steps, cfg.lr0);
            adamw_step(adapters, acc, opt, lr);
            log.push_back({gstep, epoch, acc.loss, lr});
            ++gstep;
        }
    }
    return log;
}

std::vector<std::string> resolve_lora_targets(const tinylm::TinyLM& model,
                                              const std::vector<std::string>& patterns) {
    std::vector<std::string> ids;
    for (const auto& id : model.layer_ids()) {
        for (const auto& pat : patterns) {
            const bool suffix = id.size() > pat.size() + 1 &&
                                id.compare(id.size() - pat.size(), pat.size(), pat) == 0 &&
                                id[id.size() - pat.size() - 1] == '.';
            if (id == pat || suffix) {
                ids.push_back(id);
                break;
            }
        }
    }
    return ids;
}

ChainReport run_chain(tinylm::TinyLM& model, const std::vector<taskflow::TemplateStream>& tasks,
                      const std::vector<taskflow::TemplateStream>& eval_tasks,
                      const TrainConfig& cfg, const ChainHook& hook) {
    cfg.validate();
    if (cfg.template_order.empty()) throw ConfigError("run_chain: template_order is empty");

    // pre-flight: every ordered template has a stream
    std::vector<std::string> missing;
    for (const auto& name : cfg.template_order) {
        const auto it = std::find_if(tasks.begin(), tasks.end(),
                                     [&](const auto& s) { return s.template_name == name; });
        if (it == tasks.end()) missing.push_back(name);
    }
    if (!missing.empty()) {
        std::ostringstream os;
        os << "run_chain: template_order names without a stream:";
        for (const auto& m : missing) os << " " << m;
        throw ConfigError(os.str());
    }

    const std::vector<std::string> target_ids = resolve_lora_targets(model, cfg.lora_targets);
    if (target_ids.empty())
        throw ConfigError("run_chain: lora_targets matched no layers of the model");

    std::map<std::string, Matrix> w0;
    for (const auto& id : target_ids) w0.emplace(id, model.weight(id));

    const auto annotate = [](int iteration, const char* phase, const auto& fn) {
        const auto wrap = [&](const std::string& what) {
            return "iteration " + std::to_string(iteration + 1) + " (" + std::string(phase) +
                   "): " + what;
        };
        try {
            return fn();
        } catch (const ConfigError& e) {
            throw ConfigError(wrap(e.what()));
        } catch (const DataError& e) {
            throw DataError(wrap(e.what()));
        } catch (const NumericError& e) {
            throw NumericError(wrap(e.what()));
        } catch (const std::exception& e) {
            throw std::runtime_error(wrap(e.what()));
        }
    };

    ChainReport report;
    report.config = cfg;

    std::vector<taskflow::TemplateStream> history;
    for (size_t i = 0; i < cfg.template_order.size(); ++i) {
        const int iter = static_cast<int>(i);
        const auto& name = cfg.template_order[i];
        const auto& current = *std::find_if(tasks.begin(), tasks.end(),
                                            [&](const auto& s) { return s.template_name == name; });

        IterationReport ir;
        ir.template_name = name;

        Rng rng_sample(Rng::mix(cfg.seed, 0xE100 + i));
        Rng rng_init(Rng::mix(cfg.seed, 0xE200 + i));
        Rng rng_tune(Rng::mix(cfg.seed, 0xE300 + i));

        const TrainSet mixture = annotate(iter, "mixture", [&] {
            return rehearsal_mixture(history, current, cfg.rehearsal_r, rng_sample);
        });
        ir.rehearsal_counts = mixture.rehearsal_counts;

        lora::AdapterSet adapters = annotate(iter, i == 0 ? "attach" : "expand", [&] {
            if (i == 0)
                return lora::attach(model, target_ids, cfg.lora_rank, cfg.lora_alpha, cfg.init_std,
                                    rng_init);
            return lora::expand(model, target_ids, cfg.lora_rank, cfg.lora_alpha, cfg.init_std,
                                rng_init, iter - 1);
        });
        ir.generation = adapters.generation;

        if (hook) hook(iter, ChainPhase::BeforeTune, model);
        ir.losses = annotate(iter, "tune", [&] {
            return tune_phase(model, adapters, mixture, cfg, rng_tune);
        });
        if (hook) hook(iter, ChainPhase::AfterTune, model);

        ir.receipt = annotate(iter, "merge", [&] { return lora::merge(model, adapters); });
        if (hook) hook(iter, ChainPhase::AfterMerge, model);

        for (const auto& id : target_ids) {
            const Matrix delta = model.weight(id) - w0.at(id);
            ir.delta_rank[id] = numkit::numerical_rank(delta, 1e-8);
        }

        if (!eval_tasks.empty()) {
            ir.eval_snapshot = annotate(iter, "evaluate", [&] {
                return rougeval::evaluate(model, nullptr, eval_tasks, cfg.eval_max_new,
                                          tinylm::kEos, cfg.threads);
            });
        }

        history.push_back(current);
        report.iterations.push_back(std::move(ir));
    }
    return report;
}

ordered_json report_to_json(const ChainReport& report) {
    ordered_json j;
    j["config"] = config_to_json(report.config);
    j["iterations"] = ordered_json::array();
    for (const auto& ir : report.iterations) {
        ordered_json e;
        e["template"] = ir.template_name;
        e["generation"] = ir.generation;
        ordered_json counts = ordered_json::object();
        for (const auto& [name, c] : ir.rehearsal_counts) counts[name] = c;
        e["rehearsal_counts"] = std::move(counts);
        ordered_json losses = ordered_json::array();
        for (const auto& lp : ir.losses)
            losses.push_back(
                {{"step", lp.step}, {"epoch", lp.epoch}, {"loss", lp.loss}, {"lr", lp.lr}});
        e["losses"] = std::move(losses);
        ordered_json norms = ordered_json::object();
        for (const auto& [id, norm] : ir.receipt.delta_norm) norms[id] = norm;
        e["merge_delta_norms"] = std::move(norms);
        ordered_json ranks = ordered_json::object();
        for (const auto& [id, rank] : ir.delta_rank) ranks[id] = rank;
        e["cumulative_delta_rank"] = std::move(ranks);
        e["eval"] = ir.eval_snapshot ? rougeval::eval_report_to_json(*ir.eval_snapshot)
                                     : ordered_json(nullptr);
        j["iterations"].push_back(std::move(e));
    }
    return j;
}

std::string loss_log_csv(const ChainReport& report) {
    std::string csv = "step,epoch,template,loss,lr\n";
    for (const auto& ir : report.iterations) {
        for (const auto& lp : ir.losses) {
            csv += std::to_string(lp.step);
            csv += ',';
            csv += std::to_string(lp.epoch);
            csv += ',';
            csv += ir.template_name;
            csv += ',';
            csv += fmt_double(lp.loss);
            csv += ',';
            csv += fmt_double(lp.lr);
            csv += '\n';
        }
    }
    return csv;
}

}  // namespace cocola
