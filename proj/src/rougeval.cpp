#include "cocola/rougeval.hpp"

#include "cocola/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

namespace rougeval {

namespace {

using taskflow::Split;

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (const double x : v) s += x;
    return s / static_cast<double>(v.size());
}

int decode_budget(const std::string& target_text, int max_new_cap) {
    const auto len = static_cast<double>(target_text.size());
    int budget = std::max(8, static_cast<int>(std::ceil(1.5 * len)));
    if (max_new_cap > 0) budget = std::min(budget, max_new_cap);
    return budget;
}

}  // namespace

std::vector<std::string> rouge_tokens(const std::string& text) {
    const std::string clean = taskflow::normalize(text);
    std::vector<std::string> tokens;
    std::istringstream ss(clean);
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    return tokens;
}

double rouge_l_f1(const std::string& candidate, const std::string& reference) {
    const std::vector<std::string> c = rouge_tokens(candidate);
    const std::vector<std::string> r = rouge_tokens(reference);
    if (c.empty() || r.empty()) return 0.0;
    const size_t lcs = lcs_length(std::span<const std::string>(c), std::span<const std::string>(r));
    if (lcs == 0) return 0.0;
    return 2.0 * static_cast<double>(lcs) / static_cast<double>(c.size() + r.size());
}

EvalReport evaluate(const tinylm::TinyLM& model, const lora::AdapterSet* adapters,
                    const std::vector<taskflow::TemplateStream>& tasks, int max_new_cap, int eos,
                    int threads) {
    const DecodeFn decode = [&](const taskflow::PromptInstance& inst) {
        tinylm::TokenSeq prompt;
        prompt.push_back(tinylm::kBos);
        const tinylm::TokenSeq bytes = tinylm::encode_bytes(inst.input_text);
        prompt.insert(prompt.end(), bytes.begin(), bytes.end());
        const tinylm::TokenSeq generated = tinylm::greedy_decode(
            model, adapters, prompt, decode_budget(inst.target_text, max_new_cap), eos);
        return tinylm::decode_bytes(generated);
    };
    return evaluate_decoded(tasks, decode, max_new_cap, eos, threads);
}

EvalReport evaluate_decoded(const std::vector<taskflow::TemplateStream>& tasks,
                            const DecodeFn& decode, int max_new_cap, int eos, int threads) {
    if (tasks.empty()) throw DataError("evaluate: empty task list");

    EvalReport report;
    report.max_new_cap = max_new_cap;
    report.eos = eos;

    std::vector<double> held_in, held_out;
    for (const auto& stream : tasks) {
        std::vector<double> scores(stream.instances.size(), 0.0);
        const auto score_one = [&](size_t i) {
            const auto& inst = stream.instances[i];
            scores[i] = rouge_l_f1(decode(inst), inst.target_text);
        };

        const int n_threads = std::max(1, threads);
        if (n_threads == 1 || stream.instances.size() < 2) {
            for (size_t i = 0; i < stream.instances.size(); ++i) score_one(i);
        } else {
            // instances are scored independently; the aggregation below runs
            // in index order so the report is identical for any thread count
            std::vector<std::thread> pool;
            std::atomic<size_t> next{0};
            const auto worker = [&] {
                for (;;) {
                    const size_t i = next.fetch_add(1);
                    if (i >= stream.instances.size()) return;
                    score_one(i);
                }
            };
            for (int k = 0; k < n_threads; ++k) pool.emplace_back(worker);
            for (auto& th : pool) th.join();
        }

        TemplateScore ts;
        ts.template_name = stream.template_name;
        ts.split = stream.split;
        ts.count = scores.size();
        ts.mean_f1 = scores.empty() ? 0.0 : mean_of(scores);
        if (stream.split == Split::HeldInEval) held_in.push_back(ts.mean_f1);
        if (stream.split == Split::HeldOutEval) held_out.push_back(ts.mean_f1);
        report.per_template.push_back(std::move(ts));
    }
    if (!held_in.empty()) report.held_in_mean = mean_of(held_in);
    if (!held_out.empty()) report.held_out_mean = mean_of(held_out);
    return report;
}

ForgettingTrace forgetting_trace(const std::vector<EvalReport>& snapshots,
                                 const std::vector<std::string>& template_order) {
    if (snapshots.size() != template_order.size())
        throw DataError("forgetting_trace: " + std::to_string(snapshots.size()) +
                        " snapshots for " + std::to_string(template_order.size()) +
                        " chain iterations");

    ForgettingTrace trace;
    trace.templates = template_order;
    trace.scores.assign(template_order.size(), std::vector<double>(snapshots.size(), 0.0));
    for (size_t t = 0; t < template_order.size(); ++t) {
        for (size_t i = 0; i < snapshots.size(); ++i) {
            const auto& per = snapshots[i].per_template;
            const auto it = std::find_if(per.begin(), per.end(), [&](const TemplateScore& s) {
                return s.template_name == template_order[t];
            });
            if (it == per.end())
                throw DataError("forgetting_trace: snapshot " + std::to_string(i) +
                                " has no score for template '" + template_order[t] + "'");
            trace.scores[t][i] = it->mean_f1;
        }
    }
    const size_t last = snapshots.size() - 1;
    for (size_t t = 0; t < template_order.size(); ++t) {
        if (t >= last) continue;  // only templates trained before the final iteration
        trace.deltas[template_order[t]] = trace.scores[t][t] - trace.scores[t][last];
    }
    return trace;
}

nlohmann::ordered_json eval_report_to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["per_template"] = nlohmann::ordered_json::array();
    for (const auto& ts : report.per_template) {
        nlohmann::ordered_json e;
        e["template_name"] = ts.template_name;
        e["split"] = taskflow::split_name(ts.split);
        e["mean_rouge_l_f1"] = ts.mean_f1;
        e["count"] = ts.count;
        j["per_template"].push_back(std::move(e));
    }
    if (report.held_in_mean) j["held_in_mean"] = *report.held_in_mean;
    else j["held_in_mean"] = nullptr;
    if (report.held_out_mean) j["held_out_mean"] = *report.held_out_mean;
    else j["held_out_mean"] = nullptr;
    j["decode"] = {{"max_new_cap", report.max_new_cap}, {"eos", report.eos}, {"strategy", "greedy"}};
    return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport report;
    try {
        for (const auto& e : j.at("per_template")) {
            TemplateScore ts;
            ts.template_name = e.at("template_name").get<std::string>();
            ts.split = taskflow::parse_split(e.at("split").get<std::string>());
            ts.mean_f1 = e.at("mean_rouge_l_f1").get<double>();
            ts.count = e.at("count").get<size_t>();
            report.per_template.push_back(std::move(ts));
        }
        if (j.contains("held_in_mean") && !j["held_in_mean"].is_null())
            report.held_in_mean = j["held_in_mean"].get<double>();
        if (j.contains("held_out_mean") && !j["held_out_mean"].is_null())
            report.held_out_mean = j["held_out_mean"].get<double>();
        if (j.contains("decode")) {
            report.max_new_cap = j["decode"].value("max_new_cap", 0);
            report.eos = j["decode"].value("eos", tinylm::kEos);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("eval report: ") + e.what());
    }
    return report;
}

nlohmann::ordered_json forgetting_trace_to_json(const ForgettingTrace& trace) {
    nlohmann::ordered_json j;
    j["templates"] = trace.templates;
    j["scores"] = trace.scores;
    nlohmann::ordered_json deltas;
    for (const auto& [name, d] : trace.deltas) deltas[name] = d;
    j["forgetting_deltas"] = std::move(deltas);
    return j;
}

std::string render_forgetting_table(const ForgettingTrace& trace) {
    const size_t iters = trace.scores.empty() ? 0 : trace.scores[0].size();
    size_t name_w = 8;
    for (const auto& t : trace.templates) name_w = std::max(name_w, t.size());

    std::ostringstream os;
    os << std::string(name_w, ' ') << " |";
    for (size_t i = 0; i < iters; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, " iter%02zu", i + 1);
        os << buf;
    }
    os << " | forget\n";
    os << std::string(name_w + 2 + iters * 7 + 9, '-') << "\n";
    for (size_t t = 0; t < trace.templates.size(); ++t) {
        os << trace.templates[t] << std::string(name_w - trace.templates[t].size(), ' ') << " |";
        for (size_t i = 0; i < iters; ++i) {
            char buf[16];
            std::snprintf(buf, sizeof buf, " %6.3f", trace.scores[t][i]);
            os << buf;
        }
        const auto it = trace.deltas.find(trace.templates[t]);
        if (it != trace.deltas.end()) {
            char buf[16];
            std::snprintf(buf, sizeof buf, " | %6.3f", it->second);
            os << buf;
        } else {
            os << " |      -";
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace rougeval
