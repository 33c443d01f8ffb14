#pragma once

#include "cocola/taskflow.hpp"
#include "cocola/tinylm.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

// ROUGE-L F1 scoring and the evaluation harness over held-in/held-out task
// streams, plus the per-iteration forgetting analysis.

namespace rougeval {

/// Longest common subsequence length via the standard O(|a| * |b|) dynamic
/// program.
template <typename T>
size_t lcs_length(std::span<const T> a, std::span<const T> b) {
    const size_t n = a.size(), m = b.size();
    if (n == 0 || m == 0) return 0;
    std::vector<size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

/// Tokens scored by ROUGE: whitespace split after taskflow::normalize.
std::vector<std::string> rouge_tokens(const std::string& text);

/// ROUGE-L F1 with beta = 1: P = LCS/|cand|, R = LCS/|ref|,
/// F1 = 2PR/(P+R) = 2*LCS/(|cand|+|ref|). Zero when either token list is
/// empty or the LCS is empty.
double rouge_l_f1(const std::string& candidate, const std::string& reference);

struct TemplateScore {
    std::string template_name;
    taskflow::Split split = taskflow::Split::HeldInEval;
    double mean_f1 = 0.0;
    size_t count = 0;
};

struct EvalReport {
    std::vector<TemplateScore> per_template;  // in input task order
    std::optional<double> held_in_mean;       // absent when no held-in stream
    std::optional<double> held_out_mean;
    int max_new_cap = 0;  // decode settings used (0 = per-instance policy)
    int eos = tinylm::kEos;
};

/// Greedy-decode every instance from its input text and score the
/// detokenized output against the target with ROUGE-L F1. The per-instance
/// decode budget is max(8, ceil(1.5 * target byte length)), optionally
/// capped by max_new_cap (> 0). Per-template means are averaged into split
/// aggregates. Deterministic regardless of `threads`.
EvalReport evaluate(const tinylm::TinyLM& model, const lora::AdapterSet* adapters,
                    const std::vector<taskflow::TemplateStream>& tasks, int max_new_cap, int eos,
                    int threads = 1);

/// The same harness over an arbitrary instance -> generated-text function;
/// evaluate() plugs in model decoding, tests plug in stubs.
using DecodeFn = std::function<std::string(const taskflow::PromptInstance&)>;
EvalReport evaluate_decoded(const std::vector<taskflow::TemplateStream>& tasks,
                            const DecodeFn& decode, int max_new_cap, int eos, int threads = 1);

struct ForgettingTrace {
    std::vector<std::string> templates;        // template_order
    std::vector<std::vector<double>> scores;   // scores[t][i]: template t at iteration i
    // delta = (score at the template's own training iteration) minus
    // (score at the final iteration); defined only for templates trained
    // before the final iteration
    std::map<std::string, double> deltas;
};

/// Assemble the template x iteration score matrix from one evaluation
/// snapshot per chain iteration (in order) and derive forgetting deltas.
ForgettingTrace forgetting_trace(const std::vector<EvalReport>& snapshots,
                                 const std::vector<std::string>& template_order);

nlohmann::ordered_json eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);
nlohmann::ordered_json forgetting_trace_to_json(const ForgettingTrace& trace);

/// Plain-text template x iteration matrix plus the delta column.
std::string render_forgetting_table(const ForgettingTrace& trace);

}  // namespace rougeval
