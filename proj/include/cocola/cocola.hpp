#pragma once

#include "cocola/lora.hpp"
#include "cocola/numkit.hpp"
#include "cocola/rougeval.hpp"
#include "cocola/taskflow.hpp"
#include "cocola/tinylm.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

// The chained-adapter training engine: rehearsal mixing, the iterative
// tune -> merge -> expand loop, the AdamW optimizer and the linear
// learning-rate schedule, producing per-iteration chain reports.

namespace cocola {

using numkit::Matrix;
using numkit::Rng;

struct TrainConfig {
    double lr0 = 6e-5;
    int batch_size = 16;
    int epochs_per_phase = 4;
    double rehearsal_r = 0.01;
    int lora_rank = 4;
    double lora_alpha = 4.0;  // defaults to lora_rank so the update is exactly W + BA
    double init_std = 0.02;
    uint64_t seed = 0;
    std::vector<std::string> template_order;
    int cap = 2000;

    // base model construction
    int model_dim = 32;
    int model_blocks = 1;
    int context_len = 128;
    double model_init_std = 0.08;

    // layer-id suffix patterns receiving adapters ("W_q" matches
    // "block0.W_q"; a full layer id is accepted as well)
    std::vector<std::string> lora_targets = {"W_q", "W_v"};

    int eval_max_new = 0;  // 0 = per-instance decode budget
    int threads = 1;

    void validate() const;  // throws ConfigError
};

/// Strict parse: unknown keys are rejected, missing keys take defaults,
/// lora_alpha defaults to lora_rank when absent.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const TrainConfig& cfg);
TrainConfig load_config(const std::filesystem::path& path);

struct TrainSet {
    std::string current_template;
    std::vector<taskflow::PromptInstance> examples;
    std::map<std::string, size_t> rehearsal_counts;  // per previous template
};

/// The rehearsal mixture: the current stream plus, for each earlier stream
/// T_j, a uniform sample without replacement of size
/// min(|T_j|, max(1, round(r * |T_j|))) when r > 0, else 0. The combined
/// list is shuffled with rng and every sampled count is recorded.
TrainSet rehearsal_mixture(const std::vector<taskflow::TemplateStream>& history,
                           const taskflow::TemplateStream& current, double r, Rng& rng);

struct AdamWHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct OptimizerState {
    struct Moments {
        Matrix m, v;
    };
    AdamWHyper hyper;
    int step = 0;
    std::map<std::string, Moments> moments;  // keyed "<layer_id>/A", "<layer_id>/B"
};

/// One decoupled-weight-decay Adam update of every adapter factor:
///   p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * weight_decay * p
/// Non-finite gradients are rejected naming the layer.
void adamw_step(lora::AdapterSet& params, const tinylm::Gradients& grads, OptimizerState& state,
                double lr);

/// lr0 * (1 - step / total_steps), for 0 <= step <= total_steps.
double linear_lr(int step, int total_steps, double lr0);

/// Token-level training pair for one instance: sequence
/// [BOS] input-bytes target-bytes [EOS], shifted next-token targets with
/// prompt positions masked. Over-long sequences drop oldest prompt tokens.
std::pair<tinylm::TokenSeq, std::vector<int>> training_pair(const taskflow::PromptInstance& inst,
                                                            int context_len);

struct LossPoint {
    int step = 0;   // step within this phase
    int epoch = 0;  // epoch within this phase
    double loss = 0.0;
    double lr = 0.0;
};

/// epochs_per_phase passes over the train set in rng-shuffled mini-batches.
/// Loss is softmax cross-entropy on target tokens only; gradients flow to
/// the adapters only; per-step lr follows linear_lr over this phase's step
/// budget. Base weights are untouched by construction.
std::vector<LossPoint> tune_phase(tinylm::TinyLM& model, lora::AdapterSet& adapters,
                                  const TrainSet& trainset, const TrainConfig& cfg, Rng& rng);

struct IterationReport {
    std::string template_name;
    int generation = 0;
    std::map<std::string, size_t> rehearsal_counts;
    std::vector<LossPoint> losses;
    lora::MergeReceipt receipt;
    std::map<std::string, numkit::Index> delta_rank;  // numerical_rank(W - W0, 1e-8)
    std::optional<rougeval::EvalReport> eval_snapshot;
};

struct ChainReport {
    TrainConfig config;
    std::vector<IterationReport> iterations;
};

enum class ChainPhase { BeforeTune, AfterTune, AfterMerge };
using ChainHook = std::function<void(int iteration, ChainPhase phase, const tinylm::TinyLM& model)>;

/// The full chained loop: for each template in template_order, build the
/// rehearsal mixture, attach (first iteration) or expand fresh adapters,
/// tune, merge, record the cumulative per-layer delta rank and an
/// evaluation snapshot. Returns the report; the model ends fully merged
/// with no live adapters. Phase errors are rethrown annotated with the
/// iteration index and phase name.
ChainReport run_chain(tinylm::TinyLM& model, const std::vector<taskflow::TemplateStream>& tasks,
                      const std::vector<taskflow::TemplateStream>& eval_tasks,
                      const TrainConfig& cfg, const ChainHook& hook = {});

/// Concrete layer ids selected by cfg.lora_targets, in registry order.
std::vector<std::string> resolve_lora_targets(const tinylm::TinyLM& model,
                                              const std::vector<std::string>& patterns);

nlohmann::ordered_json report_to_json(const ChainReport& report);
std::string loss_log_csv(const ChainReport& report);

}  // namespace cocola
