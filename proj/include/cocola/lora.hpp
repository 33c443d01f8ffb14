#pragma once

#include "cocola/numkit.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>

namespace tinylm {
class TinyLM;
}

// Low-rank adapters and the merge/expand half of the chained training loop:
// attach (A, B) pairs to named layers, compute effective weights
// W' = W + (alpha/rank) * B * A, fold them into the base, reinitialize.
//
// Model weights are stored (d_in x d_out) and applied as x * W, so for a
// target of shape (R x C) the factors are B: R x rank (zero-initialized)
// and A: rank x C (Gaussian). B * A therefore composes to exactly the
// target's shape and a fresh adapter is an exact no-op.

namespace lora {

using numkit::Matrix;
using numkit::Rng;

struct LoraAdapter {
    std::string layer_id;
    Matrix A;  // rank x d_out, Gaussian at init
    Matrix B;  // d_in x rank, zero at init
    int rank = 0;
    double alpha = 0.0;

    double scale() const { return alpha / static_cast<double>(rank); }
};

struct AdapterSet {
    std::map<std::string, LoraAdapter> adapters;  // keyed by layer_id
    int generation = 0;   // number of expand phases that preceded this set
    bool consumed = false;  // set by merge; a consumed set is unusable

    bool empty() const { return adapters.empty(); }
    const LoraAdapter* find(const std::string& layer_id) const;
};

/// One fresh adapter per layer id: A ~ N(0, init_std^2), B = 0,
/// generation = 0. Unknown layer ids are rejected listing the offenders;
/// rank must satisfy 1 <= rank <= min(rows, cols) for every target.
AdapterSet attach(const tinylm::TinyLM& model, std::span<const std::string> layer_ids, int rank,
                  double alpha, double init_std, Rng& rng);

/// W + (alpha / rank) * B * A. Pure; throws on shape mismatch.
Matrix effective_weight(const Matrix& w, const LoraAdapter& adapter);

struct MergeReceipt {
    int generation = 0;
    std::map<std::string, double> delta_norm;  // Frobenius norm per layer
};

/// Folds every adapter into its target layer and consumes the set. The
/// receipt records the Frobenius norm of each per-layer delta. Merging an
/// already-consumed set is rejected.
MergeReceipt merge(tinylm::TinyLM& model, AdapterSet& adapters);

/// attach() with generation = prev_generation + 1, for the round after a
/// merge.
AdapterSet expand(const tinylm::TinyLM& model, std::span<const std::string> layer_ids, int rank,
                  double alpha, double init_std, Rng& rng, int prev_generation);

/// Adapter checkpoints use the same binary container as model checkpoints
/// and round-trip bit-exactly.
void save_adapters(const AdapterSet& set, const std::filesystem::path& path);
AdapterSet load_adapters(const std::filesystem::path& path);

}  // namespace lora
