#pragma once

#include "cocola/lora.hpp"
#include "cocola/numkit.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// A minimal decoder-only language model with hand-written forward and
// backward passes: token + learned absolute position embeddings, then per
// block single-head causal attention and a GELU feed-forward, both with
// residual connections, then an unembedding projection. No normalization
// layers, no biases. Weights are (d_in x d_out) and applied as x * W.

namespace tinylm {

using numkit::Matrix;
using numkit::Rng;

// Byte-level tokenizer: ids 0..255 are raw bytes, then the two specials.
inline constexpr int kByteVocab = 256;
inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kVocabSize = 258;
inline constexpr int kIgnoreIndex = -1;

using TokenSeq = std::vector<int>;

/// Raw bytes of text as token ids (no specials added).
TokenSeq encode_bytes(std::string_view text);

/// Inverse of encode_bytes; ids outside [0, 256) are skipped.
std::string decode_bytes(std::span<const int> tokens);

struct TinyLMConfig {
    int vocab_size = kVocabSize;
    int dim = 32;
    int n_blocks = 1;
    int context_len = 128;
};

struct Block {
    Matrix W_q, W_k, W_v, W_o;  // d x d
    Matrix W_ff1;               // d x 4d
    Matrix W_ff2;               // 4d x d
};

class TinyLM {
public:
    TinyLM() = default;
    explicit TinyLM(const TinyLMConfig& cfg);  // all-zero weights

    static TinyLM random_init(const TinyLMConfig& cfg, double init_std, Rng& rng);

    const TinyLMConfig& config() const { return cfg_; }

    // Layer registry: stable ids in a fixed order ("embedding",
    // "pos_embedding", "block<i>.W_q" ... "block<i>.W_ff2", "unembedding").
    std::vector<std::string> layer_ids() const;
    bool has_layer(const std::string& layer_id) const;
    Matrix& weight(const std::string& layer_id);
    const Matrix& weight(const std::string& layer_id) const;

    Matrix embedding;      // V x d
    Matrix pos_embedding;  // context_len x d
    std::vector<Block> blocks;
    Matrix unembedding;  // d x V

private:
    TinyLMConfig cfg_;
};

/// Logits (T x V) for a token sequence. When adapters are supplied, each
/// adapted layer uses its effective weight; base weights are never touched.
Matrix forward(const TinyLM& model, const lora::AdapterSet* adapters, std::span<const int> input);

enum class Trainable { AdaptersOnly, All };

struct AdapterGrads {
    Matrix A, B;
};

struct Gradients {
    double loss = 0.0;
    std::map<std::string, Matrix> base;           // per layer_id (selector All only)
    std::map<std::string, AdapterGrads> adapter;  // per adapted layer_id
};

/// Exact analytic gradients of the mean softmax cross-entropy of `targets`
/// (with kIgnoreIndex masking) w.r.t. the selected parameters. Under
/// Trainable::AdaptersOnly no base-weight entries are produced at all.
Gradients backward(const TinyLM& model, const lora::AdapterSet& adapters,
                   std::span<const int> input, std::span<const int> targets, Trainable trainable);

/// Greedy decoding: repeatedly append the argmax next token (ties broken by
/// lowest token id) until `eos` is emitted or max_new tokens were produced.
/// Returns only the newly generated tokens (including the final eos, when
/// one was emitted). If the window outgrows the context length the oldest
/// tokens are dropped.
TokenSeq greedy_decode(const TinyLM& model, const lora::AdapterSet* adapters,
                       const TokenSeq& prompt, int max_new, int eos);

/// Sum of log-softmax probabilities of `continuation` conditioned on all
/// preceding tokens. Empty continuation => 0.0.
double sequence_logprob(const TinyLM& model, const lora::AdapterSet* adapters,
                        const TokenSeq& prompt, const TokenSeq& continuation);

/// Checkpoints: binary container with shape metadata plus every registry
/// weight; round-trips bit-exactly and is checksum-verified on load.
void save_model(const TinyLM& model, const std::filesystem::path& path);
TinyLM load_model(const std::filesystem::path& path);

/// Digest over all base weight bytes in registry order; the frozen-base
/// witness used by training-loop checks.
uint64_t weights_digest(const TinyLM& model);

}  // namespace tinylm
