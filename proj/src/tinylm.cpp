#include "cocola/tinylm.hpp"

#include "cocola/container.hpp"
#include "cocola/errors.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tinylm {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    const double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// Materialized effective weights for the adapted layers of one pass.
// merge() applies the exact same expression, so adapter-active outputs and
// post-merge outputs match bit for bit.
class EffectiveView {
public:
    EffectiveView(const TinyLM& model, const lora::AdapterSet* adapters) : model_(model) {
        if (adapters == nullptr) return;
        if (adapters->consumed)
            throw std::invalid_argument("adapter set was consumed by merge and is unusable");
        for (const auto& [id, a] : adapters->adapters) {
            if (!model.has_layer(id))
                throw std::invalid_argument("adapter targets unknown layer id: " + id);
            eff_.emplace(id, lora::effective_weight(model.weight(id), a));
        }
    }

    const Matrix& get(const std::string& id) const {
        auto it = eff_.find(id);
        return it != eff_.end() ? it->second : model_.weight(id);
    }

private:
    const TinyLM& model_;
    std::map<std::string, Matrix> eff_;
};

struct BlockCache {
    Matrix x_in;     // T x d
    Matrix q, k, v;  // T x d
    Matrix probs;    // T x T, strictly lower-triangular support incl. diagonal
    Matrix attn_o;   // T x d  (probs * v)
    Matrix x_mid;    // T x d  (post-attention residual)
    Matrix ff_pre;   // T x 4d
    Matrix ff_act;   // T x 4d
};

struct ForwardCache {
    Matrix x0;
    std::vector<BlockCache> blocks;
    Matrix x_final;
    Matrix logits;
};

void check_input(const TinyLM& model, std::span<const int> input) {
    const auto& cfg = model.config();
    if (input.empty()) throw std::invalid_argument("forward: empty input");
    if (static_cast<int>(input.size()) > cfg.context_len)
        throw std::invalid_argument("forward: input length " + std::to_string(input.size()) +
                                    " exceeds context length " + std::to_string(cfg.context_len));
    for (size_t i = 0; i < input.size(); ++i) {
        if (input[i] < 0 || input[i] >= cfg.vocab_size)
            throw std::invalid_argument("forward: token id " + std::to_string(input[i]) +
                                        " out of range at position " + std::to_string(i));
    }
}

ForwardCache run_forward(const TinyLM& model, const EffectiveView& w, std::span<const int> input) {
    const auto& cfg = model.config();
    const auto t = static_cast<numkit::Index>(input.size());
    const auto d = static_cast<numkit::Index>(cfg.dim);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.dim));

    ForwardCache cache;
    const Matrix& emb = w.get("embedding");
    const Matrix& pos = w.get("pos_embedding");
    cache.x0.resize(t, d);
    for (numkit::Index i = 0; i < t; ++i)
        cache.x0.row(i) = emb.row(input[static_cast<size_t>(i)]) + pos.row(i);

    Matrix x = cache.x0;
    cache.blocks.resize(static_cast<size_t>(cfg.n_blocks));
    for (int b = 0; b < cfg.n_blocks; ++b) {
        BlockCache& c = cache.blocks[static_cast<size_t>(b)];
        const std::string p = "block" + std::to_string(b) + ".";
        c.x_in = x;
        c.q = x * w.get(p + "W_q");
        c.k = x * w.get(p + "W_k");
        c.v = x * w.get(p + "W_v");

        Matrix scores = (c.q * c.k.transpose()) * inv_sqrt_d;
        c.probs = Matrix::Zero(t, t);
        for (numkit::Index i = 0; i < t; ++i) {
            // causal row: position i attends to positions 0..i
            const double row_max = scores.row(i).head(i + 1).maxCoeff();
            double denom = 0.0;
            for (numkit::Index j = 0; j <= i; ++j) {
                const double e = std::exp(scores(i, j) - row_max);
                c.probs(i, j) = e;
                denom += e;
            }
            c.probs.row(i).head(i + 1) /= denom;
        }
        c.attn_o = c.probs * c.v;
        c.x_mid = c.x_in + c.attn_o * w.get(p + "W_o");

        c.ff_pre = c.x_mid * w.get(p + "W_ff1");
        c.ff_act = c.ff_pre.unaryExpr([](double h) { return gelu(h); });
        x = c.x_mid + c.ff_act * w.get(p + "W_ff2");
    }
    cache.x_final = x;
    cache.logits = x * w.get("unembedding");
    return cache;
}

int parse_meta_int(const container::Container& c, const std::string& key,
                   const std::string& what) {
    const std::string* v = c.find_meta(key);
    if (v == nullptr) throw DataError(what + ": missing metadata key '" + key + "'");
    try {
        return std::stoi(*v);
    } catch (const std::exception&) {
        throw DataError(what + ": bad integer metadata for '" + key + "'");
    }
}

}  // namespace

TokenSeq encode_bytes(std::string_view text) {
    TokenSeq out;
    out.reserve(text.size());
    for (const char ch : text) out.push_back(static_cast<int>(static_cast<unsigned char>(ch)));
    return out;
}

std::string decode_bytes(std::span<const int> tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (const int id : tokens)
        if (id >= 0 && id < kByteVocab) out.push_back(static_cast<char>(id));
    return out;
}

TinyLM::TinyLM(const TinyLMConfig& cfg) : cfg_(cfg) {
    if (cfg.vocab_size < 1 || cfg.dim < 1 || cfg.n_blocks < 1 || cfg.context_len < 1)
        throw std::invalid_argument("TinyLM: all config dimensions must be >= 1");
    embedding = Matrix::Zero(cfg.vocab_size, cfg.dim);
    pos_embedding = Matrix::Zero(cfg.context_len, cfg.dim);
    blocks.resize(static_cast<size_t>(cfg.n_blocks));
    for (auto& b : blocks) {
        b.W_q = Matrix::Zero(cfg.dim, cfg.dim);
        b.W_k = Matrix::Zero(cfg.dim, cfg.dim);
        b.W_v = Matrix::Zero(cfg.dim, cfg.dim);
        b.W_o = Matrix::Zero(cfg.dim, cfg.dim);
        b.W_ff1 = Matrix::Zero(cfg.dim, 4 * cfg.dim);
        b.W_ff2 = Matrix::Zero(4 * cfg.dim, cfg.dim);
    }
    unembedding = Matrix::Zero(cfg.dim, cfg.vocab_size);
}

TinyLM TinyLM::random_init(const TinyLMConfig& cfg, double init_std, Rng& rng) {
    TinyLM m(cfg);
    for (const auto& id : m.layer_ids()) {
        Matrix& w = m.weight(id);
        w = numkit::gaussian(rng, w.rows(), w.cols(), init_std);
    }
    return m;
}

std::vector<std::string> TinyLM::layer_ids() const {
    std::vector<std::string> ids;
    ids.emplace_back("embedding");
    ids.emplace_back("pos_embedding");
    for (int b = 0; b < cfg_.n_blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        for (const char* s : {"W_q", "W_k", "W_v", "W_o", "W_ff1", "W_ff2"}) ids.push_back(p + s);
    }
    ids.emplace_back("unembedding");
    return ids;
}

bool TinyLM::has_layer(const std::string& layer_id) const {
    try {
        (void)weight(layer_id);
        return true;
    } catch (const std::invalid_argument&) {
        return false;
    }
}

const Matrix& TinyLM::weight(const std::string& layer_id) const {
    return const_cast<TinyLM*>(this)->weight(layer_id);
}

Matrix& TinyLM::weight(const std::string& layer_id) {
    if (layer_id == "embedding") return embedding;
    if (layer_id == "pos_embedding") return pos_embedding;
    if (layer_id == "unembedding") return unembedding;
    if (layer_id.rfind("block", 0) == 0) {
        const auto dot = layer_id.find('.');
        if (dot != std::string::npos && dot > 5) {
            int idx = -1;
            try {
                idx = std::stoi(layer_id.substr(5, dot - 5));
            } catch (const std::exception&) {
                idx = -1;
            }
            if (idx >= 0 && idx < static_cast<int>(blocks.size())) {
                Block& b = blocks[static_cast<size_t>(idx)];
                const std::string name = layer_id.substr(dot + 1);
                if (name == "W_q") return b.W_q;
                if (name == "W_k") return b.W_k;
                if (name == "W_v") return b.W_v;
                if (name == "W_o") return b.W_o;
                if (name == "W_ff1") return b.W_ff1;
                if (name == "W_ff2") return b.W_ff2;
            }
        }
    }
    throw std::invalid_argument("unknown layer id: " + layer_id);
}

Matrix forward(const TinyLM& model, const lora::AdapterSet* adapters, std::span<const int> input) {
    check_input(model, input);
    EffectiveView w(model, adapters);
    return run_forward(model, w, input).logits;
}

Gradients backward(const TinyLM& model, const lora::AdapterSet& adapters,
                   std::span<const int> input, std::span<const int> targets, Trainable trainable) {
    if (trainable == Trainable::AdaptersOnly && adapters.empty())
        throw std::invalid_argument("backward: adapters_only selected with an empty adapter set");
    if (targets.size() != input.size())
        throw std::invalid_argument("backward: targets length must equal input length");
    check_input(model, input);

    const auto& cfg = model.config();
    const auto t = static_cast<numkit::Index>(input.size());
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.dim));

    EffectiveView w(model, &adapters);
    ForwardCache cache = run_forward(model, w, input);
    numkit::CrossEntropy ce = numkit::softmax_cross_entropy(cache.logits, targets, kIgnoreIndex);

    // Gradients w.r.t. every effective weight, routed to adapter factors
    // and/or base entries afterwards.
    std::map<std::string, Matrix> eff_grads;

    Matrix dx = ce.grad * w.get("unembedding").transpose();
    eff_grads["unembedding"] = cache.x_final.transpose() * ce.grad;

    for (int b = cfg.n_blocks - 1; b >= 0; --b) {
        const BlockCache& c = cache.blocks[static_cast<size_t>(b)];
        const std::string p = "block" + std::to_string(b) + ".";

        // feed-forward half: x_out = x_mid + gelu(x_mid W1) W2
        eff_grads[p + "W_ff2"] = c.ff_act.transpose() * dx;
        Matrix d_ff_act = dx * w.get(p + "W_ff2").transpose();
        Matrix d_ff_pre =
            d_ff_act.array() * c.ff_pre.unaryExpr([](double h) { return gelu_grad(h); }).array();
        eff_grads[p + "W_ff1"] = c.x_mid.transpose() * d_ff_pre;
        Matrix dx_mid = dx + d_ff_pre * w.get(p + "W_ff1").transpose();

        // attention half: x_mid = x_in + (softmax(q k^T / sqrt(d)) v) W_o
        eff_grads[p + "W_o"] = c.attn_o.transpose() * dx_mid;
        Matrix d_attn_o = dx_mid * w.get(p + "W_o").transpose();
        Matrix d_probs = d_attn_o * c.v.transpose();
        Matrix d_v = c.probs.transpose() * d_attn_o;

        Matrix d_scores = Matrix::Zero(t, t);
        for (numkit::Index i = 0; i < t; ++i) {
            const double dot = c.probs.row(i).dot(d_probs.row(i));
            for (numkit::Index j = 0; j <= i; ++j)
                d_scores(i, j) = c.probs(i, j) * (d_probs(i, j) - dot);
        }
        Matrix d_q = (d_scores * c.k) * inv_sqrt_d;
        Matrix d_k = (d_scores.transpose() * c.q) * inv_sqrt_d;

        eff_grads[p + "W_q"] = c.x_in.transpose() * d_q;
        eff_grads[p + "W_k"] = c.x_in.transpose() * d_k;
        eff_grads[p + "W_v"] = c.x_in.transpose() * d_v;

        dx = dx_mid + d_q * w.get(p + "W_q").transpose() + d_k * w.get(p + "W_k").transpose() +
             d_v * w.get(p + "W_v").transpose();
    }

    Matrix d_emb = Matrix::Zero(cfg.vocab_size, cfg.dim);
    Matrix d_pos = Matrix::Zero(cfg.context_len, cfg.dim);
    for (numkit::Index i = 0; i < t; ++i) {
        d_emb.row(input[static_cast<size_t>(i)]) += dx.row(i);
        d_pos.row(i) += dx.row(i);
    }
    eff_grads["embedding"] = std::move(d_emb);
    eff_grads["pos_embedding"] = std::move(d_pos);

    Gradients out;
    out.loss = ce.loss;
    for (auto& [id, g] : eff_grads) {
        if (!numkit::all_finite(g)) throw NumericError("backward: non-finite gradient for " + id);
        if (const lora::LoraAdapter* a = adapters.find(id)) {
            AdapterGrads ag;
            ag.A = a->scale() * (a->B.transpose() * g);
            ag.B = a->scale() * (g * a->A.transpose());
            out.adapter.emplace(id, std::move(ag));
        }
        if (trainable == Trainable::All) out.base.emplace(id, std::move(g));
    }
    return out;
}

TokenSeq greedy_decode(const TinyLM& model, const lora::AdapterSet* adapters,
                       const TokenSeq& prompt, int max_new, int eos) {
    if (max_new < 0) throw std::invalid_argument("greedy_decode: max_new must be >= 0");
    const int ctx = model.config().context_len;
    EffectiveView w(model, adapters);

    TokenSeq window = prompt;
    TokenSeq out;
    for (int step = 0; step < max_new; ++step) {
        std::span<const int> feed(window);
        if (static_cast<int>(feed.size()) > ctx) feed = feed.subspan(feed.size() - static_cast<size_t>(ctx));
        check_input(model, feed);
        const Matrix logits = run_forward(model, w, feed).logits;
        const auto last = logits.rows() - 1;
        int best = 0;
        for (numkit::Index j = 1; j < logits.cols(); ++j)
            if (logits(last, j) > logits(last, best)) best = static_cast<int>(j);
        out.push_back(best);
        window.push_back(best);
        if (best == eos) break;
    }
    return out;
}

double sequence_logprob(const TinyLM& model, const lora::AdapterSet* adapters,
                        const TokenSeq& prompt, const TokenSeq& continuation) {
    if (continuation.empty()) return 0.0;
    if (prompt.empty())
        throw std::invalid_argument("sequence_logprob: prompt must be non-empty");
    TokenSeq seq = prompt;
    seq.insert(seq.end(), continuation.begin(), continuation.end());
    if (static_cast<int>(seq.size()) > model.config().context_len)
        throw std::invalid_argument("sequence_logprob: combined length exceeds context");

    const std::span<const int> feed(seq.data(), seq.size() - 1);
    const Matrix logits = forward(model, adapters, feed);

    double lp = 0.0;
    for (size_t pos = prompt.size() - 1; pos + 1 < seq.size(); ++pos) {
        const auto row = logits.row(static_cast<numkit::Index>(pos));
        const double row_max = row.maxCoeff();
        const double denom = (row.array() - row_max).exp().sum();
        const int tok = seq[pos + 1];
        if (tok < 0 || tok >= model.config().vocab_size)
            throw std::invalid_argument("sequence_logprob: continuation token out of range");
        lp += (row(tok) - row_max) - std::log(denom);
    }
    return lp;
}

void save_model(const TinyLM& model, const std::filesystem::path& path) {
    container::Container c;
    c.set_meta("kind", "tinylm");
    c.set_meta("version", "1");
    const auto& cfg = model.config();
    c.set_meta("vocab_size", std::to_string(cfg.vocab_size));
    c.set_meta("dim", std::to_string(cfg.dim));
    c.set_meta("n_blocks", std::to_string(cfg.n_blocks));
    c.set_meta("context_len", std::to_string(cfg.context_len));
    for (const auto& id : model.layer_ids()) c.add(id, model.weight(id));
    container::save(c, path);
}

TinyLM load_model(const std::filesystem::path& path) {
    const container::Container c = container::load(path);
    const std::string what = path.string();
    const std::string* kind = c.find_meta("kind");
    if (kind == nullptr || *kind != "tinylm")
        throw DataError(what + ": not a model checkpoint");
    TinyLMConfig cfg;
    cfg.vocab_size = parse_meta_int(c, "vocab_size", what);
    cfg.dim = parse_meta_int(c, "dim", what);
    cfg.n_blocks = parse_meta_int(c, "n_blocks", what);
    cfg.context_len = parse_meta_int(c, "context_len", what);

    TinyLM model(cfg);
    for (const auto& id : model.layer_ids()) {
        const Matrix* m = c.find(id);
        if (m == nullptr) throw DataError(what + ": checkpoint is missing layer " + id);
        Matrix& w = model.weight(id);
        if (m->rows() != w.rows() || m->cols() != w.cols())
            throw DataError(what + ": shape mismatch for layer " + id);
        w = *m;
    }
    return model;
}

uint64_t weights_digest(const TinyLM& model) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& id : model.layer_ids()) {
        h = numkit::fnv1a64(id.data(), id.size(), h);
        const Matrix& w = model.weight(id);
        h = numkit::fnv1a64(w.data(), sizeof(double) * static_cast<size_t>(w.size()), h);
    }
    return h;
}

}  // namespace tinylm
