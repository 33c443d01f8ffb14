#include "cocola/tinylm.hpp"

#include "cocola/errors.hpp"
#include "cocola/lora.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using numkit::Matrix;
using numkit::Rng;
using tinylm::TinyLM;
using tinylm::TinyLMConfig;
using tinylm::TokenSeq;

namespace {

TinyLMConfig tiny_cfg(int vocab = 11, int dim = 8, int blocks = 1, int context = 12) {
    TinyLMConfig cfg;
    cfg.vocab_size = vocab;
    cfg.dim = dim;
    cfg.n_blocks = blocks;
    cfg.context_len = context;
    return cfg;
}

TokenSeq random_tokens(Rng& rng, size_t len, int vocab) {
    TokenSeq t(len);
    for (auto& id : t) id = static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab)));
    return t;
}

double model_loss(const TinyLM& model, const lora::AdapterSet& adapters, const TokenSeq& input,
                  const std::vector<int>& targets) {
    const Matrix logits = tinylm::forward(model, &adapters, input);
    return numkit::softmax_cross_entropy(logits, targets, tinylm::kIgnoreIndex).loss;
}

// every layer gets some random adapter content so the checked gradients are
// non-degenerate (B is normally zero at init)
void randomize_adapters(lora::AdapterSet& set, Rng& rng, double std) {
    for (auto& [id, a] : set.adapters) {
        a.A = numkit::gaussian(rng, a.A.rows(), a.A.cols(), std);
        a.B = numkit::gaussian(rng, a.B.rows(), a.B.cols(), std);
    }
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_SUITE_BEGIN("tinylm");

TEST_CASE("tokenizer: byte round trip") {
    const std::string text = "hello, bytes \xd8\xb3";
    const TokenSeq toks = tinylm::encode_bytes(text);
    CHECK(toks.size() == text.size());
    CHECK(tinylm::decode_bytes(toks) == text);
    // specials are skipped on decode
    TokenSeq with_specials = {tinylm::kBos};
    with_specials.insert(with_specials.end(), toks.begin(), toks.end());
    with_specials.push_back(tinylm::kEos);
    CHECK(tinylm::decode_bytes(with_specials) == text);
}

TEST_CASE("registry: ids are unique, stable and resolvable") {
    Rng rng(1);
    const TinyLM m = TinyLM::random_init(tiny_cfg(11, 8, 2), 0.1, rng);
    const auto ids = m.layer_ids();
    CHECK(ids.size() == 2 + 2 * 6 + 1);
    CHECK(ids.front() == "embedding");
    CHECK(ids.back() == "unembedding");
    for (const auto& id : ids) CHECK(m.has_layer(id));
    CHECK(m.has_layer("block1.W_ff2"));
    CHECK_FALSE(m.has_layer("block2.W_q"));
    CHECK_FALSE(m.has_layer("nonsense"));
    CHECK(m.weight("block0.W_ff1").rows() == 8);
    CHECK(m.weight("block0.W_ff1").cols() == 32);
}

TEST_CASE("forward: output shape is (len, vocab)") {
    Rng rng(2);
    const TinyLM m = TinyLM::random_init(tiny_cfg(), 0.2, rng);
    for (const size_t len : {1u, 5u, 12u}) {
        const TokenSeq input = random_tokens(rng, len, 11);
        const Matrix logits = tinylm::forward(m, nullptr, input);
        CHECK(logits.rows() == static_cast<numkit::Index>(len));
        CHECK(logits.cols() == 11);
    }
}

TEST_CASE("forward: all-zero weights give identical logits rows") {
    const TinyLM m{tiny_cfg()};
    const TokenSeq input = {1, 2, 3, 4};
    const Matrix logits = tinylm::forward(m, nullptr, input);
    for (numkit::Index i = 1; i < logits.rows(); ++i) CHECK(logits.row(i) == logits.row(0));
}

TEST_CASE("forward: fresh adapters are bit-transparent") {
    Rng rng(3);
    const TinyLM m = TinyLM::random_init(tiny_cfg(), 0.2, rng);
    const std::vector<std::string> targets = {"block0.W_q", "block0.W_v"};
    const lora::AdapterSet fresh = lora::attach(m, targets, 2, 2.0, 0.05, rng);
    for (int rep = 0; rep < 5; ++rep) {
        const TokenSeq input = random_tokens(rng, 1 + rng.next_below(12), 11);
        const Matrix with = tinylm::forward(m, &fresh, input);
        const Matrix without = tinylm::forward(m, nullptr, input);
        CHECK(with == without);
    }
}

TEST_CASE("forward: bad inputs rejected") {
    Rng rng(4);
    const TinyLM m = TinyLM::random_init(tiny_cfg(), 0.2, rng);
    CHECK_THROWS_AS((void)tinylm::forward(m, nullptr, TokenSeq{}), std::invalid_argument);
    CHECK_THROWS_AS((void)tinylm::forward(m, nullptr, TokenSeq{11}), std::invalid_argument);
    CHECK_THROWS_AS((void)tinylm::forward(m, nullptr, TokenSeq(13, 0)), std::invalid_argument);
}

TEST_CASE("forward: causality, perturbing position t never changes earlier rows") {
    Rng rng(5);
    const TinyLM m = TinyLM::random_init(tiny_cfg(11, 8, 2), 0.25, rng);
    const TokenSeq base = random_tokens(rng, 9, 11);
    const Matrix ref = tinylm::forward(m, nullptr, base);
    for (size_t t = 1; t < base.size(); ++t) {
        TokenSeq perturbed = base;
        perturbed[t] = (perturbed[t] + 1 + static_cast<int>(rng.next_below(10))) % 11;
        const Matrix got = tinylm::forward(m, nullptr, perturbed);
        for (size_t i = 0; i < t; ++i)
            CHECK(got.row(static_cast<numkit::Index>(i)) == ref.row(static_cast<numkit::Index>(i)));
    }
}

TEST_CASE("backward: adapter gradients match central finite differences") {
    Rng rng(6);
    const TinyLM m = TinyLM::random_init(tiny_cfg(11, 8, 1, 12), 0.3, rng);
    // adapters on square, rectangular and embedding-side layers
    const std::vector<std::string> targets = {"block0.W_q", "block0.W_v", "block0.W_ff1",
                                              "unembedding"};
    lora::AdapterSet adapters = lora::attach(m, targets, 2, 2.0, 0.1, rng);
    randomize_adapters(adapters, rng, 0.1);

    const TokenSeq input = random_tokens(rng, 6, 11);
    std::vector<int> tgt(6);
    for (auto& t : tgt) t = static_cast<int>(rng.next_below(11));
    tgt[1] = tinylm::kIgnoreIndex;

    const tinylm::Gradients grads =
        tinylm::backward(m, adapters, input, tgt, tinylm::Trainable::AdaptersOnly);
    CHECK(grads.base.empty());  // adapters_only produces no base entries
    CHECK(grads.adapter.size() == targets.size());

    const double eps = 1e-5;
    double max_rel = 0.0;
    for (auto& [id, a] : adapters.adapters) {
        const tinylm::AdapterGrads& g = grads.adapter.at(id);
        for (Matrix* param : {&a.A, &a.B}) {
            const Matrix& analytic = param == &a.A ? g.A : g.B;
            for (numkit::Index i = 0; i < param->rows(); ++i) {
                for (numkit::Index j = 0; j < param->cols(); ++j) {
                    const double orig = (*param)(i, j);
                    (*param)(i, j) = orig + eps;
                    const double lp = model_loss(m, adapters, input, tgt);
                    (*param)(i, j) = orig - eps;
                    const double lm = model_loss(m, adapters, input, tgt);
                    (*param)(i, j) = orig;
                    const double fd = (lp - lm) / (2 * eps);
                    const double denom =
                        std::max({std::abs(fd), std::abs(analytic(i, j)), 1e-5});
                    max_rel = std::max(max_rel, std::abs(fd - analytic(i, j)) / denom);
                }
            }
        }
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("backward: base gradients under selector all match finite differences") {
    Rng rng(7);
    TinyLM m = TinyLM::random_init(tiny_cfg(9, 6, 1, 10), 0.3, rng);
    lora::AdapterSet adapters = lora::attach(m, std::vector<std::string>{"block0.W_q"}, 2, 2.0,
                                             0.05, rng);
    randomize_adapters(adapters, rng, 0.1);

    const TokenSeq input = random_tokens(rng, 5, 9);
    std::vector<int> tgt(5);
    for (auto& t : tgt) t = static_cast<int>(rng.next_below(9));

    const tinylm::Gradients grads =
        tinylm::backward(m, adapters, input, tgt, tinylm::Trainable::All);
    CHECK(grads.base.size() == m.layer_ids().size());

    const double eps = 1e-5;
    for (const auto& id : m.layer_ids()) {
        Matrix& w = m.weight(id);
        const Matrix& analytic = grads.base.at(id);
        // a few random entries per layer keep the sweep cheap
        for (int rep = 0; rep < 4; ++rep) {
            const auto i = static_cast<numkit::Index>(rng.next_below(w.rows()));
            const auto j = static_cast<numkit::Index>(rng.next_below(w.cols()));
            const double orig = w(i, j);
            w(i, j) = orig + eps;
            const double lp = model_loss(m, adapters, input, tgt);
            w(i, j) = orig - eps;
            const double lm = model_loss(m, adapters, input, tgt);
            w(i, j) = orig;
            const double fd = (lp - lm) / (2 * eps);
            const double denom = std::max({std::abs(fd), std::abs(analytic(i, j)), 1e-5});
            CHECK(std::abs(fd - analytic(i, j)) / denom < 1e-4);
        }
    }
}

TEST_CASE("backward: saturated targets give near-zero loss and gradients") {
    Rng rng(8);
    TinyLM m = TinyLM::random_init(tiny_cfg(6, 4, 1, 8), 0.3, rng);
    lora::AdapterSet adapters =
        lora::attach(m, std::vector<std::string>{"block0.W_q", "block0.W_v"}, 2, 2.0, 0.05, rng);
    randomize_adapters(adapters, rng, 0.05);

    const TokenSeq input = {0, 3, 5, 1};
    const Matrix logits = tinylm::forward(m, &adapters, input);
    std::vector<int> tgt(input.size());
    for (numkit::Index i = 0; i < logits.rows(); ++i) {
        numkit::Index best = 0;
        logits.row(i).maxCoeff(&best);
        tgt[static_cast<size_t>(i)] = static_cast<int>(best);
    }
    m.unembedding *= 400.0;  // saturate the softmax at the current argmax

    const tinylm::Gradients grads =
        tinylm::backward(m, adapters, input, tgt, tinylm::Trainable::AdaptersOnly);
    CHECK(grads.loss < 1e-6);
    for (const auto& [id, g] : grads.adapter) {
        CHECK(g.A.cwiseAbs().maxCoeff() < 1e-6);
        CHECK(g.B.cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("backward: contract violations rejected") {
    Rng rng(9);
    const TinyLM m = TinyLM::random_init(tiny_cfg(), 0.2, rng);
    const lora::AdapterSet empty;
    const TokenSeq input = {1, 2, 3};
    const std::vector<int> tgt = {2, 3, 4};
    CHECK_THROWS_AS(
        (void)tinylm::backward(m, empty, input, tgt, tinylm::Trainable::AdaptersOnly),
        std::invalid_argument);
    const std::vector<int> short_tgt = {2};
    lora::AdapterSet adapters =
        lora::attach(m, std::vector<std::string>{"block0.W_q"}, 2, 2.0, 0.05, rng);
    CHECK_THROWS_AS(
        (void)tinylm::backward(m, adapters, input, short_tgt, tinylm::Trainable::AdaptersOnly),
        std::invalid_argument);
}

TEST_CASE("backward: does not mutate model or adapters") {
    Rng rng(10);
    const TinyLM m = TinyLM::random_init(tiny_cfg(), 0.2, rng);
    lora::AdapterSet adapters =
        lora::attach(m, std::vector<std::string>{"block0.W_q"}, 2, 2.0, 0.05, rng);
    randomize_adapters(adapters, rng, 0.1);
    const uint64_t before = tinylm::weights_digest(m);
    const Matrix a_before = adapters.adapters.at("block0.W_q").A;
    const TokenSeq input = {1, 2, 3, 4};
    const std::vector<int> tgt = {2, 3, 4, 5};
    (void)tinylm::backward(m, adapters, input, tgt, tinylm::Trainable::AdaptersOnly);
    CHECK(tinylm::weights_digest(m) == before);
    CHECK(adapters.adapters.at("block0.W_q").A == a_before);
}

TEST_CASE("greedy_decode: max_new 0 gives empty output") {
    Rng rng(11);
    const TinyLM m = TinyLM::random_init(tiny_cfg(), 0.2, rng);
    CHECK(tinylm::greedy_decode(m, nullptr, {1, 2}, 0, 5).empty());
}

TEST_CASE("greedy_decode: deterministic") {
    Rng rng(12);
    const TinyLM m = TinyLM::random_init(tiny_cfg(), 0.2, rng);
    const TokenSeq prompt = {3, 1, 4};
    CHECK(tinylm::greedy_decode(m, nullptr, prompt, 6, 10) ==
          tinylm::greedy_decode(m, nullptr, prompt, 6, 10));
}

TEST_CASE("greedy_decode: all-zero weights emit token 0 via the tie-break") {
    const TinyLM m{tiny_cfg()};
    const TokenSeq prompt = {5};
    const TokenSeq out = tinylm::greedy_decode(m, nullptr, prompt, 4, 10);
    CHECK(out == TokenSeq{0, 0, 0, 0});
    // with eos = 0 the first emission already stops decoding
    CHECK(tinylm::greedy_decode(m, nullptr, prompt, 4, 0) == TokenSeq{0});
}

TEST_CASE("greedy_decode: window slides once the context is full") {
    Rng rng(13);
    const TinyLM m = TinyLM::random_init(tiny_cfg(11, 8, 1, 8), 0.2, rng);
    const TokenSeq prompt = random_tokens(rng, 8, 11);  // already at context length
    const TokenSeq out = tinylm::greedy_decode(m, nullptr, prompt, 5, tinylm::kEos);
    CHECK(out.size() == 5);
}

TEST_CASE("sequence_logprob: empty continuation scores 0") {
    Rng rng(14);
    const TinyLM m = TinyLM::random_init(tiny_cfg(), 0.2, rng);
    CHECK(tinylm::sequence_logprob(m, nullptr, {1, 2}, {}) == 0.0);
}

TEST_CASE("sequence_logprob: always non-positive") {
    Rng rng(15);
    const TinyLM m = TinyLM::random_init(tiny_cfg(), 0.2, rng);
    for (int rep = 0; rep < 5; ++rep) {
        const TokenSeq prompt = random_tokens(rng, 3, 11);
        const TokenSeq cont = random_tokens(rng, 4, 11);
        CHECK(tinylm::sequence_logprob(m, nullptr, prompt, cont) <= 0.0);
    }
}

TEST_CASE("sequence_logprob: single token equals log-softmax of the forward output") {
    Rng rng(16);
    const TinyLM m = TinyLM::random_init(tiny_cfg(), 0.2, rng);
    const TokenSeq prompt = {2, 7, 1};
    const int token = 4;
    const double lp = tinylm::sequence_logprob(m, nullptr, prompt, {token});

    const Matrix logits = tinylm::forward(m, nullptr, prompt);
    const auto row = logits.row(logits.rows() - 1);
    const double max = row.maxCoeff();
    const double expected = (row(token) - max) - std::log((row.array() - max).exp().sum());
    CHECK(lp == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("sequence_logprob: context overflow rejected") {
    Rng rng(17);
    const TinyLM m = TinyLM::random_init(tiny_cfg(11, 8, 1, 8), 0.2, rng);
    CHECK_THROWS_AS(
        (void)tinylm::sequence_logprob(m, nullptr, random_tokens(rng, 6, 11),
                                       random_tokens(rng, 6, 11)),
        std::invalid_argument);
}

TEST_CASE("checkpoint: bit-exact round trip") {
    Rng rng(18);
    const TinyLM m = TinyLM::random_init(tiny_cfg(17, 10, 2, 20), 0.2, rng);
    const auto path = temp_path("tinylm_roundtrip.tlm");
    tinylm::save_model(m, path);
    const TinyLM loaded = tinylm::load_model(path);
    CHECK(loaded.config().vocab_size == 17);
    CHECK(loaded.config().dim == 10);
    CHECK(loaded.config().n_blocks == 2);
    CHECK(loaded.config().context_len == 20);
    CHECK(tinylm::weights_digest(loaded) == tinylm::weights_digest(m));
    for (const auto& id : m.layer_ids()) CHECK(loaded.weight(id) == m.weight(id));

    // saving the loaded model reproduces the file byte for byte
    const auto path2 = temp_path("tinylm_roundtrip2.tlm");
    tinylm::save_model(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("checkpoint: corruption is detected") {
    Rng rng(19);
    const TinyLM m = TinyLM::random_init(tiny_cfg(), 0.2, rng);
    const auto path = temp_path("tinylm_corrupt.tlm");
    tinylm::save_model(m, path);
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(200);
        char byte = 0x7f;
        f.write(&byte, 1);
    }
    CHECK_THROWS_AS((void)tinylm::load_model(path), DataError);
    std::filesystem::remove(path);
}

TEST_SUITE_END();
