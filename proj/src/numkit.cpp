#include "cocola/numkit.hpp"

#include "cocola/errors.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace numkit {

namespace {

inline uint64_t rotl(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
    // splitmix64 never yields four zero words for any seed, but keep the
    // generator well-defined regardless.
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

uint64_t Rng::next_below(uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("Rng::next_below: bound must be positive");
    uint64_t x = next_u64();
    unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
    auto lo = static_cast<uint64_t>(m);
    if (lo < bound) {
        const uint64_t threshold = -bound % bound;
        while (lo < threshold) {
            x = next_u64();
            m = static_cast<unsigned __int128>(x) * bound;
            lo = static_cast<uint64_t>(m);
        }
    }
    return static_cast<uint64_t>(m >> 64);
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
    for (;;) {
        const double u = 2.0 * next_double() - 1.0;
        const double v = 2.0 * next_double() - 1.0;
        const double s = u * u + v * v;
        if (s >= 1.0 || s == 0.0) continue;
        return u * std::sqrt(-2.0 * std::log(s) / s);
    }
}

uint64_t Rng::mix(uint64_t seed, uint64_t salt) {
    uint64_t a = seed;
    uint64_t b = salt ^ 0x517cc1b727220a95ull;
    const uint64_t ma = splitmix64(a);
    b ^= ma;
    return splitmix64(b);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        std::ostringstream os;
        os << "matmul: inner dimensions disagree, left is " << a.rows() << "x" << a.cols()
           << ", right is " << b.rows() << "x" << b.cols();
        throw std::invalid_argument(os.str());
    }
    if (!all_finite(a) || !all_finite(b)) throw NumericError("matmul: non-finite input entry");
    return a * b;
}

CrossEntropy softmax_cross_entropy(const Matrix& logits, std::span<const int> targets,
                                   int ignore_index) {
    const Index t = logits.rows();
    const Index v = logits.cols();
    if (static_cast<Index>(targets.size()) != t) {
        throw std::invalid_argument("softmax_cross_entropy: one target per logits row required");
    }
    if (!all_finite(logits)) throw NumericError("softmax_cross_entropy: non-finite logit");

    CrossEntropy out;
    out.grad = Matrix::Zero(t, v);

    Index active = 0;
    for (Index i = 0; i < t; ++i) {
        if (targets[i] != ignore_index && (targets[i] < 0 || targets[i] >= v)) {
            throw std::invalid_argument("softmax_cross_entropy: target out of range at position " +
                                        std::to_string(i));
        }
        if (targets[i] != ignore_index) ++active;
    }
    if (active == 0) return out;  // loss 0, zero grad by definition

    double loss_sum = 0.0;
    const double inv_n = 1.0 / static_cast<double>(active);
    for (Index i = 0; i < t; ++i) {
        if (targets[i] == ignore_index) continue;
        const double row_max = logits.row(i).maxCoeff();
        Eigen::RowVectorXd shifted = logits.row(i).array() - row_max;
        Eigen::RowVectorXd ex = shifted.array().exp();
        const double denom = ex.sum();
        loss_sum += std::log(denom) - shifted(targets[i]);
        out.grad.row(i) = (ex / denom) * inv_n;
        out.grad(i, targets[i]) -= inv_n;
    }
    out.loss = loss_sum * inv_n;
    return out;
}

Matrix gaussian(Rng& rng, Index rows, Index cols, double stddev) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("gaussian: negative shape");
    if (stddev < 0.0) throw std::invalid_argument("gaussian: stddev must be >= 0");
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.next_gaussian();
    return m;
}

Index numerical_rank(const Matrix& m, double tol) {
    if (tol <= 0.0) throw std::invalid_argument("numerical_rank: tol must be positive");
    if (m.rows() == 0 || m.cols() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& sv = svd.singularValues();
    const double largest = sv(0);
    if (largest == 0.0) return 0;
    const double cutoff = tol * largest;
    Index rank = 0;
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) ++rank;
    return rank;
}

bool all_finite(const Matrix& m) {
    return m.allFinite();
}

std::vector<size_t> sample_without_replacement(size_t n, size_t k, Rng& rng) {
    if (k > n) throw std::invalid_argument("sample_without_replacement: k exceeds population");
    std::vector<size_t> pool(n);
    std::iota(pool.begin(), pool.end(), size_t{0});
    std::vector<size_t> picked;
    picked.reserve(k);
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + static_cast<size_t>(rng.next_below(n - i));
        std::swap(pool[i], pool[j]);
        picked.push_back(pool[i]);
    }
    return picked;
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace numkit
