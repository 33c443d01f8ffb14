#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

// Dense double-precision linear algebra, loss/gradient primitives, seeded
// randomness and numerical-rank estimation. Everything here is a pure
// function of its inputs except Rng, which is single-owner mutable state.

namespace numkit {

// Row-major so that serialized weight buffers read in natural order.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// xoshiro256++ with splitmix64 seeding. Pure 64-bit integer arithmetic,
/// so the stream is identical on every platform for a given seed.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    /// Unbiased integer in [0, bound) via Lemire's multiply-shift rejection.
    uint64_t next_below(uint64_t bound);

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double();

    /// Standard normal via the Marsaglia polar method (no spare caching,
    /// every call runs its own rejection loop).
    double next_gaussian();

    /// Derive a decorrelated seed from (seed, salt). Used to give each
    /// chain iteration / purpose its own independent stream.
    static uint64_t mix(uint64_t seed, uint64_t salt);

private:
    std::array<uint64_t, 4> state_;
};

/// Exact matrix product a*b. Throws std::invalid_argument reporting both
/// shapes when the inner dimensions disagree.
Matrix matmul(const Matrix& a, const Matrix& b);

struct CrossEntropy {
    double loss = 0.0;
    Matrix grad;  // same shape as logits; all-zero rows at ignored positions
};

/// Mean negative log-softmax over the non-ignored positions of a T x V
/// logits matrix, plus the exact analytic gradient. Positions whose target
/// equals ignore_index contribute nothing and get zero gradient rows.
/// All positions ignored => loss 0, zero grad.
CrossEntropy softmax_cross_entropy(const Matrix& logits, std::span<const int> targets,
                                   int ignore_index);

/// rows x cols matrix of i.i.d. normal(0, stddev^2) entries, filled in
/// row-major order. Deterministic given the rng state.
Matrix gaussian(Rng& rng, Index rows, Index cols, double stddev);

/// Number of singular values exceeding tol * (largest singular value),
/// via Eigen's two-sided Jacobi SVD. Zero matrix => 0.
Index numerical_rank(const Matrix& m, double tol);

bool all_finite(const Matrix& m);

/// In-place Fisher-Yates shuffle driven by rng.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

/// k distinct indices drawn uniformly from [0, n), in draw order.
std::vector<size_t> sample_without_replacement(size_t n, size_t k, Rng& rng);

/// FNV-1a 64-bit over a byte range; the digest primitive behind checkpoint
/// checksums and the frozen-base-weight checks.
uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace numkit
