#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sam {

using Vector = std::vector<double>;

/// Thrown when a computation produces non-finite values (training blowup,
/// bad inputs). CLI maps this to exit code 2.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of 64-bit floats.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    bool empty() const { return data.empty(); }
};

// SplitMix64 (Steele/Lea/Vigna). The state advances by the 64-bit golden
// gamma 0x9E3779B97F4A7C15 and each output is the variant-13
// xorshift-multiply finalizer of the state, so the stream is bit-exact on
// every platform. Gaussian draws are Box-Muller and consume exactly two
// 64-bit outputs each:
//   u1 = 1 - (a >> 11) * 2^-53   in (0, 1]
//   u2 =     (b >> 11) * 2^-53   in [0, 1)
//   z  = sqrt(-2 ln u1) * cos(2 pi u2)
struct Rng {
    explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t next_u64();
    double next_uniform();  ///< [0, 1), 53-bit resolution
    double next_gaussian();

    /// Child stream `stream_id`, seeded with mix64(seed + (id+1)*gamma).
    /// Depends only on the constructing seed, not on how much of this
    /// stream has already been consumed.
    Rng fork(uint64_t stream_id) const;

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    uint64_t state_;
};

Vector softmax(const Vector& v);

/// Given p = softmax(l) and dL/dp, returns dL/dl.
Vector softmax_backward(const Vector& p, const Vector& dp);

/// Indices of the k largest entries, in descending value order.
/// Ties break toward the lower index.
std::vector<int> topk(const Vector& v, int k);

/// Index of the maximum entry; ties break toward the lower index.
int argmax(const Vector& v);

Vector matvec(const Matrix& m, const Vector& v);
Vector matvec_transposed(const Matrix& m, const Vector& v);  // m^T * v
Vector gaussian_vector(Rng& rng, int n);

void add_outer(Matrix& m, const Vector& a, const Vector& b);  // m += a * b^T
double dot(const Vector& a, const Vector& b);

bool all_finite(const Vector& v);
void require_finite(const Vector& v, const std::string& what);

}  // namespace sam
