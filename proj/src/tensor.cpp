#include "sam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sam {

namespace {

constexpr double kTwoPi = 6.283185307179586;
constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ull;

uint64_t mix64(uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
}

}  // namespace

uint64_t Rng::next_u64() {
    state_ += kGamma;
    return mix64(state_);
}

double Rng::next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
    const double u1 = 1.0 - next_uniform();  // (0, 1], keeps the log finite
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

Rng Rng::fork(uint64_t stream_id) const {
    return Rng(mix64(seed_ + (stream_id + 1) * kGamma));
}

Vector softmax(const Vector& v) {
    if (v.empty()) throw std::invalid_argument("softmax: empty input");
    if (!all_finite(v)) throw NumericalError("softmax: non-finite input");
    const double mx = *std::max_element(v.begin(), v.end());
    Vector out(v.size());
    double sum = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

Vector softmax_backward(const Vector& p, const Vector& dp) {
    if (p.size() != dp.size()) throw std::invalid_argument("softmax_backward: size mismatch");
    double inner = 0.0;
    for (size_t i = 0; i < p.size(); ++i) inner += p[i] * dp[i];
    Vector dl(p.size());
    for (size_t i = 0; i < p.size(); ++i) dl[i] = p[i] * (dp[i] - inner);
    return dl;
}

std::vector<int> topk(const Vector& v, int k) {
    if (k < 1 || static_cast<size_t>(k) > v.size())
        throw std::invalid_argument("topk: k out of range");
    std::vector<int> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&v](int a, int b) {
        if (v[a] != v[b]) return v[a] > v[b];
        return a < b;
    });
    idx.resize(k);
    return idx;
}

int argmax(const Vector& v) {
    if (v.empty()) throw std::invalid_argument("argmax: empty input");
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

Vector matvec(const Matrix& m, const Vector& v) {
    if (static_cast<size_t>(m.cols) != v.size())
        throw std::invalid_argument("matvec: dimension mismatch");
    Vector out(m.rows);
    for (int r = 0; r < m.rows; ++r) {
        const double* row = m.data.data() + static_cast<size_t>(r) * m.cols;
        double acc = 0.0;  // fixed left-to-right accumulation
        for (int c = 0; c < m.cols; ++c) acc += row[c] * v[c];
        out[r] = acc;
    }
    return out;
}

Vector matvec_transposed(const Matrix& m, const Vector& v) {
    if (static_cast<size_t>(m.rows) != v.size())
        throw std::invalid_argument("matvec_transposed: dimension mismatch");
    Vector out(m.cols, 0.0);
    for (int r = 0; r < m.rows; ++r) {
        const double* row = m.data.data() + static_cast<size_t>(r) * m.cols;
        for (int c = 0; c < m.cols; ++c) out[c] += row[c] * v[r];
    }
    return out;
}

Vector gaussian_vector(Rng& rng, int n) {
    if (n < 1) throw std::invalid_argument("gaussian_vector: n must be >= 1");
    Vector out(n);
    for (double& x : out) x = rng.next_gaussian();
    return out;
}

void add_outer(Matrix& m, const Vector& a, const Vector& b) {
    if (m.rows != static_cast<int>(a.size()) || m.cols != static_cast<int>(b.size()))
        throw std::invalid_argument("add_outer: dimension mismatch");
    for (int r = 0; r < m.rows; ++r) {
        double* row = m.data.data() + static_cast<size_t>(r) * m.cols;
        for (int c = 0; c < m.cols; ++c) row[c] += a[r] * b[c];
    }
}

double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

bool all_finite(const Vector& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

void require_finite(const Vector& v, const std::string& what) {
    if (!all_finite(v)) throw NumericalError(what + ": non-finite value");
}

}  // namespace sam
