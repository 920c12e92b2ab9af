#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace steerlab {

// =====================================================================
//  Dense row-major matrix, sized for desk-scale instances.
// =====================================================================
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
    std::span<const double> row(int r) const { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }

    std::vector<double> column(int c) const {
        std::vector<double> out(static_cast<std::size_t>(rows));
        for (int r = 0; r < rows; ++r) out[static_cast<std::size_t>(r)] = (*this)(r, c);
        return out;
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    bool operator==(const Matrix&) const = default;
};

// y = A x
inline std::vector<double> mat_vec(const Matrix& a, std::span<const double> x) {
    if (static_cast<int>(x.size()) != a.cols) throw std::invalid_argument("mat_vec: dimension mismatch");
    std::vector<double> y(static_cast<std::size_t>(a.rows), 0.0);
    for (int r = 0; r < a.rows; ++r) {
        double acc = 0.0;
        const double* arow = a.data.data() + static_cast<std::size_t>(r) * a.cols;
        for (int c = 0; c < a.cols; ++c) acc += arow[c] * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = acc;
    }
    return y;
}

// =====================================================================
//  Stable softmax helpers. Log-probabilities always go through
//  log-sum-exp; no literal log of a softmax output anywhere.
// =====================================================================
inline double log_sum_exp(std::span<const double> x) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x) m = std::max(m, v);
    if (!std::isfinite(m)) return m;
    double acc = 0.0;
    for (double v : x) acc += std::exp(v - m);
    return m + std::log(acc);
}

inline std::vector<double> softmax(std::span<const double> x) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x) m = std::max(m, v);
    std::vector<double> out(x.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - m);
        acc += out[i];
    }
    for (double& v : out) v /= acc;
    return out;
}

// =====================================================================
//  Seeded draws. mt19937_64 is fully specified by the standard and the
//  mappings below avoid std distributions, so a seed determines every
//  output byte on any platform.
// =====================================================================
inline double uniform_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
}

inline double gaussian(std::mt19937_64& rng) {
    double u1 = uniform_unit(rng);
    double u2 = uniform_unit(rng);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    return rng() % n;
}

// Deterministic sample of k distinct values from {0,..,n-1} (partial Fisher-Yates).
inline std::vector<int> sample_without_replacement(int n, int k, std::mt19937_64& rng) {
    std::vector<int> pool(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
        int j = i + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(n - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    return pool;
}

// FNV-1a, used to fingerprint serialized inputs in sweep metadata.
inline std::uint64_t fnv1a_hash(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace steerlab
