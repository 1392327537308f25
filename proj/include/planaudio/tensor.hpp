#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "planaudio/common.hpp"
#include "planaudio/rng.hpp"

namespace planaudio {

// Dense row-major tensor of 64-bit floats. Rank 0 is a scalar (one value),
// rank 2 is the workhorse.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> v;

    Tensor() = default;

    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
        v.assign(numel_of(shape), 0.0);
    }

    Tensor(std::vector<size_t> s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {
        if (v.size() != numel_of(shape)) {
            throw ShapeError(strformat("tensor: %zu values for shape of %zu elements", v.size(),
                                       numel_of(shape)));
        }
    }

    static size_t numel_of(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t e : s) n *= e;
        return n;
    }

    static Tensor scalar(double x) { return Tensor({}, {x}); }

    static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<size_t> s, double x) {
        Tensor t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), x);
        return t;
    }

    static Tensor randn(std::vector<size_t> s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (double& x : t.v) x = rng.normal() * stddev;
        return t;
    }

    size_t numel() const { return v.size(); }
    size_t ndim() const { return shape.size(); }
    bool is_scalar() const { return shape.empty(); }

    size_t rows() const { return shape.size() == 2 ? shape[0] : (shape.size() == 1 ? 1 : 0); }
    size_t cols() const { return shape.size() == 2 ? shape[1] : (shape.size() == 1 ? shape[0] : 0); }

    double& at(size_t i, size_t j) { return v[i * shape[1] + j]; }
    double at(size_t i, size_t j) const { return v[i * shape[1] + j]; }

    double item() const {
        if (v.size() != 1) throw ShapeError("item: tensor is not a scalar");
        return v[0];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double x : v) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

// ---- raw 2-D kernels ----
// a: m*k, b: k*n (all row-major). Loop orders chosen so the inner loop
// streams contiguous memory; -O3 vectorizes these.

inline void mm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    std::fill(c, c + m * n, 0.0);
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c = a * b^T, a: m*k, b: n*k -> c: m*n
inline void mm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

// c = a^T * b, a: m*k, b: m*n -> c: k*n
inline void mm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    std::fill(c, c + k * n, 0.0);
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// ---- plain (non-graph) math helpers ----

inline Tensor matmul_value(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0]) {
        throw ShapeError(strformat("matmul: incompatible shapes %s and %s", a.shape_str().c_str(),
                                   b.shape_str().c_str()));
    }
    Tensor c({a.shape[0], b.shape[1]});
    mm_nn(a.v.data(), b.v.data(), c.v.data(), a.shape[0], a.shape[1], b.shape[1]);
    return c;
}

// In-place softmax of a contiguous row; returns log(sum(exp)) shifted by max
// so callers can form cross-entropies without a second pass.
inline void softmax_row(const double* logits, double* out, size_t n) {
    double mx = logits[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    const double inv = 1.0 / sum;
    for (size_t i = 0; i < n; ++i) out[i] *= inv;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
    std::vector<double> p(logits.size());
    softmax_row(logits.data(), p.data(), logits.size());
    return p;
}

inline double log_sum_exp(const double* logits, size_t n) {
    double mx = logits[0];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
    return mx + std::log(sum);
}

inline double mse_value(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError(strformat("mse: shape mismatch %s vs %s", a.shape_str().c_str(),
                                   b.shape_str().c_str()));
    }
    double acc = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        const double d = a.v[i] - b.v[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

constexpr double kCosineEps = 1e-8;

// Cosine similarity over flattened entries with an epsilon guard on each
// norm, so zero vectors are well-defined (result ~0 instead of NaN).
inline double cosine_sim_value(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError(strformat("cosine_sim: shape mismatch %s vs %s", a.shape_str().c_str(),
                                   b.shape_str().c_str()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        dot += a.v[i] * b.v[i];
        na += a.v[i] * a.v[i];
        nb += b.v[i] * b.v[i];
    }
    na = std::max(std::sqrt(na), kCosineEps);
    nb = std::max(std::sqrt(nb), kCosineEps);
    return dot / (na * nb);
}

}  // namespace planaudio
