#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "takin/rng.hpp"

namespace takin {

// Row-major dense matrix. rows = output dim for weight matrices, so
// y = W x is y[r] = sum_c W[r][c] * x[c].
struct Matrix {
    int32_t rows = 0;
    int32_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(int32_t r, int32_t c) : rows(r), cols(c), data(size_t(r) * size_t(c), 0.0f) {}

    float* row(int32_t r) { return data.data() + size_t(r) * cols; }
    const float* row(int32_t r) const { return data.data() + size_t(r) * cols; }
    float& at(int32_t r, int32_t c) { return data[size_t(r) * cols + c]; }
    float at(int32_t r, int32_t c) const { return data[size_t(r) * cols + c]; }
};

inline void matvec(const Matrix& w, std::span<const float> x, std::span<float> y) {
    if (int32_t(x.size()) != w.cols || int32_t(y.size()) != w.rows) {
        throw std::invalid_argument("matvec: shape mismatch");
    }
    for (int32_t r = 0; r < w.rows; ++r) {
        const float* wr = w.row(r);
        float acc = 0.0f;
        for (int32_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
        y[r] = acc;
    }
}

// y += W x
inline void matvec_add(const Matrix& w, std::span<const float> x, std::span<float> y) {
    if (int32_t(x.size()) != w.cols || int32_t(y.size()) != w.rows) {
        throw std::invalid_argument("matvec_add: shape mismatch");
    }
    for (int32_t r = 0; r < w.rows; ++r) {
        const float* wr = w.row(r);
        float acc = 0.0f;
        for (int32_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
        y[r] += acc;
    }
}

inline void layernorm(std::span<const float> x, std::span<const float> gain,
                      std::span<const float> bias, std::span<float> out, float eps = 1e-5f) {
    const size_t n = x.size();
    float mean = 0.0f;
    for (float v : x) mean += v;
    mean /= float(n);
    float var = 0.0f;
    for (float v : x) {
        const float d = v - mean;
        var += d * d;
    }
    var /= float(n);
    const float inv = 1.0f / std::sqrt(var + eps);
    for (size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
}

// tanh-approximation GELU
inline float gelu(float x) {
    const float c = 0.7978845608028654f; // sqrt(2/pi)
    return 0.5f * x * (1.0f + std::tanh(c * (x + 0.044715f * x * x * x)));
}

// In-place stable softmax.
inline void softmax_inplace(std::span<float> v) {
    float mx = v[0];
    for (float x : v) mx = std::max(mx, x);
    float sum = 0.0f;
    for (float& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    const float inv = 1.0f / sum;
    for (float& x : v) x *= inv;
}

inline uint64_t checksum(const Matrix& m, uint64_t h = 0xCBF29CE484222325ULL) {
    return fnv1a64(std::span<const float>(m.data), h);
}

} // namespace takin
