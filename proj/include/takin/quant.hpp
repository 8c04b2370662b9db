#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "takin/tensor.hpp"

namespace takin {

// Symmetric per-output-channel int8 weights. scale[r] = max|row r| / 127,
// an all-zero row gets scale 1.0 so dequant stays exact.
struct QuantMatrix {
    int32_t rows = 0;
    int32_t cols = 0;
    std::vector<int8_t> q;
    std::vector<float> scale;

    const int8_t* row(int32_t r) const { return q.data() + size_t(r) * cols; }

    float dequant(int32_t r, int32_t c) const {
        return float(q[size_t(r) * cols + c]) * scale[r];
    }
};

inline QuantMatrix quantize_matrix(const Matrix& w) {
    QuantMatrix qm;
    qm.rows = w.rows;
    qm.cols = w.cols;
    qm.q.resize(size_t(w.rows) * w.cols);
    qm.scale.resize(w.rows);
    for (int32_t r = 0; r < w.rows; ++r) {
        const float* wr = w.row(r);
        float amax = 0.0f;
        for (int32_t c = 0; c < w.cols; ++c) {
            if (!std::isfinite(wr[c])) throw std::invalid_argument("quantize: non-finite weight");
            amax = std::max(amax, std::fabs(wr[c]));
        }
        const float s = amax > 0.0f ? amax / 127.0f : 1.0f;
        qm.scale[r] = s;
        int8_t* qr = qm.q.data() + size_t(r) * w.cols;
        for (int32_t c = 0; c < w.cols; ++c) {
            const double v = std::round(double(wr[c]) / double(s));
            qr[c] = int8_t(std::max(-127.0, std::min(127.0, v)));
        }
    }
    return qm;
}

// y = dequant(Q) x with the same summation order as the float matvec.
inline void matvec(const QuantMatrix& w, std::span<const float> x, std::span<float> y) {
    if (int32_t(x.size()) != w.cols || int32_t(y.size()) != w.rows) {
        throw std::invalid_argument("quant matvec: shape mismatch");
    }
    for (int32_t r = 0; r < w.rows; ++r) {
        const int8_t* qr = w.row(r);
        const float s = w.scale[r];
        float acc = 0.0f;
        for (int32_t c = 0; c < w.cols; ++c) acc += (float(qr[c]) * s) * x[c];
        y[r] = acc;
    }
}

inline void matvec_add(const QuantMatrix& w, std::span<const float> x, std::span<float> y) {
    if (int32_t(x.size()) != w.cols || int32_t(y.size()) != w.rows) {
        throw std::invalid_argument("quant matvec_add: shape mismatch");
    }
    for (int32_t r = 0; r < w.rows; ++r) {
        const int8_t* qr = w.row(r);
        const float s = w.scale[r];
        float acc = 0.0f;
        for (int32_t c = 0; c < w.cols; ++c) acc += (float(qr[c]) * s) * x[c];
        y[r] += acc;
    }
}

} // namespace takin
