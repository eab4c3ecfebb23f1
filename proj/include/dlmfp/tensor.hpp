#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dlmfp/common.hpp"

namespace dlmfp {

// Per-session multiply-add counter. Only matmuls contribute (x2 per MAC);
// elementwise ops are not counted.
struct FlopCounter {
    std::uint64_t total = 0;

    void add_matmul(std::uint64_t m, std::uint64_t k, std::uint64_t n) {
        total += 2 * m * k * n;
    }
};

// Row-major dense float matrix. Storage is 32-bit; kernels accumulate in
// 64-bit to bound drift.
struct Tensor2D {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Tensor2D() = default;
    Tensor2D(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0f) {}

    float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    float* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const float* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
};

inline Tensor2D matmul(const Tensor2D& a, const Tensor2D& b, FlopCounter& flops) {
    if (a.cols != b.rows) {
        throw config_error("matmul: inner dimensions differ (" +
                           std::to_string(a.cols) + " vs " + std::to_string(b.rows) + ")");
    }
    Tensor2D out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const float* ar = a.row(i);
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) {
                acc += static_cast<double>(ar[k]) * static_cast<double>(b.at(k, j));
            }
            out.at(i, j) = static_cast<float>(acc);
        }
    }
    flops.add_matmul(a.rows, a.cols, b.cols);
    return out;
}

// a * b^T, same counting convention.
inline Tensor2D matmul_nt(const Tensor2D& a, const Tensor2D& b, FlopCounter& flops) {
    if (a.cols != b.cols) {
        throw config_error("matmul_nt: inner dimensions differ");
    }
    Tensor2D out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const float* ar = a.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const float* br = b.row(j);
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) {
                acc += static_cast<double>(ar[k]) * static_cast<double>(br[k]);
            }
            out.at(i, j) = static_cast<float>(acc);
        }
    }
    flops.add_matmul(a.rows, a.cols, b.rows);
    return out;
}

// Max-subtracted softmax with 64-bit accumulation.
inline std::vector<float> softmax_row(const std::vector<float>& v) {
    if (v.empty()) throw config_error("softmax_row: empty vector");
    float mx = *std::max_element(v.begin(), v.end());
    std::vector<double> e(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        e[i] = std::exp(static_cast<double>(v[i]) - static_cast<double>(mx));
        sum += e[i];
    }
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<float>(e[i] / sum);
    }
    return out;
}

// Ties break toward the lowest index so every decode is deterministic.
inline int argmax(const std::vector<float>& v) {
    if (v.empty()) throw config_error("argmax: empty vector");
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

// Indices of the k largest entries, descending value, index tie-break ascending.
inline std::vector<int> top_k(const std::vector<float>& v, int k) {
    const int n = static_cast<int>(v.size());
    if (k < 1 || k > n) throw config_error("top_k: k out of range");
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        if (v[a] != v[b]) return v[a] > v[b];
        return a < b;
    });
    idx.resize(k);
    return idx;
}

inline std::vector<float> rms_norm(const std::vector<float>& v,
                                   const std::vector<float>& gain) {
    if (v.size() != gain.size()) throw config_error("rms_norm: length mismatch");
    double ms = 0.0;
    for (float x : v) ms += static_cast<double>(x) * static_cast<double>(x);
    ms /= static_cast<double>(v.size());
    const double inv = 1.0 / std::sqrt(ms + 1e-6);
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(v[i]) * inv) * gain[i];
    }
    return out;
}

}  // namespace dlmfp
