#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dlmfp/common.hpp"
#include "dlmfp/tensor.hpp"

namespace dlmfp {

enum class AttentionMode : std::uint32_t { bidirectional = 0, causal = 1 };

struct ModelSpec {
    int d = 8;
    int heads = 2;
    int n_layers = 1;
    int d_ff = 16;
    int vocab = 11;  // includes reserved MASK id = vocab-1
    int l_max = 32;
    AttentionMode mode = AttentionMode::bidirectional;

    int head_dim() const { return d / heads; }
    int mask_id() const { return vocab - 1; }

    void validate() const {
        if (d < 1 || heads < 1 || d % heads != 0) {
            throw config_error("ModelSpec: d must be a positive multiple of heads");
        }
        if (vocab < 2) throw config_error("ModelSpec: vocab must be >= 2");
        if (l_max < 1) throw config_error("ModelSpec: l_max must be >= 1");
        if (n_layers < 0 || d_ff < 1) throw config_error("ModelSpec: bad layer dims");
    }
};

struct LayerWeights {
    Tensor2D wq, wk, wv, wo;   // d x d
    Tensor2D w1;               // d x d_ff
    Tensor2D w2;               // d_ff x d
    std::vector<float> attn_gain, ffn_gain;  // d
};

struct Weights {
    Tensor2D token_embedding;  // vocab x d
    Tensor2D pos_embedding;    // l_max x d
    std::vector<LayerWeights> layers;
    Tensor2D head;             // d x vocab

    // Tensors in declaration order; matches the weight-file layout.
    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        fn(token_embedding.data);
        fn(pos_embedding.data);
        for (const auto& l : layers) {
            fn(l.wq.data);
            fn(l.wk.data);
            fn(l.wv.data);
            fn(l.wo.data);
            fn(l.w1.data);
            fn(l.w2.data);
            fn(l.attn_gain);
            fn(l.ffn_gain);
        }
        fn(head.data);
    }
};

// Seeded counter-based init: matrix and embedding entries ~ U(-1/sqrt(d), 1/sqrt(d)),
// norm gains start at 1. Bit-identical across platforms.
inline Weights init_weights(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    CounterRng rng(seed);
    const double a = 1.0 / std::sqrt(static_cast<double>(spec.d));
    auto fill = [&](Tensor2D& t, int r, int c) {
        t = Tensor2D(r, c);
        for (auto& x : t.data) x = rng.next_uniform(a);
    };
    Weights w;
    fill(w.token_embedding, spec.vocab, spec.d);
    fill(w.pos_embedding, spec.l_max, spec.d);
    w.layers.resize(spec.n_layers);
    for (auto& l : w.layers) {
        fill(l.wq, spec.d, spec.d);
        fill(l.wk, spec.d, spec.d);
        fill(l.wv, spec.d, spec.d);
        fill(l.wo, spec.d, spec.d);
        fill(l.w1, spec.d, spec.d_ff);
        fill(l.w2, spec.d_ff, spec.d);
        l.attn_gain.assign(spec.d, 1.0f);
        l.ffn_gain.assign(spec.d, 1.0f);
    }
    fill(w.head, spec.d, spec.vocab);
    return w;
}

// Per-layer K/V over the full sequence plus the frozen-prefix length.
// Rows below frozen_len are immutable for the rest of the decode.
struct KVCache {
    int frozen_len = 0;
    std::vector<Tensor2D> k;  // n_layers tensors, capacity x d
    std::vector<Tensor2D> v;

    KVCache() = default;
    KVCache(int n_layers, int capacity, int d)
        : k(n_layers, Tensor2D(capacity, d)), v(n_layers, Tensor2D(capacity, d)) {}
};

struct ForwardResult {
    Tensor2D logits;              // n_queries x vocab
    std::vector<Tensor2D> k, v;   // per layer, n_queries x d (forward_full only)
};

// Optional instrumentation captured during a forward pass.
struct ForwardDebug {
    std::vector<float> attention_row_sums;  // every softmaxed attention row
};

namespace detail {

inline Tensor2D embed(const ModelSpec& spec, const Weights& w,
                      const std::vector<int>& tokens, int first, int count) {
    Tensor2D x(count, spec.d);
    for (int r = 0; r < count; ++r) {
        const int tok = tokens[first + r];
        if (tok < 0 || tok >= spec.vocab) {
            throw input_error("token out of range at position " + std::to_string(first + r));
        }
        for (int c = 0; c < spec.d; ++c) {
            x.at(r, c) = w.token_embedding.at(tok, c) + w.pos_embedding.at(first + r, c);
        }
    }
    return x;
}

inline Tensor2D norm_rows(const Tensor2D& x, const std::vector<float>& gain) {
    Tensor2D out(x.rows, x.cols);
    std::vector<float> row(x.cols);
    for (int r = 0; r < x.rows; ++r) {
        row.assign(x.row(r), x.row(r) + x.cols);
        auto n = rms_norm(row, gain);
        std::copy(n.begin(), n.end(), out.row(r));
    }
    return out;
}

inline Tensor2D head_slice(const Tensor2D& x, int head, int head_dim) {
    Tensor2D out(x.rows, head_dim);
    for (int r = 0; r < x.rows; ++r) {
        for (int c = 0; c < head_dim; ++c) {
            out.at(r, c) = x.at(r, head * head_dim + c);
        }
    }
    return out;
}

// Multi-head attention for `q` query rows at global positions
// [q_first, q_first + q.rows) over keys/values covering [0, ctx_len).
inline Tensor2D attention(const ModelSpec& spec, const Tensor2D& q,
                          const Tensor2D& keys, const Tensor2D& values,
                          int q_first, int ctx_len, FlopCounter& flops,
                          ForwardDebug* debug) {
    const int dh = spec.head_dim();
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    Tensor2D mixed(q.rows, spec.d);
    for (int h = 0; h < spec.heads; ++h) {
        Tensor2D qh = head_slice(q, h, dh);
        Tensor2D kh = head_slice(keys, h, dh);
        Tensor2D vh = head_slice(values, h, dh);
        kh.rows = ctx_len;
        kh.data.resize(static_cast<std::size_t>(ctx_len) * dh);
        vh.rows = ctx_len;
        vh.data.resize(static_cast<std::size_t>(ctx_len) * dh);
        Tensor2D scores = matmul_nt(qh, kh, flops);  // q.rows x ctx_len
        std::vector<float> row(ctx_len);
        for (int r = 0; r < scores.rows; ++r) {
            const int qpos = q_first + r;
            for (int c = 0; c < ctx_len; ++c) {
                float s = scores.at(r, c) * scale;
                if (spec.mode == AttentionMode::causal && c > qpos) {
                    s = -std::numeric_limits<float>::infinity();
                }
                row[c] = s;
            }
            auto probs = softmax_row(row);
            if (debug != nullptr) {
                double sum = 0.0;
                for (float p : probs) sum += p;
                debug->attention_row_sums.push_back(static_cast<float>(sum));
            }
            std::copy(probs.begin(), probs.end(), scores.row(r));
        }
        Tensor2D out = matmul(scores, vh, flops);  // q.rows x dh
        for (int r = 0; r < out.rows; ++r) {
            for (int c = 0; c < dh; ++c) {
                mixed.at(r, h * dh + c) = out.at(r, c);
            }
        }
    }
    return mixed;
}

inline void relu_inplace(Tensor2D& x) {
    for (auto& v : x.data) v = v > 0.0f ? v : 0.0f;
}

}  // namespace detail

// Full forward pass: logits for every position plus per-layer K/V.
inline ForwardResult forward_full(const ModelSpec& spec, const Weights& w,
                                  const std::vector<int>& tokens, FlopCounter& flops,
                                  ForwardDebug* debug = nullptr) {
    const int L = static_cast<int>(tokens.size());
    if (L < 1 || L > spec.l_max) throw input_error("forward_full: bad sequence length");
    Tensor2D x = detail::embed(spec, w, tokens, 0, L);
    ForwardResult res;
    for (const auto& layer : w.layers) {
        Tensor2D xn = detail::norm_rows(x, layer.attn_gain);
        Tensor2D q = matmul(xn, layer.wq, flops);
        Tensor2D k = matmul(xn, layer.wk, flops);
        Tensor2D v = matmul(xn, layer.wv, flops);
        res.k.push_back(k);
        res.v.push_back(v);
        Tensor2D mixed = detail::attention(spec, q, k, v, 0, L, flops, debug);
        Tensor2D o = matmul(mixed, layer.wo, flops);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += o.data[i];

        Tensor2D xn2 = detail::norm_rows(x, layer.ffn_gain);
        Tensor2D hidden = matmul(xn2, layer.w1, flops);
        detail::relu_inplace(hidden);
        Tensor2D f = matmul(hidden, layer.w2, flops);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += f.data[i];
    }
    std::vector<float> unit_gain(spec.d, 1.0f);
    Tensor2D xf = detail::norm_rows(x, unit_gain);
    res.logits = matmul(xf, w.head, flops);
    return res;
}

// Windowed forward pass over the active window [window_start, tokens.size()).
// Q/K/V, FFN and the head run only on window rows; attention for window
// queries spans the frozen prefix (from the cache) plus the recomputed window.
// Cache rows inside the window are overwritten; the frozen prefix is untouched.
inline ForwardResult forward_windowed(const ModelSpec& spec, const Weights& w,
                                      const std::vector<int>& tokens, KVCache& cache,
                                      int window_start, FlopCounter& flops,
                                      ForwardDebug* debug = nullptr) {
    const int L = static_cast<int>(tokens.size());
    if (L < 1 || L > spec.l_max) throw input_error("forward_windowed: bad sequence length");
    if (window_start != cache.frozen_len) {
        throw contract_error("forward_windowed: window must start at cache.frozen_len");
    }
    if (window_start < 0 || window_start >= L) {
        throw contract_error("forward_windowed: empty window");
    }
    const int wlen = L - window_start;
    Tensor2D x = detail::embed(spec, w, tokens, window_start, wlen);
    ForwardResult res;
    for (int li = 0; li < static_cast<int>(w.layers.size()); ++li) {
        const auto& layer = w.layers[li];
        Tensor2D xn = detail::norm_rows(x, layer.attn_gain);
        Tensor2D q = matmul(xn, layer.wq, flops);
        Tensor2D k = matmul(xn, layer.wk, flops);
        Tensor2D v = matmul(xn, layer.wv, flops);
        for (int r = 0; r < wlen; ++r) {
            for (int c = 0; c < spec.d; ++c) {
                cache.k[li].at(window_start + r, c) = k.at(r, c);
                cache.v[li].at(window_start + r, c) = v.at(r, c);
            }
        }
        Tensor2D mixed = detail::attention(spec, q, cache.k[li], cache.v[li],
                                           window_start, L, flops, debug);
        Tensor2D o = matmul(mixed, layer.wo, flops);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += o.data[i];

        Tensor2D xn2 = detail::norm_rows(x, layer.ffn_gain);
        Tensor2D hidden = matmul(xn2, layer.w1, flops);
        detail::relu_inplace(hidden);
        Tensor2D f = matmul(hidden, layer.w2, flops);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += f.data[i];
    }
    std::vector<float> unit_gain(spec.d, 1.0f);
    Tensor2D xf = detail::norm_rows(x, unit_gain);
    res.logits = matmul(xf, w.head, flops);  // wlen x vocab
    return res;
}

}  // namespace dlmfp
