#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "dlmfp/denoise.hpp"
#include "dlmfp/model.hpp"

namespace dlmfp {

// ---------------------------------------------------------------------------
// Analytic FLOP model (multiply-add counted as 2, matmuls only).

struct FlopBreakdown {
    std::uint64_t projections = 0;  // W_Q + W_K + W_V + W_out
    std::uint64_t attn_scores = 0;  // Q K^T
    std::uint64_t attn_values = 0;  // scores x V
    std::uint64_t ffn = 0;
    std::uint64_t head = 0;

    std::uint64_t total() const { return projections + attn_scores + attn_values + ffn + head; }
};

// One forward pass with n query rows attending over ctx cached rows.
inline FlopBreakdown flops_analytic_rows(const ModelSpec& spec, int n, int ctx) {
    FlopBreakdown out;
    const std::uint64_t un = n, uc = ctx, d = spec.d, dff = spec.d_ff;
    const std::uint64_t layers = spec.n_layers;
    out.projections = layers * 4 * 2 * un * d * d;
    out.attn_scores = layers * 2 * un * uc * d;
    out.attn_values = layers * 2 * un * uc * d;
    out.ffn = layers * 2 * 2 * un * d * dff;
    out.head = 2 * un * d * static_cast<std::uint64_t>(spec.vocab);
    return out;
}

enum class FlopMode { ar_decode_step, dlm_step, dlm_windowed_step };

// L is the full sequence length, l the AR prefix length, window the active
// recompute window for cached diffusion steps.
inline FlopBreakdown flops_analytic(const ModelSpec& spec, int L, int l, FlopMode mode,
                                    int window = 0) {
    switch (mode) {
        case FlopMode::ar_decode_step:
            return flops_analytic_rows(spec, 1, l);
        case FlopMode::dlm_step:
            return flops_analytic_rows(spec, L, L);
        case FlopMode::dlm_windowed_step:
            return flops_analytic_rows(spec, window, L);
    }
    throw config_error("flops_analytic: unknown mode");
}

// ---------------------------------------------------------------------------
// Exact verification of instrumented counts against the analytic model.

struct FlopVerification {
    bool ok = true;
    int first_bad_step = -1;
    std::uint64_t expected = 0;
    std::uint64_t actual = 0;
    std::string detail;
};

// Checks every step record of a trace. Steps produced by a transformer carry
// window/context lengths; rule-model steps carry zeros and expect zero FLOPs.
// Guided steps add the guider's pass via ar_window/ar_context.
inline FlopVerification verify_flops(const DecodeTrace& trace, const ModelSpec& spec,
                                     const ModelSpec* guider_spec = nullptr) {
    FlopVerification rep;
    std::uint64_t sum = 0;
    for (const StepRecord& s : trace.steps) {
        std::uint64_t expect = 0;
        if (s.window_len > 0) {
            expect += flops_analytic_rows(spec, s.window_len, s.context_len).total();
        }
        if (s.ar_window > 0) {
            if (guider_spec == nullptr) {
                rep.ok = false;
                rep.first_bad_step = s.index;
                rep.detail = "trace has guider passes but no guider spec was given";
                return rep;
            }
            expect += flops_analytic_rows(*guider_spec, s.ar_window, s.ar_context).total();
        }
        sum += s.flops;
        if (expect != s.flops) {
            rep.ok = false;
            rep.first_bad_step = s.index;
            rep.expected = expect;
            rep.actual = s.flops;
            rep.detail = "step FLOPs disagree with the analytic model";
            return rep;
        }
    }
    if (sum != trace.total_flops) {
        rep.ok = false;
        rep.detail = "step FLOPs do not sum to the session total";
        rep.expected = sum;
        rep.actual = trace.total_flops;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Memory accounting.

inline std::uint64_t param_count(const ModelSpec& spec) {
    const std::uint64_t d = spec.d, dff = spec.d_ff;
    std::uint64_t n = 0;
    n += static_cast<std::uint64_t>(spec.vocab) * d;  // token embeddings
    n += static_cast<std::uint64_t>(spec.l_max) * d;  // position embeddings
    n += static_cast<std::uint64_t>(spec.n_layers) * (4 * d * d + 2 * d * dff + 2 * d);
    n += d * static_cast<std::uint64_t>(spec.vocab);  // head
    return n;
}

struct MemoryEstimate {
    std::uint64_t weights = 0;
    std::uint64_t kv_cache = 0;
    std::uint64_t activations = 0;
    std::uint64_t guider = 0;

    std::uint64_t total() const { return weights + kv_cache + activations + guider; }
};

// Analytic float32 byte counts for one decode session at sequence length L.
// Activations are the peak live tensors of one forward pass: residual stream,
// normed copy, Q/K/V, one per-head score row block, attention output, and the
// wider FFN hidden.
inline MemoryEstimate memory_estimate(const ModelSpec& spec, int L, bool cache_present,
                                      const ModelSpec* guider_spec = nullptr) {
    spec.validate();
    MemoryEstimate out;
    const std::uint64_t uL = L;
    out.weights = param_count(spec) * 4;
    if (cache_present) {
        out.kv_cache = static_cast<std::uint64_t>(spec.n_layers) * 2 * uL * spec.d * 4;
    }
    out.activations = 4 * (uL * spec.d * 6 + uL * uL + uL * spec.d_ff);
    if (guider_spec != nullptr) {
        guider_spec->validate();
        // Guider always runs cached (AR decoding), so it is budgeted
        // separately: its own params plus its own KV cache.
        out.guider = param_count(*guider_spec) * 4 +
                     static_cast<std::uint64_t>(guider_spec->n_layers) * 2 * uL *
                         guider_spec->d * 4;
    }
    return out;
}

// ---------------------------------------------------------------------------
// KV-stability heatmap.

struct SimilarityHeatmap {
    int layer = 0;
    char kind = 'K';  // 'K' or 'V'
    int rows = 0;     // denoising steps
    int cols = 0;     // sequence positions
    std::vector<float> values;      // rows x cols cosine similarities
    std::vector<int> unmask_step;   // per position: 1-based step it turned clean, 0 = prompt
    bool zero_norm_seen = false;

    float at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

namespace detail {

// Cosine of two rows, with a bitwise-equality shortcut so unchanged vectors
// report exactly 1.0 despite float rounding.
inline float cosine_rows(const float* a, const float* b, int d, bool& zero_flag) {
    if (std::memcmp(a, b, sizeof(float) * d) == 0) {
        for (int i = 0; i < d; ++i) {
            if (a[i] != 0.0f) return 1.0f;
        }
        zero_flag = true;
        return 0.0f;
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int i = 0; i < d; ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        zero_flag = true;
        return 0.0f;
    }
    const double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return static_cast<float>(std::max(-1.0, std::min(1.0, c)));
}

}  // namespace detail

// Replays an uncached baseline decode, snapshotting the chosen layer's K or V
// rows after every pass plus one final pass over the finished sequence. Row t
// holds the cosine similarity of snapshot t+1 against snapshot t per position.
inline SimilarityHeatmap kv_similarity_heatmap(const ModelSpec& spec, const Weights& weights,
                                               const std::vector<int>& prompt, int gen_len,
                                               const UnmaskSchedule& schedule,
                                               Heuristic heuristic, int layer, char kind) {
    spec.validate();
    if (layer < 0 || layer >= spec.n_layers) {
        throw config_error("kv_similarity_heatmap: layer out of range");
    }
    if (kind != 'K' && kind != 'V') {
        throw config_error("kv_similarity_heatmap: kind must be 'K' or 'V'");
    }
    const int L = static_cast<int>(prompt.size()) + gen_len;

    std::vector<Tensor2D> snapshots;
    TransformerDlm dlm(spec, &weights);
    dlm.on_forward = [&](const ForwardResult& res, int base) {
        if (base != 0) throw contract_error("kv_similarity_heatmap: expected full passes");
        snapshots.push_back(kind == 'K' ? res.k[layer] : res.v[layer]);
    };
    DecodeResult result = decode_baseline(dlm, prompt, gen_len, schedule, heuristic);

    {
        FlopCounter scratch;
        ForwardResult fin = forward_full(spec, weights, result.tokens, scratch);
        snapshots.push_back(kind == 'K' ? fin.k[layer] : fin.v[layer]);
    }

    SimilarityHeatmap hm;
    hm.layer = layer;
    hm.kind = kind;
    hm.rows = static_cast<int>(snapshots.size()) - 1;
    hm.cols = L;
    hm.values.assign(static_cast<std::size_t>(hm.rows) * L, 0.0f);
    hm.unmask_step.assign(L, 0);
    for (const StepRecord& s : result.trace.steps) {
        for (int p : s.unmasked) hm.unmask_step[p] = s.index + 1;
    }
    for (int t = 0; t < hm.rows; ++t) {
        const Tensor2D& prev = snapshots[t];
        const Tensor2D& cur = snapshots[t + 1];
        for (int p = 0; p < L; ++p) {
            hm.values[static_cast<std::size_t>(t) * L + p] =
                detail::cosine_rows(cur.row(p), prev.row(p), spec.d, hm.zero_norm_seen);
        }
    }
    return hm;
}

}  // namespace dlmfp
