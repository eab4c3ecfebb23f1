#pragma once

#include <chrono>
#include <functional>
#include <vector>

#include "dlmfp/denoise.hpp"
#include "dlmfp/model.hpp"
#include "dlmfp/schedule.hpp"

namespace dlmfp {

// Reducing-window cached decoding: one full pass seeds the cache, then each
// step recomputes K/V only for the active window [frozen_len, L). Completed
// blocks freeze and the window shrinks.
//
// A block is frozen only after the first pass that follows its completion,
// so the frozen K/V always reflect the block's final tokens. That pass runs
// anyway for the next block; no extra forward is spent.

// Full pass over the initial sequence; the prompt freezes immediately.
inline KVCache initial_pass(const ModelSpec& spec, const Weights& weights,
                            const std::vector<int>& tokens, int prompt_len,
                            FlopCounter& flops) {
    KVCache cache(spec.n_layers, spec.l_max, spec.d);
    ForwardResult res = forward_full(spec, weights, tokens, flops);
    for (int li = 0; li < spec.n_layers; ++li) {
        for (int r = 0; r < static_cast<int>(tokens.size()); ++r) {
            for (int c = 0; c < spec.d; ++c) {
                cache.k[li].at(r, c) = res.k[li].at(r, c);
                cache.v[li].at(r, c) = res.v[li].at(r, c);
            }
        }
    }
    cache.frozen_len = prompt_len;
    return cache;
}

// Advance the frozen prefix past the completed block.
inline void freeze_block(KVCache& cache, BlockSchedule& blocks, const SequenceState& state) {
    const int b = blocks.current_block;
    if (b >= blocks.block_count()) throw contract_error("freeze_block: no block to freeze");
    const int end = blocks.block_end(b);
    for (int p : state.mask_set) {
        if (p < end) throw contract_error("freeze_block: block still contains MASK");
    }
    if (cache.frozen_len != blocks.block_start(b)) {
        throw contract_error("freeze_block: frozen prefix misaligned with block start");
    }
    cache.frozen_len = end;
    blocks.current_block += 1;
}

struct FreecacheOptions {
    // Called after each windowed pass with the pass result, the window base
    // and the cache (read-only), before unmasking.
    std::function<void(int step, const ForwardResult&, int base, const KVCache&)> on_step;
};

namespace detail {

// Windowed denoising steps until block `b` is fully unmasked. Positions in
// later blocks stay masked but are recomputed as context. Earlier completed
// blocks are frozen right after each pass refreshes their rows.
inline void decode_block(const ModelSpec& spec, const Weights& weights,
                         SequenceState& state, KVCache& cache, BlockSchedule& blocks,
                         int b, std::deque<int>& pending, Heuristic heuristic,
                         FlopCounter& flops, DecodeResult& result, int& step_index,
                         const FreecacheOptions& opts) {
    const int L = static_cast<int>(state.tokens.size());
    while (true) {
        auto candidates = masked_in_range(state, blocks.block_start(b), blocks.block_end(b));
        if (candidates.empty()) break;
        const int n = next_count(pending, static_cast<int>(candidates.size()));
        const std::uint64_t flops_before = flops.total;
        const int base = cache.frozen_len;
        ForwardResult res = forward_windowed(spec, weights, state.tokens, cache, base, flops);
        while (blocks.current_block < b) {
            freeze_block(cache, blocks, state);
        }
        if (opts.on_step) opts.on_step(step_index, res, base, cache);

        Tensor2D rows(static_cast<int>(candidates.size()), spec.vocab);
        std::vector<float> logits(spec.vocab);
        for (int r = 0; r < rows.rows; ++r) {
            const int idx = candidates[r] - base;
            logits.assign(res.logits.row(idx), res.logits.row(idx) + spec.vocab);
            auto probs = softmax_row(logits);
            std::copy(probs.begin(), probs.end(), rows.row(r));
        }
        auto scores = score_positions(rows, heuristic);
        auto selected = select_unmask(candidates, scores, n);
        std::vector<int> proposals;
        for (int p : selected) {
            const int r = static_cast<int>(std::find(candidates.begin(), candidates.end(), p) -
                                           candidates.begin());
            std::vector<float> row(rows.row(r), rows.row(r) + rows.cols);
            row[spec.mask_id()] = -1.0f;
            proposals.push_back(argmax(row));
        }
        apply_unmask(state, selected, proposals);

        StepRecord rec;
        rec.index = step_index++;
        rec.kind = StepKind::freecache;
        rec.window_len = L - base;
        rec.context_len = L;
        rec.unmasked = selected;
        rec.flops = flops.total - flops_before;
        rec.dlm_passes = ++result.trace.dlm_passes;
        result.trace.steps.push_back(rec);
    }
}

}  // namespace detail

inline DecodeResult decode_freecache(const ModelSpec& spec, const Weights& weights,
                                     const std::vector<int>& prompt, int gen_len,
                                     int block_size, const UnmaskSchedule& schedule,
                                     Heuristic heuristic, const FreecacheOptions& opts = {}) {
    if (gen_len < 1) throw input_error("decode_freecache: gen_len must be >= 1");
    SequenceState state = SequenceState::start(prompt, gen_len, spec.mask_id(),
                                               schedule.total_steps);
    const int L = static_cast<int>(state.tokens.size());
    if (L > spec.l_max) throw input_error("decode_freecache: sequence exceeds l_max");
    BlockSchedule blocks = partition_blocks(state.prompt_len, gen_len, block_size);
    std::deque<int> pending(schedule.counts.begin(), schedule.counts.end());

    DecodeResult result;
    FlopCounter flops;
    const auto t0 = std::chrono::steady_clock::now();

    KVCache cache = initial_pass(spec, weights, state.tokens, state.prompt_len, flops);
    {
        StepRecord rec;
        rec.index = 0;
        rec.kind = StepKind::initial_pass;
        rec.window_len = L;
        rec.context_len = L;
        rec.flops = flops.total;
        result.trace.steps.push_back(rec);
    }
    int step_index = 1;
    for (int b = 0; b < blocks.block_count(); ++b) {
        detail::decode_block(spec, weights, state, cache, blocks, b, pending, heuristic,
                             flops, result, step_index, opts);
    }
    const auto t1 = std::chrono::steady_clock::now();
    result.trace.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    result.trace.total_flops = flops.total;
    result.tokens = state.tokens;
    return result;
}

}  // namespace dlmfp
