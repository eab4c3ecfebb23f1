#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <numeric>
#include <vector>

#include "dlmfp/predictors.hpp"
#include "dlmfp/schedule.hpp"
#include "dlmfp/trace.hpp"

namespace dlmfp {

enum class Heuristic { maskgit_confidence, entropy, topk_margin };

// Token sequence with its mask set and step countdown.
struct SequenceState {
    std::vector<int> tokens;
    std::vector<int> mask_set;  // ascending positions still holding MASK
    int step = 0;               // countdown t
    int prompt_len = 0;
    int mask_id = 0;

    static SequenceState start(const std::vector<int>& prompt, int gen_len, int mask_id,
                               int total_steps) {
        SequenceState s;
        s.tokens = prompt;
        s.tokens.resize(prompt.size() + gen_len, mask_id);
        s.prompt_len = static_cast<int>(prompt.size());
        s.mask_id = mask_id;
        s.step = total_steps;
        for (int i = s.prompt_len; i < static_cast<int>(s.tokens.size()); ++i) {
            s.mask_set.push_back(i);
        }
        return s;
    }

    bool done() const { return mask_set.empty(); }
};

// Scores for masked rows; higher means unmask sooner.
inline std::vector<double> score_positions(const Tensor2D& probs, Heuristic heuristic) {
    std::vector<double> scores(probs.rows);
    for (int r = 0; r < probs.rows; ++r) {
        double sum = 0.0;
        for (int c = 0; c < probs.cols; ++c) sum += probs.at(r, c);
        if (std::abs(sum - 1.0) > 1e-4) {
            throw input_error("score_positions: row " + std::to_string(r) +
                              " is not a probability distribution");
        }
        switch (heuristic) {
            case Heuristic::maskgit_confidence: {
                double mx = 0.0;
                for (int c = 0; c < probs.cols; ++c) mx = std::max(mx, (double)probs.at(r, c));
                scores[r] = mx;
                break;
            }
            case Heuristic::entropy: {
                double ent = 0.0;
                for (int c = 0; c < probs.cols; ++c) {
                    const double p = probs.at(r, c);
                    if (p > 0.0) ent -= p * std::log(p);
                }
                scores[r] = -ent;  // negative entropy: confident rows first
                break;
            }
            case Heuristic::topk_margin: {
                double first = -1.0, second = -1.0;
                for (int c = 0; c < probs.cols; ++c) {
                    const double p = probs.at(r, c);
                    if (p > first) {
                        second = first;
                        first = p;
                    } else if (p > second) {
                        second = p;
                    }
                }
                scores[r] = first - (second < 0.0 ? 0.0 : second);
                break;
            }
        }
    }
    return scores;
}

// The n highest-scoring candidates; ties break toward the lowest position.
inline std::vector<int> select_unmask(const std::vector<int>& candidates,
                                      const std::vector<double>& scores, int n) {
    if (candidates.size() != scores.size()) {
        throw contract_error("select_unmask: candidate/score size mismatch");
    }
    if (n < 1 || n > static_cast<int>(candidates.size())) {
        throw contract_error("select_unmask: n out of range");
    }
    std::vector<int> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return candidates[a] < candidates[b];
    });
    std::vector<int> selected;
    for (int i = 0; i < n; ++i) selected.push_back(candidates[order[i]]);
    std::sort(selected.begin(), selected.end());
    return selected;
}

// Fill the selected positions and shrink the mask set.
inline void apply_unmask(SequenceState& state, const std::vector<int>& positions,
                         const std::vector<int>& proposals) {
    if (positions.empty()) throw contract_error("apply_unmask: empty unmask set");
    if (positions.size() != proposals.size()) {
        throw contract_error("apply_unmask: positions/proposals size mismatch");
    }
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const int p = positions[i];
        if (proposals[i] == state.mask_id) {
            throw contract_error("apply_unmask: proposal is MASK");
        }
        auto it = std::find(state.mask_set.begin(), state.mask_set.end(), p);
        if (it == state.mask_set.end()) {
            throw contract_error("apply_unmask: position not masked");
        }
        state.mask_set.erase(it);
        state.tokens[p] = proposals[i];
    }
    state.step -= 1;
}

struct DecodeObservation {
    int step_index = 0;
    const SequenceState* before = nullptr;
    const std::vector<int>* selected = nullptr;
};

struct BaselineOptions {
    // 0 = free selection over the whole generation region; otherwise the
    // unmask order is restricted block by block (the comparison mode for
    // cached decoding, which commits blocks left to right).
    int block_size = 0;
    std::function<void(const DecodeObservation&)> observer;
};

namespace detail {

inline std::vector<int> masked_in_range(const SequenceState& s, int begin, int end) {
    std::vector<int> out;
    for (int p : s.mask_set) {
        if (p >= begin && p < end) out.push_back(p);
    }
    return out;
}

// Consume the next scheduled unmask count, clamped to `available`; the
// remainder of a clamped count is spent on later steps.
inline int next_count(std::deque<int>& pending, int available) {
    if (pending.empty()) throw contract_error("unmask schedule exhausted");
    const int n = std::min(pending.front(), available);
    pending.front() -= n;
    if (pending.front() == 0) pending.pop_front();
    return n;
}

}  // namespace detail

// Baseline denoising loop: one full forward pass per step, no caching.
inline DecodeResult decode_baseline(MaskPredictor& model, const std::vector<int>& prompt,
                                    int gen_len, const UnmaskSchedule& schedule,
                                    Heuristic heuristic, const BaselineOptions& opts = {}) {
    if (gen_len < 1) throw input_error("decode_baseline: gen_len must be >= 1");
    SequenceState state = SequenceState::start(prompt, gen_len, model.mask_id(),
                                               schedule.total_steps);
    const int L = static_cast<int>(state.tokens.size());
    const int blk = opts.block_size > 0 ? opts.block_size : gen_len;
    BlockSchedule blocks = partition_blocks(state.prompt_len, gen_len, blk);
    std::deque<int> pending(schedule.counts.begin(), schedule.counts.end());

    DecodeResult result;
    FlopCounter flops;
    int step_index = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (int b = 0; b < blocks.block_count(); ++b) {
        while (true) {
            auto candidates = detail::masked_in_range(state, blocks.block_start(b),
                                                      blocks.block_end(b));
            if (candidates.empty()) break;
            const int n = detail::next_count(pending, static_cast<int>(candidates.size()));
            const std::uint64_t flops_before = flops.total;
            Tensor2D rows = model.predict(state.tokens, candidates, flops);
            auto scores = score_positions(rows, heuristic);
            auto selected = select_unmask(candidates, scores, n);
            std::vector<int> proposals;
            for (int p : selected) {
                const int r = static_cast<int>(std::find(candidates.begin(), candidates.end(), p) -
                                               candidates.begin());
                std::vector<float> row(rows.row(r), rows.row(r) + rows.cols);
                row[model.mask_id()] = -1.0f;  // never propose MASK
                proposals.push_back(argmax(row));
            }
            if (opts.observer) {
                DecodeObservation obs;
                obs.step_index = step_index;
                obs.before = &state;
                obs.selected = &selected;
                opts.observer(obs);
            }
            apply_unmask(state, selected, proposals);

            StepRecord rec;
            rec.index = step_index++;
            rec.kind = StepKind::baseline;
            rec.window_len = model.last_window() > 0 ? model.last_window() : L;
            rec.context_len = model.last_context() > 0 ? model.last_context() : L;
            rec.unmasked = selected;
            rec.flops = flops.total - flops_before;
            rec.dlm_passes = ++result.trace.dlm_passes;
            result.trace.steps.push_back(rec);
        }
    }
    const auto t1 = std::chrono::steady_clock::now();
    result.trace.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    result.trace.total_flops = flops.total;
    result.tokens = state.tokens;
    return result;
}

}  // namespace dlmfp
