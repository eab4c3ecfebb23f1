#pragma once

#include <chrono>
#include <functional>
#include <vector>

#include "dlmfp/denoise.hpp"
#include "dlmfp/predictors.hpp"
#include "dlmfp/schedule.hpp"

namespace dlmfp {

// AR-guided unmasking: the diffusion model drafts every masked position in
// one pass; a frozen causal guider verifies; the longest agreeing prefix is
// unmasked. Composes with the reducing-window cache over generation blocks.

struct GuidanceConfig {
    enum class Mode { deterministic_prefix, stochastic };
    enum class Fallback { dlm, ar };
    enum class Match { prefix, count };

    int speculation_block = 32;  // masked positions drafted per step
    int topk_match = 2;          // draft accepted if inside the guider's top-K
    double tau = 0.5;            // stochastic guidance confidence threshold
    Mode mode = Mode::deterministic_prefix;
    Fallback fallback_source = Fallback::dlm;
    Match match = Match::prefix;

    void validate() const {
        if (speculation_block < 1) throw config_error("speculation_block must be >= 1");
        if (topk_match < 1) throw config_error("topk_match must be >= 1");
        if (tau < 0.0) throw config_error("tau must be >= 0");
    }
};

struct DraftResult {
    std::vector<int> tokens;        // argmax proposal per masked position
    std::vector<double> max_probs;  // peak probability per position
};

// One diffusion pass proposing tokens for the given masked positions.
inline DraftResult dlm_draft(MaskPredictor& dlm, const std::vector<int>& tokens,
                             const std::vector<int>& positions, FlopCounter& flops) {
    if (positions.empty()) throw contract_error("dlm_draft: no masked positions");
    Tensor2D rows = dlm.predict(tokens, positions, flops);
    DraftResult out;
    for (int r = 0; r < rows.rows; ++r) {
        std::vector<float> row(rows.row(r), rows.row(r) + rows.cols);
        out.max_probs.push_back(*std::max_element(row.begin(), row.end()));
        row[dlm.mask_id()] = -1.0f;  // drafts are never MASK
        out.tokens.push_back(argmax(row));
    }
    return out;
}

struct GuiderVerdict {
    std::vector<std::vector<int>> topk_tokens;    // per position, size K
    std::vector<std::vector<double>> topk_probs;  // matching probabilities
    std::vector<int> top1_non_mask;               // best non-MASK token per position
};

// One causal pass over the draft-filled sequence; the guider's prediction for
// masked position i is read from the logits at i-1 (next-token alignment).
inline GuiderVerdict ar_verify(CausalGuider& guider,
                               const std::vector<int>& filled_sequence,
                               const std::vector<int>& positions, int k,
                               FlopCounter& flops) {
    const int mask = guider.vocab() - 1;
    int last = 0;
    for (int p : positions) {
        if (p <= 0) throw contract_error("ar_verify: position has no predecessor");
        last = std::max(last, p);
    }
    for (int i = 0; i < last; ++i) {
        if (filled_sequence[i] == mask) {
            throw contract_error("ar_verify: sequence still contains MASK before position " +
                                 std::to_string(last));
        }
    }
    Tensor2D rows = guider.next_token_probs(filled_sequence, positions, flops);
    GuiderVerdict out;
    for (int r = 0; r < rows.rows; ++r) {
        std::vector<float> row(rows.row(r), rows.row(r) + rows.cols);
        auto idx = top_k(row, std::min(k, static_cast<int>(row.size())));
        std::vector<int> toks;
        std::vector<double> probs;
        for (int t : idx) {
            toks.push_back(t);
            probs.push_back(row[t]);
        }
        out.topk_tokens.push_back(std::move(toks));
        out.topk_probs.push_back(std::move(probs));
        row[mask] = -1.0f;
        out.top1_non_mask.push_back(argmax(row));
    }
    return out;
}

// Largest k such that every draft in the first k positions sits inside the
// guider's top-K set. Agreement after the first miss does not count.
inline int prefix_match(const std::vector<int>& draft,
                        const std::vector<std::vector<int>>& topk_sets) {
    if (draft.size() != topk_sets.size()) {
        throw contract_error("prefix_match: draft/set size mismatch");
    }
    int k = 0;
    for (std::size_t j = 0; j < draft.size(); ++j) {
        const auto& set = topk_sets[j];
        if (std::find(set.begin(), set.end(), draft[j]) == set.end()) break;
        ++k;
    }
    return k;
}

// Literal set-size reading: total number of agreeing positions.
inline int count_match(const std::vector<int>& draft,
                       const std::vector<std::vector<int>>& topk_sets) {
    if (draft.size() != topk_sets.size()) {
        throw contract_error("count_match: draft/set size mismatch");
    }
    int k = 0;
    for (std::size_t j = 0; j < draft.size(); ++j) {
        const auto& set = topk_sets[j];
        if (std::find(set.begin(), set.end(), draft[j]) != set.end()) ++k;
    }
    return k;
}

// Stochastic guidance: accept a draft whose probability beats tau times the
// guider's strongest top-K probability at that position.
inline std::vector<bool> stochastic_accept(const std::vector<double>& draft_max_probs,
                                           const std::vector<std::vector<double>>& guider_topk_probs,
                                           double tau) {
    if (tau < 0.0) throw config_error("stochastic_accept: tau must be >= 0");
    if (draft_max_probs.size() != guider_topk_probs.size()) {
        throw contract_error("stochastic_accept: size mismatch");
    }
    std::vector<bool> accept(draft_max_probs.size(), false);
    for (std::size_t j = 0; j < draft_max_probs.size(); ++j) {
        double guide = 0.0;
        for (double p : guider_topk_probs[j]) guide = std::max(guide, p);
        accept[j] = draft_max_probs[j] > tau * guide;
    }
    return accept;
}

struct GuidedStepInfo {
    int step_index = 0;
    std::vector<int> positions;  // speculation window (masked, ascending)
    std::vector<int> draft;
    std::vector<std::vector<int>> guider_topk;
    int prefix_k = 0;
    std::vector<int> accepted;  // positions actually unmasked
    bool fallback = false;
};

struct GuidedOptions {
    std::function<void(const GuidedStepInfo&)> observer;
};

inline DecodeResult decode_guided(MaskPredictor& dlm, CausalGuider& guider,
                                  const std::vector<int>& prompt, int gen_len,
                                  const GuidanceConfig& cfg, int block_size,
                                  const GuidedOptions& opts = {}) {
    cfg.validate();
    if (dlm.vocab() != guider.vocab()) {
        throw config_error("decode_guided: models must share a vocabulary");
    }
    if (gen_len < 1) throw input_error("decode_guided: gen_len must be >= 1");
    if (prompt.empty()) throw input_error("decode_guided: prompt must be nonempty");

    SequenceState state = SequenceState::start(prompt, gen_len, dlm.mask_id(), gen_len);
    BlockSchedule blocks = partition_blocks(state.prompt_len, gen_len, block_size);

    DecodeResult result;
    FlopCounter flops;
    const auto t0 = std::chrono::steady_clock::now();

    dlm.begin(state.tokens, flops);
    if (flops.total > 0) {
        StepRecord rec;
        rec.index = 0;
        rec.kind = StepKind::initial_pass;
        rec.window_len = static_cast<int>(state.tokens.size());
        rec.context_len = static_cast<int>(state.tokens.size());
        rec.flops = flops.total;
        result.trace.steps.push_back(rec);
    }

    int step_index = 1;
    for (int b = 0; b < blocks.block_count(); ++b) {
        while (true) {
            auto in_block = detail::masked_in_range(state, blocks.block_start(b),
                                                    blocks.block_end(b));
            if (in_block.empty()) break;
            std::vector<int> window(in_block.begin(),
                                    in_block.begin() +
                                        std::min<std::size_t>(in_block.size(),
                                                              cfg.speculation_block));
            const std::uint64_t flops_before = flops.total;

            DraftResult draft = dlm_draft(dlm, state.tokens, window, flops);
            const int dlm_window = dlm.last_window();
            const int dlm_context = dlm.last_context();
            // The pass just refreshed every unfrozen row; completed earlier
            // blocks can freeze now.
            if (dlm.frozen_len() < blocks.block_start(b)) {
                dlm.freeze_to(blocks.block_start(b));
            }

            std::vector<int> filled = state.tokens;
            for (std::size_t j = 0; j < window.size(); ++j) filled[window[j]] = draft.tokens[j];

            GuiderVerdict verdict = ar_verify(guider, filled, window, cfg.topk_match, flops);

            const int k = cfg.match == GuidanceConfig::Match::prefix
                              ? prefix_match(draft.tokens, verdict.topk_tokens)
                              : count_match(draft.tokens, verdict.topk_tokens);

            std::vector<bool> accept(window.size(), false);
            for (int j = 0; j < k && j < static_cast<int>(window.size()); ++j) accept[j] = true;
            if (cfg.mode == GuidanceConfig::Mode::stochastic) {
                auto flags = stochastic_accept(draft.max_probs, verdict.topk_probs, cfg.tau);
                for (std::size_t j = 0; j < flags.size(); ++j) {
                    if (flags[j]) accept[j] = true;
                }
            }

            bool fallback = true;
            for (bool a : accept) {
                if (a) fallback = false;
            }
            std::vector<int> positions;
            std::vector<int> proposals;
            if (fallback) {
                positions.push_back(window.front());
                proposals.push_back(cfg.fallback_source == GuidanceConfig::Fallback::dlm
                                        ? draft.tokens.front()
                                        : verdict.top1_non_mask.front());
            } else {
                for (std::size_t j = 0; j < window.size(); ++j) {
                    if (accept[j]) {
                        positions.push_back(window[j]);
                        proposals.push_back(draft.tokens[j]);
                    }
                }
            }

            if (opts.observer) {
                GuidedStepInfo info;
                info.step_index = step_index;
                info.positions = window;
                info.draft = draft.tokens;
                info.guider_topk = verdict.topk_tokens;
                info.prefix_k = k;
                info.accepted = positions;
                info.fallback = fallback;
                opts.observer(info);
            }

            apply_unmask(state, positions, proposals);

            StepRecord rec;
            rec.index = step_index++;
            rec.kind = StepKind::guided;
            rec.window_len = dlm_window;
            rec.context_len = dlm_context;
            rec.ar_window = guider.last_window();
            rec.ar_context = guider.last_context();
            rec.unmasked = positions;
            rec.accepted_prefix = k;
            rec.flops = flops.total - flops_before;
            rec.dlm_passes = ++result.trace.dlm_passes;
            rec.ar_passes = ++result.trace.ar_passes;
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
