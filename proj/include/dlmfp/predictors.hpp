#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dlmfp/model.hpp"
#include "dlmfp/rule_model.hpp"
#include "dlmfp/tensor.hpp"

namespace dlmfp {

// A model that proposes distributions for masked positions of a sequence.
// Implementations may keep a KV cache between calls; `begin` starts a decode
// session and `freeze_to` advances the frozen prefix at block boundaries.
class MaskPredictor {
  public:
    virtual ~MaskPredictor() = default;
    virtual int vocab() const = 0;
    int mask_id() const { return vocab() - 1; }

    virtual void begin(const std::vector<int>& tokens, FlopCounter& flops) {
        (void)tokens;
        (void)flops;
    }
    // Probability rows (one per requested position) under the current sequence.
    virtual Tensor2D predict(const std::vector<int>& tokens,
                             const std::vector<int>& positions, FlopCounter& flops) = 0;
    virtual void freeze_to(int frozen_len) { (void)frozen_len; }
    virtual int frozen_len() const { return 0; }

    // Shape of the last forward pass, for trace records. Zero for models
    // without matmul work.
    virtual int last_window() const { return 0; }
    virtual int last_context() const { return 0; }
};

// A causal model scoring next tokens: row j is the distribution of the token
// at positions[j], conditioned on filled[0 .. positions[j]-1].
class CausalGuider {
  public:
    virtual ~CausalGuider() = default;
    virtual int vocab() const = 0;
    virtual Tensor2D next_token_probs(const std::vector<int>& filled,
                                      const std::vector<int>& positions,
                                      FlopCounter& flops) = 0;
    virtual int last_window() const { return 0; }
    virtual int last_context() const { return 0; }
};

// Bidirectional toy transformer as the diffusion model. Without `begin` each
// predict is a full forward pass; after `begin` the session keeps a KV cache
// and recomputes only the active window [frozen_len, L).
class TransformerDlm : public MaskPredictor {
  public:
    TransformerDlm(ModelSpec spec, const Weights* weights)
        : spec_(std::move(spec)), weights_(weights) {
        spec_.validate();
    }

    int vocab() const override { return spec_.vocab; }

    void begin(const std::vector<int>& tokens, FlopCounter& flops) override {
        cache_ = KVCache(spec_.n_layers, spec_.l_max, spec_.d);
        ForwardResult res = forward_full(spec_, *weights_, tokens, flops, debug_);
        for (int li = 0; li < spec_.n_layers; ++li) {
            for (int r = 0; r < static_cast<int>(tokens.size()); ++r) {
                for (int c = 0; c < spec_.d; ++c) {
                    cache_.k[li].at(r, c) = res.k[li].at(r, c);
                    cache_.v[li].at(r, c) = res.v[li].at(r, c);
                }
            }
        }
        cache_.frozen_len = 0;
        caching_ = true;
        last_window_ = static_cast<int>(tokens.size());
        last_context_ = static_cast<int>(tokens.size());
        if (on_forward) on_forward(res, 0);
    }

    Tensor2D predict(const std::vector<int>& tokens, const std::vector<int>& positions,
                     FlopCounter& flops) override {
        const int len = static_cast<int>(tokens.size());
        int base = 0;
        ForwardResult res;
        if (caching_) {
            base = cache_.frozen_len;
            res = forward_windowed(spec_, *weights_, tokens, cache_, base, flops, debug_);
        } else {
            res = forward_full(spec_, *weights_, tokens, flops, debug_);
        }
        last_window_ = len - base;
        last_context_ = len;
        if (on_forward) on_forward(res, base);
        Tensor2D rows(static_cast<int>(positions.size()), spec_.vocab);
        std::vector<float> logits(spec_.vocab);
        for (int r = 0; r < rows.rows; ++r) {
            const int idx = positions[r] - base;
            if (idx < 0 || idx >= res.logits.rows) {
                throw contract_error("TransformerDlm: position outside computed window");
            }
            logits.assign(res.logits.row(idx), res.logits.row(idx) + spec_.vocab);
            auto probs = softmax_row(logits);
            std::copy(probs.begin(), probs.end(), rows.row(r));
        }
        return rows;
    }

    void freeze_to(int frozen_len) override {
        if (!caching_) return;
        if (frozen_len < cache_.frozen_len) {
            throw contract_error("TransformerDlm: frozen prefix cannot shrink");
        }
        cache_.frozen_len = frozen_len;
    }

    int frozen_len() const override { return caching_ ? cache_.frozen_len : 0; }
    int last_window() const override { return last_window_; }
    int last_context() const override { return last_context_; }

    const ModelSpec& spec() const { return spec_; }
    const KVCache& cache() const { return cache_; }

    // Observer for diagnostics; receives each pass result and the window base.
    std::function<void(const ForwardResult&, int)> on_forward;
    ForwardDebug* debug_ = nullptr;

  private:
    ModelSpec spec_;
    const Weights* weights_;
    KVCache cache_;
    bool caching_ = false;
    int last_window_ = 0;
    int last_context_ = 0;
};

// Rule model as the diffusion drafter. No matmul work, no cache.
class RuleDlm : public MaskPredictor {
  public:
    explicit RuleDlm(RuleModel model) : model_(model) {}
    int vocab() const override { return model_.vocab; }
    Tensor2D predict(const std::vector<int>& tokens, const std::vector<int>& positions,
                     FlopCounter&) override {
        return model_.distributions(tokens, positions);
    }
    const RuleModel& model() const { return model_; }

  private:
    RuleModel model_;
};

// Causal toy transformer as the guider. Keeps its own KV cache over the
// longest prefix of the filled sequence that matches what it last computed,
// so repeated verification of a growing commit prefix stays cheap.
class TransformerGuider : public CausalGuider {
  public:
    TransformerGuider(ModelSpec spec, const Weights* weights)
        : spec_(std::move(spec)), weights_(weights),
          cache_(spec_.n_layers, spec_.l_max, spec_.d) {
        spec_.validate();
        if (spec_.mode != AttentionMode::causal) {
            throw config_error("TransformerGuider: guider must be causal");
        }
    }

    int vocab() const override { return spec_.vocab; }

    Tensor2D next_token_probs(const std::vector<int>& filled,
                              const std::vector<int>& positions,
                              FlopCounter& flops) override {
        if (positions.empty()) throw contract_error("TransformerGuider: no positions");
        int first = positions.front();
        int last = positions.front();
        for (int p : positions) {
            if (p <= 0) throw contract_error("TransformerGuider: position has no predecessor");
            first = std::min(first, p);
            last = std::max(last, p);
        }
        // Logits at position p-1 predict token p; the pass must cover [first-1, last).
        const int ctx_end = last;  // tokens [0, ctx_end) are enough for causal queries < last
        std::vector<int> ctx(filled.begin(), filled.begin() + ctx_end);
        int valid = 0;
        while (valid < ctx_end && valid < static_cast<int>(seen_.size()) &&
               seen_[valid] == ctx[valid]) {
            ++valid;
        }
        const int base = std::min(valid, first - 1);
        cache_.frozen_len = base;
        ForwardResult res = forward_windowed(spec_, *weights_, ctx, cache_, base, flops);
        seen_.assign(ctx.begin(), ctx.end());
        last_window_ = ctx_end - base;
        last_context_ = ctx_end;

        Tensor2D rows(static_cast<int>(positions.size()), spec_.vocab);
        std::vector<float> logits(spec_.vocab);
        for (int r = 0; r < rows.rows; ++r) {
            const int idx = positions[r] - 1 - base;
            logits.assign(res.logits.row(idx), res.logits.row(idx) + spec_.vocab);
            auto probs = softmax_row(logits);
            std::copy(probs.begin(), probs.end(), rows.row(r));
        }
        return rows;
    }

    int last_window() const override { return last_window_; }
    int last_context() const override { return last_context_; }
    const ModelSpec& spec() const { return spec_; }

  private:
    ModelSpec spec_;
    const Weights* weights_;
    KVCache cache_;
    std::vector<int> seen_;
    int last_window_ = 0;
    int last_context_ = 0;
};

// Rule model as the guider: next-token distributions read off the filled
// sequence, so its chain distance is always zero.
class RuleGuider : public CausalGuider {
  public:
    explicit RuleGuider(RuleModel model) : model_(model) {}
    int vocab() const override { return model_.vocab; }
    Tensor2D next_token_probs(const std::vector<int>& filled,
                              const std::vector<int>& positions,
                              FlopCounter&) override {
        for (int p : positions) {
            if (p <= 0) throw contract_error("RuleGuider: position has no predecessor");
        }
        return model_.distributions(filled, positions);
    }
    const RuleModel& model() const { return model_; }

  private:
    RuleModel model_;
};

}  // namespace dlmfp
