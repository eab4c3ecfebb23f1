#include <catch2/catch_amalgamated.hpp>

#include "dlmfp/diagnostics.hpp"
#include "dlmfp/guided.hpp"

using namespace dlmfp;

namespace {

// Guider test double that never agrees with any draft: its top-K set holds
// tokens offset away from the rule continuation, so prefix matching yields 0.
class DisagreeingGuider : public CausalGuider {
  public:
    explicit DisagreeingGuider(RuleModel model) : model_(model) {}
    int vocab() const override { return model_.vocab; }
    Tensor2D next_token_probs(const std::vector<int>& filled,
                              const std::vector<int>& positions, FlopCounter&) override {
        auto preds = model_.predict(filled, positions);
        Tensor2D rows((int)positions.size(), model_.vocab);
        for (int r = 0; r < rows.rows; ++r) {
            const int nv = model_.vocab - 1;
            const int off1 = (preds[r].token + 3) % nv;
            const int off2 = (preds[r].token + 5) % nv;
            for (int t = 0; t < nv; ++t) rows.at(r, t) = 0.01f / (nv - 2);
            rows.at(r, off1) = 0.5f;
            rows.at(r, off2) = 0.49f;
            rows.at(r, nv) = 0.0f;
            float sum = 0.0f;
            for (int t = 0; t < model_.vocab; ++t) sum += rows.at(r, t);
            for (int t = 0; t < model_.vocab; ++t) rows.at(r, t) /= sum;
        }
        return rows;
    }

  private:
    RuleModel model_;
};

}  // namespace

TEST_CASE("prefix_match stops at the first miss") {
    // draft [a,b,c,d] against sets {a},{b},{x},{d} -> 2
    std::vector<int> draft{1, 2, 3, 4};
    std::vector<std::vector<int>> sets{{1}, {2}, {9}, {4}};
    REQUIRE(prefix_match(draft, sets) == 2);
    REQUIRE(count_match(draft, sets) == 3);
    REQUIRE(prefix_match(draft, {{9}, {2}, {3}, {4}}) == 0);
    REQUIRE(prefix_match(draft, {{1}, {2}, {3}, {4}}) == 4);
    REQUIRE_THROWS_AS(prefix_match(draft, {{1}}), contract_error);
}

TEST_CASE("prefix length is non-decreasing in K on random logit pairs") {
    for (int trial = 0; trial < 200; ++trial) {
        CounterRng rng(trial);
        const int vocab = 12, len = 8;
        std::vector<int> draft;
        std::vector<std::vector<float>> logits(len, std::vector<float>(vocab));
        for (int i = 0; i < len; ++i) {
            draft.push_back((int)(rng.next_u64() % vocab));
            for (auto& v : logits[i]) v = (float)rng.next_unit();
        }
        int prev = -1;
        for (int K : {1, 2, 5}) {
            std::vector<std::vector<int>> sets;
            for (int i = 0; i < len; ++i) sets.push_back(top_k(logits[i], K));
            const int k = prefix_match(draft, sets);
            REQUIRE(k >= prev);
            prev = k;
        }
    }
}

TEST_CASE("stochastic_accept applies the tau threshold literally") {
    // draft prob 0.4 vs tau=0.5 of guider max 0.9 -> 0.4 < 0.45, reject
    auto flags = stochastic_accept({0.4, 0.5}, {{0.9, 0.05}, {0.9, 0.05}}, 0.5);
    REQUIRE(flags[0] == false);
    REQUIRE(flags[1] == true);  // 0.5 > 0.45
    auto all = stochastic_accept({0.01, 0.02}, {{0.99}, {0.99}}, 0.0);
    REQUIRE((all[0] && all[1]));  // tau=0 accepts everything
    auto none = stochastic_accept({0.99, 0.99}, {{0.5}, {0.5}}, 1e9);
    REQUIRE((!none[0] && !none[1]));
    REQUIRE_THROWS_AS(stochastic_accept({0.5}, {{0.5}, {0.5}}, 0.5), contract_error);
    REQUIRE_THROWS_AS(stochastic_accept({0.5}, {{0.5}}, -1.0), config_error);
}

TEST_CASE("full agreement finishes gen_len=128 in exactly 4 passes") {
    RuleModel m{16, 1.0, 0};
    RuleDlm dlm(m);
    RuleGuider guider(m);
    auto prompt = make_rule_prompt(m, 4, 9);
    GuidanceConfig cfg;  // spec block 32, top-K 2
    auto res = decode_guided(dlm, guider, prompt, 128, cfg, 256);
    REQUIRE(res.trace.dlm_passes == 4);
    REQUIRE(res.trace.ar_passes == 4);
    REQUIRE(rule_match_rate(m, res.tokens, 4) == Catch::Approx(1.0));
}

TEST_CASE("zero agreement degenerates to one token per step") {
    RuleModel m{16, 1.0, 0};
    auto prompt = make_rule_prompt(m, 4, 11);
    RuleDlm dlm(m);
    DisagreeingGuider guider(m);
    GuidanceConfig cfg;
    auto res = decode_guided(dlm, guider, prompt, 128, cfg, 256);
    REQUIRE(res.trace.dlm_passes == 128);
    for (const auto& s : res.trace.steps) {
        if (s.kind == StepKind::guided) REQUIRE(s.unmasked.size() == 1);
    }
    // Fallback keeps the DLM draft, so the output equals a sequential
    // baseline decode of the same model.
    RuleDlm dlm2(m);
    auto base = decode_baseline(dlm2, prompt, 128, UnmaskSchedule::uniform(128, 128),
                                Heuristic::maskgit_confidence);
    REQUIRE(res.tokens == base.tokens);
}

TEST_CASE("fallback can take the guider's token instead") {
    RuleModel m{16, 1.0, 0};
    auto prompt = make_rule_prompt(m, 4, 13);
    RuleDlm dlm(m);
    DisagreeingGuider guider(m);
    GuidanceConfig cfg;
    cfg.fallback_source = GuidanceConfig::Fallback::ar;
    std::vector<GuidedStepInfo> infos;
    GuidedOptions opts;
    opts.observer = [&](const GuidedStepInfo& i) { infos.push_back(i); };
    auto res = decode_guided(dlm, guider, prompt, 8, cfg, 256, opts);
    REQUIRE(!infos.empty());
    for (const auto& i : infos) {
        REQUIRE(i.fallback);
        REQUIRE(i.accepted.size() == 1);
        REQUIRE(i.accepted[0] == i.positions[0]);
    }
    // The guider's offset token, not the rule continuation, lands first.
    REQUIRE(res.tokens[4] != m.rule(prompt[3], prompt[2]));
}

TEST_CASE("every prefix-accepted token equals the DLM draft") {
    RuleModel drafter{16, 0.8, 21};
    RuleModel guide{16, 0.9, 22};
    auto prompt = make_rule_prompt(drafter, 4, 23);
    RuleDlm dlm(drafter);
    RuleGuider guider(guide);
    GuidanceConfig cfg;
    GuidedOptions opts;
    std::vector<std::pair<int, int>> accepted_drafts;  // (position, draft token)
    opts.observer = [&](const GuidedStepInfo& i) {
        REQUIRE(!i.accepted.empty());  // progress on every step
        if (i.fallback) return;
        for (int p : i.accepted) {
            for (std::size_t j = 0; j < i.positions.size(); ++j) {
                if (i.positions[j] == p) accepted_drafts.emplace_back(p, i.draft[j]);
            }
        }
    };
    auto res = decode_guided(dlm, guider, prompt, 96, cfg, 256, opts);
    REQUIRE(!accepted_drafts.empty());
    for (auto [p, tok] : accepted_drafts) REQUIRE(res.tokens[p] == tok);
    for (int t : res.tokens) REQUIRE(t != drafter.mask_id());
}

TEST_CASE("tau=0 unmasks the whole speculation window in one step") {
    RuleModel drafter{16, 0.6, 31};
    RuleModel guide{16, 0.9, 32};
    auto prompt = make_rule_prompt(drafter, 4, 33);
    RuleDlm dlm(drafter);
    RuleGuider guider(guide);
    GuidanceConfig cfg;
    cfg.mode = GuidanceConfig::Mode::stochastic;
    cfg.tau = 0.0;
    auto res = decode_guided(dlm, guider, prompt, 128, cfg, 256);
    REQUIRE(res.trace.dlm_passes == 4);  // 128 / 32
    for (const auto& s : res.trace.steps) {
        if (s.kind == StepKind::guided) REQUIRE(s.unmasked.size() == 32);
    }
}

TEST_CASE("huge tau reproduces deterministic prefix behavior step-for-step") {
    RuleModel drafter{16, 0.7, 41};
    RuleModel guide{16, 0.9, 42};
    auto prompt = make_rule_prompt(drafter, 4, 43);
    GuidanceConfig det;
    GuidanceConfig sto;
    sto.mode = GuidanceConfig::Mode::stochastic;
    sto.tau = 1e9;
    RuleDlm d1(drafter), d2(drafter);
    RuleGuider g1(guide), g2(guide);
    auto a = decode_guided(d1, g1, prompt, 64, det, 256);
    auto b = decode_guided(d2, g2, prompt, 64, sto, 256);
    REQUIRE(a.tokens == b.tokens);
    REQUIRE(a.trace.steps.size() == b.trace.steps.size());
    for (std::size_t i = 0; i < a.trace.steps.size(); ++i) {
        REQUIRE(a.trace.steps[i].unmasked == b.trace.steps[i].unmasked);
    }
}

TEST_CASE("transformer-guided decode verifies FLOPs exactly") {
    ModelSpec dspec;
    dspec.d = 8;
    dspec.heads = 2;
    dspec.n_layers = 2;
    dspec.d_ff = 16;
    dspec.vocab = 11;
    dspec.l_max = 64;
    ModelSpec gspec = dspec;
    gspec.mode = AttentionMode::causal;
    gspec.n_layers = 1;
    Weights dw = init_weights(dspec, 51);
    Weights gw = init_weights(gspec, 52);
    TransformerDlm dlm(dspec, &dw);
    TransformerGuider guider(gspec, &gw);
    CounterRng rng(53);
    std::vector<int> prompt;
    for (int i = 0; i < 4; ++i) prompt.push_back((int)(rng.next_u64() % 10));
    GuidanceConfig cfg;
    cfg.speculation_block = 8;
    auto res = decode_guided(dlm, guider, prompt, 24, cfg, 8);
    for (int t : res.tokens) REQUIRE(t != dspec.mask_id());
    auto ver = verify_flops(res.trace, dspec, &gspec);
    INFO(ver.detail << " step " << ver.first_bad_step << " expected " << ver.expected
                    << " actual " << ver.actual);
    REQUIRE(ver.ok);
}

TEST_CASE("decode_guided validates its configuration") {
    RuleModel a{16, 1.0, 0};
    RuleModel b{12, 1.0, 0};
    RuleDlm dlm(a);
    RuleGuider guider(b);
    GuidanceConfig cfg;
    REQUIRE_THROWS_AS(decode_guided(dlm, guider, {1, 2}, 8, cfg, 256), config_error);
    RuleGuider ok(a);
    cfg.speculation_block = 0;
    REQUIRE_THROWS_AS(decode_guided(dlm, ok, {1, 2}, 8, cfg, 256), config_error);
    cfg.speculation_block = 32;
    REQUIRE_THROWS_AS(decode_guided(dlm, ok, {}, 8, cfg, 256), input_error);
}
