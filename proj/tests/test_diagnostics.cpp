#include <catch2/catch_amalgamated.hpp>

#include "dlmfp/diagnostics.hpp"
#include "dlmfp/predictors.hpp"

using namespace dlmfp;

namespace {

ModelSpec make_spec(int layers, int l_max = 64) {
    ModelSpec s;
    s.d = 8;
    s.heads = 2;
    s.n_layers = layers;
    s.d_ff = 16;
    s.vocab = 11;
    s.l_max = l_max;
    return s;
}

}  // namespace

TEST_CASE("analytic FLOPs match the hand-derived example") {
    // d=8, L=4: one projection is 2*4*8*8 = 512 FLOPs.
    ModelSpec spec = make_spec(1);
    auto fb = flops_analytic(spec, 4, 0, FlopMode::dlm_step);
    REQUIRE(fb.projections == 4 * 512);
    REQUIRE(fb.attn_scores == 2ull * 4 * 4 * 8);
    REQUIRE(fb.attn_values == 2ull * 4 * 4 * 8);
    REQUIRE(fb.ffn == 2ull * 2 * 4 * 8 * 16);
    REQUIRE(fb.head == 2ull * 4 * 8 * 11);
}

TEST_CASE("DLM-step to AR-step projection ratio equals L") {
    for (int L : {4, 16, 128}) {
        ModelSpec spec = make_spec(3);
        auto dlm = flops_analytic(spec, L, L, FlopMode::dlm_step);
        auto ar = flops_analytic(spec, L, L, FlopMode::ar_decode_step);
        REQUIRE(dlm.projections == (std::uint64_t)L * ar.projections);
        REQUIRE(dlm.ffn == (std::uint64_t)L * ar.ffn);
        REQUIRE(dlm.head == (std::uint64_t)L * ar.head);
    }
}

TEST_CASE("windowed step with window=L reduces to the full DLM step") {
    ModelSpec spec = make_spec(2);
    auto a = flops_analytic(spec, 24, 0, FlopMode::dlm_step);
    auto b = flops_analytic(spec, 24, 0, FlopMode::dlm_windowed_step, 24);
    REQUIRE(a.total() == b.total());
    REQUIRE(a.projections == b.projections);
}

TEST_CASE("verify_flops passes genuine traces and flags corrupted ones") {
    ModelSpec spec = make_spec(2);
    Weights w = init_weights(spec, 5);
    CounterRng rng(6);
    std::vector<int> prompt;
    for (int i = 0; i < 4; ++i) prompt.push_back((int)(rng.next_u64() % 10));
    TransformerDlm dlm(spec, &w);
    auto res = decode_baseline(dlm, prompt, 16, UnmaskSchedule::uniform(16, 8),
                               Heuristic::maskgit_confidence);
    auto ok = verify_flops(res.trace, spec);
    REQUIRE(ok.ok);

    auto corrupted = res.trace;
    corrupted.steps[3].flops += 1;
    auto bad = verify_flops(corrupted, spec);
    REQUIRE(!bad.ok);
    REQUIRE(bad.first_bad_step == corrupted.steps[3].index);
    REQUIRE(bad.actual == bad.expected + 1);
}

TEST_CASE("verify_flops checks the session total too") {
    DecodeTrace trace;
    trace.total_flops = 12345;  // no steps recorded it
    auto rep = verify_flops(trace, make_spec(1));
    REQUIRE(!rep.ok);
}

TEST_CASE("memory estimate matches a parameter enumeration oracle") {
    ModelSpec spec = make_spec(3, 48);
    Weights w = init_weights(spec, 2);
    std::uint64_t counted = 0;
    w.for_each_tensor([&](const std::vector<float>& t) { counted += t.size(); });
    REQUIRE(param_count(spec) == counted);
    auto est = memory_estimate(spec, 32, true);
    REQUIRE(est.weights == counted * 4);
    REQUIRE(est.kv_cache == 3ull * 2 * 32 * 8 * 4);
}

TEST_CASE("kv_cache bytes are linear in L and zero without a cache") {
    ModelSpec spec = make_spec(2);
    auto a = memory_estimate(spec, 16, true);
    auto b = memory_estimate(spec, 32, true);
    REQUIRE(b.kv_cache == 2 * a.kv_cache);
    auto c = memory_estimate(spec, 16, false);
    REQUIRE(c.kv_cache == 0);
    REQUIRE(c.weights == a.weights);
}

TEST_CASE("zero-layer estimate is embeddings plus head only") {
    ModelSpec spec = make_spec(0);
    auto est = memory_estimate(spec, 8, true);
    const std::uint64_t expect =
        ((std::uint64_t)spec.vocab * spec.d + (std::uint64_t)spec.l_max * spec.d +
         (std::uint64_t)spec.d * spec.vocab) *
        4;
    REQUIRE(est.weights == expect);
    REQUIRE(est.kv_cache == 0);
}

TEST_CASE("guider memory is accounted separately and summed") {
    ModelSpec spec = make_spec(2);
    ModelSpec gspec = make_spec(1);
    auto solo = memory_estimate(spec, 16, true);
    auto both = memory_estimate(spec, 16, true, &gspec);
    REQUIRE(both.guider == param_count(gspec) * 4 + 1ull * 2 * 16 * 8 * 4);
    REQUIRE(both.total() == solo.total() + both.guider);
}

TEST_CASE("cosine helper flags zero norms and shortcuts identical rows") {
    std::vector<float> a{0.0f, 0.0f, 0.0f};
    std::vector<float> b{1.0f, 2.0f, 3.0f};
    bool flag = false;
    REQUIRE(detail::cosine_rows(a.data(), a.data(), 3, flag) == 0.0f);
    REQUIRE(flag);
    flag = false;
    REQUIRE(detail::cosine_rows(b.data(), b.data(), 3, flag) == 1.0f);
    REQUIRE(!flag);
    std::vector<float> c{-1.0f, -2.0f, -3.0f};
    REQUIRE(detail::cosine_rows(b.data(), c.data(), 3, flag) ==
            Catch::Approx(-1.0f).margin(1e-6));
}

TEST_CASE("heatmap prompt columns at layer 0 are exactly 1.0") {
    ModelSpec spec = make_spec(2);
    Weights w = init_weights(spec, 7);
    std::vector<int> prompt{1, 4, 2, 7};
    auto hm = kv_similarity_heatmap(spec, w, prompt, 12, UnmaskSchedule::uniform(12, 6),
                                    Heuristic::maskgit_confidence, 0, 'K');
    REQUIRE(hm.rows == 6);
    REQUIRE(hm.cols == 16);
    for (int t = 0; t < hm.rows; ++t) {
        for (int p = 0; p < 4; ++p) {
            REQUIRE(hm.at(t, p) == 1.0f);
        }
    }
    for (float v : hm.values) {
        REQUIRE(v >= -1.0f);
        REQUIRE(v <= 1.0f);
    }
    for (int p = 0; p < 4; ++p) REQUIRE(hm.unmask_step[p] == 0);
    for (int p = 4; p < 16; ++p) REQUIRE(hm.unmask_step[p] >= 1);
}

TEST_CASE("heatmap entries match an independent snapshot recompute oracle") {
    ModelSpec spec = make_spec(2);
    Weights w = init_weights(spec, 9);
    std::vector<int> prompt{3, 1, 5, 2};
    const int gen = 10, T = 5;
    auto sched = UnmaskSchedule::uniform(gen, T);
    for (char kind : {'K', 'V'}) {
        auto hm = kv_similarity_heatmap(spec, w, prompt, gen, sched, Heuristic::entropy, 1,
                                        kind);
        // Reconstruct every intermediate sequence from the final tokens and
        // the per-position unmask step, then recompute each snapshot pair.
        TransformerDlm dlm(spec, &w);
        auto res = decode_baseline(dlm, prompt, gen, sched, Heuristic::entropy);
        const int L = (int)res.tokens.size();
        auto tokens_at = [&](int snap) {
            std::vector<int> t = res.tokens;
            for (int p = 0; p < L; ++p) {
                if (hm.unmask_step[p] > snap) t[p] = spec.mask_id();
            }
            return t;
        };
        for (int t = 0; t < hm.rows; ++t) {
            FlopCounter f;
            ForwardResult prev = forward_full(spec, w, tokens_at(t), f);
            ForwardResult cur = forward_full(spec, w, tokens_at(t + 1), f);
            const Tensor2D& pm = kind == 'K' ? prev.k[1] : prev.v[1];
            const Tensor2D& cm = kind == 'K' ? cur.k[1] : cur.v[1];
            for (int p = 0; p < L; ++p) {
                double dot = 0.0, na = 0.0, nb = 0.0;
                for (int c = 0; c < spec.d; ++c) {
                    dot += (double)cm.at(p, c) * pm.at(p, c);
                    na += (double)cm.at(p, c) * cm.at(p, c);
                    nb += (double)pm.at(p, c) * pm.at(p, c);
                }
                const double want = dot / (std::sqrt(na) * std::sqrt(nb));
                REQUIRE(hm.at(t, p) == Catch::Approx(want).margin(1e-5));
            }
        }
    }
}

TEST_CASE("heatmap validates layer and kind") {
    ModelSpec spec = make_spec(1);
    Weights w = init_weights(spec, 1);
    auto sched = UnmaskSchedule::uniform(4, 2);
    REQUIRE_THROWS_AS(kv_similarity_heatmap(spec, w, {1, 2}, 4, sched,
                                            Heuristic::entropy, 1, 'K'),
                      config_error);
    REQUIRE_THROWS_AS(kv_similarity_heatmap(spec, w, {1, 2}, 4, sched,
                                            Heuristic::entropy, 0, 'Q'),
                      config_error);
}
