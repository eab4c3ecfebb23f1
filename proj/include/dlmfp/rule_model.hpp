#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "dlmfp/common.hpp"
#include "dlmfp/tensor.hpp"

namespace dlmfp {

// Deterministic synthetic language used as a verifiable stand-in for trained
// models: the correct continuation is t[i] = (t[i-1] + t[i-2]) mod (V-1).
// With probability `competence` the model emits the correct token, otherwise
// the fixed wrong token correct+1 mod (V-1). Draws are keyed on
// (seed, position, resolved predecessor tokens), so identical inputs always
// reproduce identical outputs. MASK (id V-1) is never emitted.
struct RuleModel {
    int vocab = 16;
    double competence = 1.0;
    std::uint64_t seed = 0;

    int mask_id() const { return vocab - 1; }

    int rule(int a, int b) const { return (a + b) % (vocab - 1); }

    // Prediction for one position plus how far it sits from clean context.
    struct Prediction {
        int token = 0;       // emitted token
        int correct = 0;     // the rule's token given (chain-resolved) context
        int chain_dist = 0;  // masked predecessors bridged by the rule chain
    };

    // Predictions for `positions` (ascending) given the visible sequence.
    // Masked predecessors are bridged by the pure rule continuation from the
    // nearest clean context; competence flips apply only at the queried
    // position. This models a drafter whose multi-token proposals stay
    // self-consistent while its certainty decays away from clean tokens.
    std::vector<Prediction> predict(const std::vector<int>& tokens,
                                    const std::vector<int>& positions) const {
        std::unordered_map<int, std::pair<int, int>> chain;  // pos -> (value, dist)
        auto resolve = [&](auto&& self, int j) -> std::pair<int, int> {
            if (j < 0) return {0, 0};
            if (tokens[j] != mask_id()) return {tokens[j], 0};
            auto it = chain.find(j);
            if (it != chain.end()) return it->second;
            auto a = self(self, j - 1);
            auto b = self(self, j - 2);
            std::pair<int, int> r{rule(a.first, b.first), std::max(a.second, b.second) + 1};
            chain[j] = r;
            return r;
        };
        std::vector<Prediction> out;
        out.reserve(positions.size());
        for (int i : positions) {
            auto a = resolve(resolve, i - 1);
            auto b = resolve(resolve, i - 2);
            Prediction pr;
            pr.correct = rule(a.first, b.first);
            pr.chain_dist = std::max(a.second, b.second);
            const bool hit = hash_unit(seed, static_cast<std::uint64_t>(i),
                                       static_cast<std::uint64_t>(a.first),
                                       static_cast<std::uint64_t>(b.first)) < competence;
            pr.token = hit ? pr.correct : (pr.correct + 1) % (vocab - 1);
            chain[i] = {pr.correct, pr.chain_dist + 1};
            out.push_back(pr);
        }
        return out;
    }

    // Peak confidence decays with distance from clean context: the frontier
    // is sharp, far positions approach a uniform guess.
    double confidence(int chain_dist) const {
        double c = 0.9;
        for (int i = 0; i < chain_dist; ++i) c *= 0.5;
        return std::max(c, 0.12);
    }

    // Probability rows (one per position): peak mass on the emitted token,
    // the rest spread over non-MASK tokens, zero on MASK.
    Tensor2D distributions(const std::vector<int>& tokens,
                           const std::vector<int>& positions) const {
        auto preds = predict(tokens, positions);
        Tensor2D rows(static_cast<int>(positions.size()), vocab);
        for (int r = 0; r < rows.rows; ++r) {
            const double conf = confidence(preds[r].chain_dist);
            const double rest = (1.0 - conf) / static_cast<double>(vocab - 2);
            for (int t = 0; t < vocab - 1; ++t) {
                rows.at(r, t) = static_cast<float>(t == preds[r].token ? conf : rest);
            }
            rows.at(r, mask_id()) = 0.0f;
        }
        return rows;
    }
};

// Convenience for the CLI rule task: a rule-consistent prompt.
inline std::vector<int> make_rule_prompt(const RuleModel& model, int prompt_len,
                                         std::uint64_t seed) {
    if (prompt_len < 2) throw config_error("rule prompt needs at least 2 tokens");
    CounterRng rng(seed);
    std::vector<int> prompt;
    prompt.push_back(static_cast<int>(rng.next_u64() % (model.vocab - 1)));
    prompt.push_back(static_cast<int>(rng.next_u64() % (model.vocab - 1)));
    for (int i = 2; i < prompt_len; ++i) {
        prompt.push_back(model.rule(prompt[i - 1], prompt[i - 2]));
    }
    return prompt;
}

// Fraction of generated positions consistent with the rule applied to their
// actual predecessors in the final sequence.
inline double rule_match_rate(const RuleModel& model, const std::vector<int>& tokens,
                              int prompt_len) {
    const int total = static_cast<int>(tokens.size()) - prompt_len;
    if (total <= 0) return 0.0;
    int ok = 0;
    for (int i = prompt_len; i < static_cast<int>(tokens.size()); ++i) {
        const int a = i >= 1 ? tokens[i - 1] : 0;
        const int b = i >= 2 ? tokens[i - 2] : 0;
        if (tokens[i] == model.rule(a, b)) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(total);
}

}  // namespace dlmfp
