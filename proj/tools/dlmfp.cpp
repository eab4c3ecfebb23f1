// dlmfp: command-line harness for the toy diffusion-LM inference engine.
//
// Subcommands: make-model, decode, bench, heatmap, flops. Reports go to
// stdout as JSON lines (and append to --out when given). Config precedence:
// CLI flags > --config key=value file > built-in defaults. DLMFP_SEED sets
// the default seed.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dlmfp/diagnostics.hpp"
#include "dlmfp/freecache.hpp"
#include "dlmfp/guided.hpp"
#include "dlmfp/report.hpp"
#include "dlmfp/weights_io.hpp"

using nlohmann::json;

namespace {

struct SpecFlags {
    int d = 8;
    int heads = 2;
    int layers = 1;
    int d_ff = 16;
    int vocab = 11;
    int l_max = 2048;
    std::string mode = "bidirectional";

    dlmfp::ModelSpec to_spec() const {
        dlmfp::ModelSpec s;
        s.d = d;
        s.heads = heads;
        s.n_layers = layers;
        s.d_ff = d_ff;
        s.vocab = vocab;
        s.l_max = l_max;
        if (mode == "bidirectional") {
            s.mode = dlmfp::AttentionMode::bidirectional;
        } else if (mode == "causal") {
            s.mode = dlmfp::AttentionMode::causal;
        } else {
            throw dlmfp::config_error("mode must be bidirectional or causal");
        }
        s.validate();
        return s;
    }
};

void add_spec_flags(CLI::App* app, SpecFlags& f, const std::string& prefix = "") {
    auto name = [&](const std::string& n) { return "--" + prefix + n; };
    app->add_option(name("d"), f.d, "model width");
    app->add_option(name("heads"), f.heads, "attention heads");
    app->add_option(name("layers"), f.layers, "transformer layers");
    app->add_option(name("d-ff"), f.d_ff, "feed-forward width");
    app->add_option(name("vocab"), f.vocab, "vocabulary size incl. MASK");
    app->add_option(name("l-max"), f.l_max, "maximum sequence length");
    app->add_option(name("mode"), f.mode, "bidirectional|causal");
}

std::vector<int> read_token_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw dlmfp::format_error("cannot open token file " + path);
    std::vector<int> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(std::stoi(line));
        } catch (const std::exception&) {
            throw dlmfp::format_error("bad token at " + path + ":" + std::to_string(lineno));
        }
    }
    if (out.empty()) throw dlmfp::format_error("token file " + path + " is empty");
    return out;
}

dlmfp::Heuristic parse_heuristic(const std::string& s) {
    if (s == "confidence") return dlmfp::Heuristic::maskgit_confidence;
    if (s == "entropy") return dlmfp::Heuristic::entropy;
    if (s == "margin") return dlmfp::Heuristic::topk_margin;
    throw dlmfp::config_error("heuristic must be confidence|entropy|margin");
}

void emit(const json& j, const std::string& out_path) {
    std::cout << j.dump() << "\n";
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::app);
        if (!out) throw dlmfp::format_error("cannot open report file " + out_path);
        out << j.dump() << "\n";
    }
}

// Everything one decode cell needs; bench reuses this.
struct DecodeRun {
    std::string policy = "baseline";
    std::string heuristic = "confidence";
    int gen_len = 64;
    int steps = 0;       // 0: one unmask per step
    int block_size = 256;
    int spec_block = 32;
    int topk = 2;
    double tau = 0.5;
    std::string fallback = "dlm";
    std::string match = "prefix";
    bool rule_task = false;
    int rule_vocab = 16;
    double competence = 1.0;
    double guider_competence = 1.0;
    std::uint64_t seed = 0;
    int prompt_len = 4;
};

dlmfp::GuidanceConfig guidance_from(const DecodeRun& r) {
    dlmfp::GuidanceConfig g;
    g.speculation_block = r.spec_block;
    g.topk_match = r.topk;
    g.tau = r.tau;
    g.mode = r.policy == "guided_stochastic" ? dlmfp::GuidanceConfig::Mode::stochastic
                                             : dlmfp::GuidanceConfig::Mode::deterministic_prefix;
    g.fallback_source = r.fallback == "ar" ? dlmfp::GuidanceConfig::Fallback::ar
                                           : dlmfp::GuidanceConfig::Fallback::dlm;
    g.match = r.match == "count" ? dlmfp::GuidanceConfig::Match::count
                                 : dlmfp::GuidanceConfig::Match::prefix;
    return g;
}

dlmfp::ReportRecord execute_run(const DecodeRun& r, const SpecFlags& dlm_flags,
                                const SpecFlags& guider_flags, const std::string& model_path,
                                const std::string& guider_path,
                                const std::string& prompt_path) {
    using namespace dlmfp;
    const Heuristic heur = parse_heuristic(r.heuristic);
    const int T = r.steps > 0 ? std::min(r.steps, r.gen_len) : r.gen_len;

    if (r.rule_task) {
        RuleModel drafter{r.rule_vocab, r.competence, r.seed};
        RuleModel guide{r.rule_vocab, r.guider_competence, r.seed + 0x9E37ULL};
        std::vector<int> prompt = prompt_path.empty()
                                      ? make_rule_prompt(drafter, r.prompt_len, r.seed)
                                      : read_token_file(prompt_path);
        DecodeResult res;
        if (r.policy == "baseline") {
            RuleDlm dlm(drafter);
            res = decode_baseline(dlm, prompt, r.gen_len,
                                  UnmaskSchedule::uniform(r.gen_len, T), heur);
        } else if (r.policy == "guided" || r.policy == "guided_stochastic") {
            RuleDlm dlm(drafter);
            RuleGuider guider(guide);
            res = decode_guided(dlm, guider, prompt, r.gen_len, guidance_from(r),
                                r.block_size);
        } else {
            throw config_error("rule task supports policies baseline|guided|guided_stochastic");
        }
        ReportRecord rec = make_report(r.policy, r.gen_len, res);
        rec.rule_match_rate =
            rule_match_rate(drafter, res.tokens, static_cast<int>(prompt.size()));
        return rec;
    }

    ModelSpec spec;
    Weights weights;
    if (!model_path.empty()) {
        std::tie(spec, weights) = load_weights(model_path);
    } else {
        spec = dlm_flags.to_spec();
        weights = init_weights(spec, r.seed);
    }
    std::vector<int> prompt;
    if (!prompt_path.empty()) {
        prompt = read_token_file(prompt_path);
    } else {
        CounterRng rng(r.seed + 0x5EEDULL);
        for (int i = 0; i < r.prompt_len; ++i) {
            prompt.push_back(static_cast<int>(rng.next_u64() % (spec.vocab - 1)));
        }
    }

    DecodeResult res;
    if (r.policy == "baseline") {
        TransformerDlm dlm(spec, &weights);
        res = decode_baseline(dlm, prompt, r.gen_len, UnmaskSchedule::uniform(r.gen_len, T),
                              heur);
    } else if (r.policy == "freecache") {
        res = decode_freecache(spec, weights, prompt, r.gen_len, r.block_size,
                               UnmaskSchedule::uniform(r.gen_len, T), heur);
    } else if (r.policy == "guided" || r.policy == "guided_stochastic") {
        ModelSpec gspec;
        Weights gweights;
        if (!guider_path.empty()) {
            std::tie(gspec, gweights) = load_weights(guider_path);
        } else {
            gspec = guider_flags.to_spec();
            gspec.mode = AttentionMode::causal;
            gspec.vocab = spec.vocab;  // shared vocabulary
            gspec.l_max = std::max(gspec.l_max, spec.l_max);
            gweights = init_weights(gspec, r.seed + 0xA11ULL);
        }
        TransformerDlm dlm(spec, &weights);
        TransformerGuider guider(gspec, &gweights);
        res = decode_guided(dlm, guider, prompt, r.gen_len, guidance_from(r), r.block_size);
    } else {
        throw config_error("unknown policy " + r.policy);
    }
    return make_report(r.policy, r.gen_len, res);
}

std::uint64_t default_seed() {
    if (const char* env = std::getenv("DLMFP_SEED")) {
        return std::strtoull(env, nullptr, 10);
    }
    return 0;
}

void write_heatmap_files(const dlmfp::SimilarityHeatmap& hm, const std::string& out_prefix) {
    {
        std::ofstream csv(out_prefix + ".csv");
        if (!csv) throw dlmfp::format_error("cannot open " + out_prefix + ".csv");
        for (int c = 0; c < hm.cols; ++c) csv << (c ? "," : "") << c;
        csv << "\n";
        for (int r = 0; r < hm.rows; ++r) {
            for (int c = 0; c < hm.cols; ++c) {
                csv << (c ? "," : "") << hm.at(r, c);
            }
            csv << "\n";
        }
    }
    json meta;
    meta["schema"] = 1;
    meta["layer"] = hm.layer;
    meta["kind"] = std::string(1, hm.kind);
    meta["rows"] = hm.rows;
    meta["cols"] = hm.cols;
    meta["unmask_step"] = hm.unmask_step;
    meta["zero_norm_seen"] = hm.zero_norm_seen;
    std::ofstream js(out_prefix + ".json");
    if (!js) throw dlmfp::format_error("cannot open " + out_prefix + ".json");
    js << meta.dump(2) << "\n";
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy diffusion-LM inference engine"};
    app.require_subcommand(1);
    std::string config_path;

    // make-model -------------------------------------------------------------
    auto* mk = app.add_subcommand("make-model", "initialize and save a seeded model");
    mk->add_option("--config", config_path, "key=value config file");
    SpecFlags mk_spec;
    std::uint64_t mk_seed = default_seed();
    std::string mk_out = "model.dlmw";
    add_spec_flags(mk, mk_spec);
    mk->add_option("--seed", mk_seed, "init seed");
    mk->add_option("--out", mk_out, "output weight file")->required();

    // decode -----------------------------------------------------------------
    auto* dec = app.add_subcommand("decode", "run one decode under a policy");
    dec->add_option("--config", config_path, "key=value config file");
    DecodeRun run;
    run.seed = default_seed();
    SpecFlags dec_spec, dec_guider_spec;
    dec_guider_spec.mode = "causal";
    std::string dec_model, dec_guider, dec_prompt, dec_out;
    add_spec_flags(dec, dec_spec);
    add_spec_flags(dec, dec_guider_spec, "guider-");
    dec->add_option("--model", dec_model, "DLM weight file");
    dec->add_option("--guider", dec_guider, "guider weight file");
    dec->add_option("--prompt-file", dec_prompt, "prompt tokens, one id per line");
    dec->add_option("--prompt-len", run.prompt_len, "synthesized prompt length");
    dec->add_option("--policy", run.policy, "baseline|freecache|guided|guided_stochastic");
    dec->add_option("--heuristic", run.heuristic, "confidence|entropy|margin");
    dec->add_option("--gen-len", run.gen_len, "tokens to generate");
    dec->add_option("--steps", run.steps, "denoising steps T (0: one token per step)");
    dec->add_option("--block-size", run.block_size, "cache block size");
    dec->add_option("--spec-block", run.spec_block, "speculation block");
    dec->add_option("--topk", run.topk, "guider top-K for matching");
    dec->add_option("--tau", run.tau, "stochastic guidance threshold");
    dec->add_option("--fallback", run.fallback, "dlm|ar");
    dec->add_option("--match", run.match, "prefix|count");
    dec->add_flag("--rule-task", run.rule_task, "use the synthetic rule task");
    dec->add_option("--rule-vocab", run.rule_vocab, "rule-task vocabulary");
    dec->add_option("--competence", run.competence, "drafter rule competence");
    dec->add_option("--guider-competence", run.guider_competence, "guider rule competence");
    dec->add_option("--seed", run.seed, "run seed");
    dec->add_option("--out", dec_out, "append report line here");

    // bench ------------------------------------------------------------------
    auto* ben = app.add_subcommand("bench", "cartesian sweep on the rule task");
    ben->add_option("--config", config_path, "key=value config file");
    std::string b_policies = "baseline,guided";
    std::string b_steps = "0", b_blocks = "256", b_topks = "2", b_taus = "0.5";
    std::string b_comps = "1.0", b_out;
    int b_gen = 128, b_seeds = 1;
    std::uint64_t b_seed = default_seed();
    ben->add_option("--policies", b_policies, "comma list of policies");
    ben->add_option("--steps-list", b_steps, "comma list of T values");
    ben->add_option("--block-sizes", b_blocks, "comma list of block sizes");
    ben->add_option("--topk-list", b_topks, "comma list of top-K values");
    ben->add_option("--tau-list", b_taus, "comma list of tau values");
    ben->add_option("--competence-list", b_comps, "comma list of agreement p");
    ben->add_option("--gen-len", b_gen, "tokens per cell");
    ben->add_option("--seeds", b_seeds, "seeds per cell");
    ben->add_option("--seed", b_seed, "base seed");
    ben->add_option("--out", b_out, "append report lines here");

    // heatmap ----------------------------------------------------------------
    auto* hmc = app.add_subcommand("heatmap", "KV-stability heatmap of a baseline decode");
    hmc->add_option("--config", config_path, "key=value config file");
    SpecFlags hm_spec;
    hm_spec.l_max = 64;
    std::uint64_t hm_seed = default_seed();
    int hm_gen = 16, hm_steps = 8, hm_layer = 0, hm_prompt_len = 4;
    std::string hm_kind = "K", hm_heur = "confidence", hm_prompt, hm_out = "heatmap";
    add_spec_flags(hmc, hm_spec);
    hmc->add_option("--seed", hm_seed, "model seed");
    hmc->add_option("--gen-len", hm_gen, "tokens to generate");
    hmc->add_option("--steps", hm_steps, "denoising steps");
    hmc->add_option("--layer", hm_layer, "layer to record");
    hmc->add_option("--kind", hm_kind, "K|V");
    hmc->add_option("--heuristic", hm_heur, "confidence|entropy|margin");
    hmc->add_option("--prompt-file", hm_prompt, "prompt tokens");
    hmc->add_option("--prompt-len", hm_prompt_len, "synthesized prompt length");
    hmc->add_option("--out", hm_out, "output prefix (.csv/.json appended)");

    // flops ------------------------------------------------------------------
    auto* flc = app.add_subcommand("flops", "analytic FLOP breakdown per step");
    flc->add_option("--config", config_path, "key=value config file");
    SpecFlags fl_spec;
    std::string fl_mode = "dlm_step";
    int fl_L = 128, fl_l = 128, fl_window = 0;
    add_spec_flags(flc, fl_spec);
    flc->add_option("--flop-mode", fl_mode, "ar_decode_step|dlm_step|dlm_windowed_step");
    flc->add_option("--seq-len", fl_L, "full sequence length L");
    flc->add_option("--prefix-len", fl_l, "AR prefix length l");
    flc->add_option("--window", fl_window, "active window for dlm_windowed_step");

    // Config precedence: CLI flags > config file > defaults. The file's
    // key=value lines become option tokens inserted ahead of the real CLI
    // tokens; every option takes its last occurrence.
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string cfg_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) cfg_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) cfg_path = args[i].substr(9);
    }
    if (!cfg_path.empty()) {
        std::ifstream cfg(cfg_path);
        if (!cfg) {
            std::cerr << "error: cannot open config file " << cfg_path << "\n";
            return 1;
        }
        std::vector<std::string> tokens;
        std::string line;
        while (std::getline(cfg, line)) {
            if (line.empty() || line[0] == '#') continue;
            if (line.find('=') == std::string::npos) {
                std::cerr << "error: bad config line: " << line << "\n";
                return 1;
            }
            tokens.push_back("--" + line);
        }
        if (!args.empty()) args.insert(args.begin() + 1, tokens.begin(), tokens.end());
    }
    auto take_last = [](CLI::App* a, auto&& self) -> void {
        for (CLI::Option* opt : a->get_options()) {
            if (opt->get_expected_max() == 1) {
                opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
            }
        }
        for (CLI::App* sub : a->get_subcommands({})) self(sub, self);
    };
    take_last(&app, take_last);
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*mk) {
            dlmfp::ModelSpec spec = mk_spec.to_spec();
            dlmfp::Weights w = dlmfp::init_weights(spec, mk_seed);
            dlmfp::save_weights(spec, w, mk_out);
            json j;
            j["schema"] = 1;
            j["file"] = mk_out;
            j["seed"] = mk_seed;
            j["checksum"] = dlmfp::weights_checksum(w);
            std::cout << j.dump() << "\n";
        } else if (*dec) {
            dlmfp::ReportRecord rec =
                execute_run(run, dec_spec, dec_guider_spec, dec_model, dec_guider, dec_prompt);
            emit(dlmfp::report_to_json(rec), dec_out);
        } else if (*ben) {
            json header;
            header["schema"] = 1;
            header["record"] = "bench_config";
            header["defaults"] = {{"block_size", 256}, {"max_output", 1024},
                                  {"spec_block", 32},  {"topk", 2},
                                  {"tau", 0.5}};
            header["gen_len"] = b_gen;
            emit(header, b_out);
            // The baseline cell for pass-count speedups: sequential baseline
            // at the same gen_len.
            const double base_passes = static_cast<double>(b_gen);
            for (const auto& policy : split_list(b_policies)) {
                for (const auto& ts : split_list(b_steps)) {
                    for (const auto& bs : split_list(b_blocks)) {
                        for (const auto& tk : split_list(b_topks)) {
                            for (const auto& tau : split_list(b_taus)) {
                                for (const auto& comp : split_list(b_comps)) {
                                    double passes = 0.0, match = 0.0, accepted = 0.0;
                                    int accepted_n = 0;
                                    for (int s = 0; s < b_seeds; ++s) {
                                        DecodeRun cell;
                                        cell.policy = policy;
                                        cell.rule_task = true;
                                        cell.gen_len = b_gen;
                                        cell.steps = std::stoi(ts);
                                        cell.block_size = std::stoi(bs);
                                        cell.topk = std::stoi(tk);
                                        cell.tau = std::stod(tau);
                                        cell.competence = std::stod(comp);
                                        cell.seed = b_seed + 7919ULL * s;
                                        dlmfp::ReportRecord rec = execute_run(
                                            cell, SpecFlags{}, SpecFlags{}, "", "", "");
                                        passes += rec.dlm_passes;
                                        match += rec.rule_match_rate;
                                        if (rec.steps > 0) {
                                            accepted += static_cast<double>(b_gen) / rec.steps;
                                            ++accepted_n;
                                        }
                                    }
                                    json j;
                                    j["schema"] = 1;
                                    j["record"] = "bench_cell";
                                    j["policy"] = policy;
                                    j["steps"] = std::stoi(ts);
                                    j["block_size"] = std::stoi(bs);
                                    j["topk"] = std::stoi(tk);
                                    j["tau"] = std::stod(tau);
                                    j["competence"] = std::stod(comp);
                                    j["seeds"] = b_seeds;
                                    j["mean_dlm_passes"] = passes / b_seeds;
                                    j["mean_rule_match_rate"] = match / b_seeds;
                                    j["mean_accepted_per_step"] =
                                        accepted_n ? accepted / accepted_n : 0.0;
                                    j["speedup_vs_baseline"] =
                                        passes > 0.0 ? base_passes / (passes / b_seeds) : 0.0;
                                    emit(j, b_out);
                                }
                            }
                        }
                    }
                }
            }
        } else if (*hmc) {
            dlmfp::ModelSpec spec = hm_spec.to_spec();
            dlmfp::Weights w = dlmfp::init_weights(spec, hm_seed);
            std::vector<int> prompt;
            if (!hm_prompt.empty()) {
                prompt = read_token_file(hm_prompt);
            } else {
                dlmfp::CounterRng rng(hm_seed + 0x5EEDULL);
                for (int i = 0; i < hm_prompt_len; ++i) {
                    prompt.push_back(static_cast<int>(rng.next_u64() % (spec.vocab - 1)));
                }
            }
            if (hm_kind != "K" && hm_kind != "V") {
                throw dlmfp::config_error("--kind must be K or V");
            }
            auto hm = dlmfp::kv_similarity_heatmap(
                spec, w, prompt, hm_gen,
                dlmfp::UnmaskSchedule::uniform(hm_gen, std::min(hm_steps, hm_gen)),
                parse_heuristic(hm_heur), hm_layer, hm_kind[0]);
            write_heatmap_files(hm, hm_out);
            json j;
            j["schema"] = 1;
            j["rows"] = hm.rows;
            j["cols"] = hm.cols;
            j["csv"] = hm_out + ".csv";
            j["json"] = hm_out + ".json";
            std::cout << j.dump() << "\n";
        } else if (*flc) {
            dlmfp::ModelSpec spec = fl_spec.to_spec();
            dlmfp::FlopMode mode;
            if (fl_mode == "ar_decode_step") {
                mode = dlmfp::FlopMode::ar_decode_step;
            } else if (fl_mode == "dlm_step") {
                mode = dlmfp::FlopMode::dlm_step;
            } else if (fl_mode == "dlm_windowed_step") {
                mode = dlmfp::FlopMode::dlm_windowed_step;
            } else {
                throw dlmfp::config_error("bad --flop-mode");
            }
            auto fb = dlmfp::flops_analytic(spec, fl_L, fl_l, mode,
                                            fl_window > 0 ? fl_window : fl_L);
            json j;
            j["schema"] = 1;
            j["mode"] = fl_mode;
            j["projections"] = fb.projections;
            j["attn_scores"] = fb.attn_scores;
            j["attn_values"] = fb.attn_values;
            j["ffn"] = fb.ffn;
            j["head"] = fb.head;
            j["total"] = fb.total();
            std::cout << j.dump() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
