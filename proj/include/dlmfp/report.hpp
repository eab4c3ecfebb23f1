#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "dlmfp/common.hpp"
#include "dlmfp/trace.hpp"

namespace dlmfp {

constexpr int kReportSchema = 1;

// One machine-readable record per decode run, emitted as a JSON line.
struct ReportRecord {
    std::string policy;
    int gen_len = 0;
    int steps = 0;
    int dlm_passes = 0;
    int ar_passes = 0;
    std::uint64_t total_flops = 0;
    double rule_match_rate = -1.0;  // < 0 means not a rule task
    double wall_ms = 0.0;
    std::uint64_t tokens_fnv = 0;
};

inline std::uint64_t tokens_checksum(const std::vector<int>& tokens) {
    std::uint64_t h = kFnvOffset;
    for (int t : tokens) {
        std::uint32_t v = static_cast<std::uint32_t>(t);
        unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                              static_cast<unsigned char>((v >> 8) & 0xFF),
                              static_cast<unsigned char>((v >> 16) & 0xFF),
                              static_cast<unsigned char>((v >> 24) & 0xFF)};
        h = fnv1a(b, 4, h);
    }
    return h;
}

inline ReportRecord make_report(const std::string& policy, int gen_len,
                                const DecodeResult& result) {
    ReportRecord rec;
    rec.policy = policy;
    rec.gen_len = gen_len;
    int steps = 0;
    for (const StepRecord& s : result.trace.steps) {
        if (s.kind != StepKind::initial_pass) ++steps;
    }
    rec.steps = steps;
    rec.dlm_passes = result.trace.dlm_passes;
    rec.ar_passes = result.trace.ar_passes;
    rec.total_flops = result.trace.total_flops;
    rec.wall_ms = result.trace.wall_ms;
    rec.tokens_fnv = tokens_checksum(result.tokens);
    return rec;
}

inline nlohmann::json report_to_json(const ReportRecord& rec) {
    nlohmann::json j;
    j["schema"] = kReportSchema;
    j["policy"] = rec.policy;
    j["gen_len"] = rec.gen_len;
    j["steps"] = rec.steps;
    j["dlm_passes"] = rec.dlm_passes;
    j["ar_passes"] = rec.ar_passes;
    j["total_flops"] = rec.total_flops;
    if (rec.rule_match_rate >= 0.0) j["rule_match_rate"] = rec.rule_match_rate;
    j["wall_ms"] = rec.wall_ms;
    j["tokens_fnv"] = rec.tokens_fnv;
    return j;
}

inline std::string report_line(const ReportRecord& rec) { return report_to_json(rec).dump(); }

}  // namespace dlmfp
