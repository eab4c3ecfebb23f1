#pragma once

#include <cstdint>
#include <vector>

namespace dlmfp {

enum class StepKind { initial_pass, baseline, freecache, guided };

// One decode step. Window/context lengths are recorded so the analytic FLOP
// model can be replayed against the instrumented counter.
struct StepRecord {
    int index = 0;
    StepKind kind = StepKind::baseline;
    int window_len = 0;    // DLM query rows this step
    int context_len = 0;   // DLM attention context length
    int ar_window = 0;     // guider query rows (guided only)
    int ar_context = 0;    // guider context length (guided only)
    std::vector<int> unmasked;
    std::uint64_t flops = 0;  // matmul FLOPs for this step
    int dlm_passes = 0;       // cumulative
    int ar_passes = 0;        // cumulative
    int accepted_prefix = 0;  // guided: k from prefix matching
    double wall_ms = 0.0;
};

struct DecodeTrace {
    std::vector<StepRecord> steps;
    std::uint64_t total_flops = 0;
    int dlm_passes = 0;
    int ar_passes = 0;
    double wall_ms = 0.0;
};

struct DecodeResult {
    std::vector<int> tokens;
    DecodeTrace trace;
};

}  // namespace dlmfp
