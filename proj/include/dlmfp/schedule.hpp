#pragma once

#include <vector>

#include "dlmfp/common.hpp"

namespace dlmfp {

// Per-step unmask counts over T denoising steps. Counts sum to the initial
// mask-set size and every count is >= 1.
struct UnmaskSchedule {
    int total_steps = 0;
    std::vector<int> counts;

    // Equal-sized counts by default; the tail shrinks so that exactly T
    // steps remain with at least one unmask each.
    static UnmaskSchedule uniform(int masked_total, int total_steps) {
        if (total_steps < 1 || masked_total < total_steps) {
            throw config_error("UnmaskSchedule: need 1 <= T <= masked_total");
        }
        UnmaskSchedule s;
        s.total_steps = total_steps;
        const int per_step = (masked_total + total_steps - 1) / total_steps;
        int remaining = masked_total;
        for (int t = 0; t < total_steps; ++t) {
            const int steps_left_after = total_steps - t - 1;
            const int n = std::min(per_step, remaining - steps_left_after);
            s.counts.push_back(n);
            remaining -= n;
        }
        return s;
    }
};

// Contiguous partition of the generation region into fixed-size blocks;
// the last block may be short.
struct BlockSchedule {
    int block_size = 256;
    int prompt_len = 0;
    std::vector<int> boundaries;  // absolute start index of each block
    int gen_end = 0;              // prompt_len + gen_len
    int current_block = 0;

    int block_start(int b) const { return boundaries[b]; }
    int block_end(int b) const {
        return b + 1 < static_cast<int>(boundaries.size()) ? boundaries[b + 1] : gen_end;
    }
    int block_count() const { return static_cast<int>(boundaries.size()); }
};

inline BlockSchedule partition_blocks(int prompt_len, int gen_len, int block_size) {
    if (block_size < 1) throw config_error("partition_blocks: block_size must be >= 1");
    if (gen_len < 1) throw input_error("partition_blocks: gen_len must be >= 1");
    BlockSchedule s;
    s.block_size = block_size;
    s.prompt_len = prompt_len;
    s.gen_end = prompt_len + gen_len;
    for (int start = prompt_len; start < s.gen_end; start += block_size) {
        s.boundaries.push_back(start);
    }
    return s;
}

}  // namespace dlmfp
