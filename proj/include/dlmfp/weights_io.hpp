#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dlmfp/common.hpp"
#include "dlmfp/model.hpp"

namespace dlmfp {

// Weight file, little-endian:
//   magic "DLMW" | u32 version=1 | u32 d,h,n_layers,d_ff,vocab,l_max,mode
//   tensors in declaration order, raw float32 row-major
//   u64 FNV-1a checksum over the tensor payload bytes

constexpr char kWeightsMagic[4] = {'D', 'L', 'M', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;

inline std::uint64_t weights_checksum(const Weights& w) {
    std::uint64_t h = kFnvOffset;
    w.for_each_tensor([&](const std::vector<float>& t) {
        h = fnv1a(t.data(), t.size() * sizeof(float), h);
    });
    return h;
}

inline void save_weights(const ModelSpec& spec, const Weights& w, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error("save_weights: cannot open " + path);
    out.write(kWeightsMagic, 4);
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    put_u32(kWeightsVersion);
    put_u32(static_cast<std::uint32_t>(spec.d));
    put_u32(static_cast<std::uint32_t>(spec.heads));
    put_u32(static_cast<std::uint32_t>(spec.n_layers));
    put_u32(static_cast<std::uint32_t>(spec.d_ff));
    put_u32(static_cast<std::uint32_t>(spec.vocab));
    put_u32(static_cast<std::uint32_t>(spec.l_max));
    put_u32(static_cast<std::uint32_t>(spec.mode));
    w.for_each_tensor([&](const std::vector<float>& t) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
    });
    const std::uint64_t sum = weights_checksum(w);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(sum >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
    if (!out) throw format_error("save_weights: write failed for " + path);
}

inline std::pair<ModelSpec, Weights> load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("load_weights: cannot open " + path);
    std::size_t offset = 0;
    auto fail = [&](const std::string& what) {
        throw format_error("load_weights: " + what + " at offset " + std::to_string(offset));
    };
    auto read_bytes = [&](void* dst, std::size_t n) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n)) fail("truncated file");
        offset += n;
    };
    char magic[4];
    read_bytes(magic, 4);
    if (std::memcmp(magic, kWeightsMagic, 4) != 0) {
        offset = 0;
        fail("bad magic");
    }
    auto get_u32 = [&]() {
        unsigned char b[4];
        read_bytes(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    const std::uint32_t version = get_u32();
    if (version != kWeightsVersion) fail("unsupported version " + std::to_string(version));
    ModelSpec spec;
    spec.d = static_cast<int>(get_u32());
    spec.heads = static_cast<int>(get_u32());
    spec.n_layers = static_cast<int>(get_u32());
    spec.d_ff = static_cast<int>(get_u32());
    spec.vocab = static_cast<int>(get_u32());
    spec.l_max = static_cast<int>(get_u32());
    const std::uint32_t mode = get_u32();
    if (mode > 1) fail("bad attention mode");
    spec.mode = static_cast<AttentionMode>(mode);
    try {
        spec.validate();
    } catch (const config_error& e) {
        fail(std::string("invalid shape header: ") + e.what());
    }

    Weights w;
    auto read_tensor = [&](Tensor2D& t, int r, int c) {
        t = Tensor2D(r, c);
        read_bytes(t.data.data(), t.data.size() * sizeof(float));
    };
    auto read_vec = [&](std::vector<float>& v, int n) {
        v.assign(n, 0.0f);
        read_bytes(v.data(), v.size() * sizeof(float));
    };
    read_tensor(w.token_embedding, spec.vocab, spec.d);
    read_tensor(w.pos_embedding, spec.l_max, spec.d);
    w.layers.resize(spec.n_layers);
    for (auto& l : w.layers) {
        read_tensor(l.wq, spec.d, spec.d);
        read_tensor(l.wk, spec.d, spec.d);
        read_tensor(l.wv, spec.d, spec.d);
        read_tensor(l.wo, spec.d, spec.d);
        read_tensor(l.w1, spec.d, spec.d_ff);
        read_tensor(l.w2, spec.d_ff, spec.d);
        read_vec(l.attn_gain, spec.d);
        read_vec(l.ffn_gain, spec.d);
    }
    read_tensor(w.head, spec.d, spec.vocab);

    unsigned char b[8];
    read_bytes(b, 8);
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    if (stored != weights_checksum(w)) fail("checksum mismatch");
    return {spec, w};
}

}  // namespace dlmfp
