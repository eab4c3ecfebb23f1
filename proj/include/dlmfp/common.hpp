#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dlmfp {

// Error taxonomy shared by all modules.
//
// config_error   -- bad dimensions, out-of-range knobs, invalid setups
// input_error    -- malformed runtime data (tokens out of range, bad rows)
// contract_error -- an internal precondition between modules was violated
// format_error   -- weight-file / report parsing problems

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct input_error : std::runtime_error {
    explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct format_error : std::runtime_error {
    explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64 finalizer. Fixed-width integer math only, so the stream is
// identical on every platform.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Counter-based generator: value i of stream `seed` is a pure function of
// (seed, i). No internal state beyond the counter.
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64() {
        return splitmix64(seed_ ^ (counter_++ * 0x9E3779B97F4A7C15ULL));
    }

    // [0, 1)
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // (-a, a)
    float next_uniform(double a) {
        return static_cast<float>(a * (2.0 * next_unit() - 1.0));
    }

  private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

// Stateless draw in [0,1) keyed on an arbitrary tuple of integers.
inline double hash_unit(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                        std::uint64_t c) {
    std::uint64_t x = splitmix64(seed);
    x = splitmix64(x ^ a);
    x = splitmix64(x ^ b);
    x = splitmix64(x ^ c);
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001B3ULL;

inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

}  // namespace dlmfp
