#include "perf_lmdp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace plmdp {

namespace {

constexpr uint32_t kM0 = 0xD2511F53u;
constexpr uint32_t kM1 = 0xCD9E8D57u;
constexpr uint32_t kW0 = 0x9E3779B9u;
constexpr uint32_t kW1 = 0xBB67AE85u;

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
    uint64_t p = static_cast<uint64_t>(a) * b;
    hi = static_cast<uint32_t>(p >> 32);
    lo = static_cast<uint32_t>(p);
}

}  // namespace

std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> ctr, std::array<uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kW0;
            key[1] += kW1;
        }
        uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kM0, ctr[0], hi0, lo0);
        mulhilo(kM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

CounterRng::CounterRng(uint64_t seed, RngModule module, uint32_t round)
    : seed_(seed), module_(static_cast<uint32_t>(module)), round_(round) {}

uint64_t CounterRng::next_u64() {
    uint64_t k = draw_++;
    auto out = philox4x32({static_cast<uint32_t>(k), static_cast<uint32_t>(k >> 32), round_, module_},
                          {static_cast<uint32_t>(seed_), static_cast<uint32_t>(seed_ >> 32)});
    return (static_cast<uint64_t>(out[0]) << 32) | out[1];
}

double CounterRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

int CounterRng::uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int needs n > 0");
    int k = static_cast<int>(uniform() * n);
    return std::min(k, n - 1);
}

double CounterRng::normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int CounterRng::discrete(const std::vector<double>& cumulative) {
    double total = cumulative.back();
    double u = uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    int idx = static_cast<int>(it - cumulative.begin());
    int last = static_cast<int>(cumulative.size()) - 1;
    idx = std::min(idx, last);
    // skip zero-weight tail entries reached through rounding
    while (idx > 0 && cumulative[idx] == cumulative[idx - 1]) --idx;
    return idx;
}

uint64_t CounterRng::digest() const {
    auto out = philox4x32({static_cast<uint32_t>(draw_), static_cast<uint32_t>(draw_ >> 32), round_, module_},
                          {static_cast<uint32_t>(seed_ ^ 0xA5A5A5A5u), static_cast<uint32_t>(seed_ >> 32)});
    return (static_cast<uint64_t>(out[2]) << 32) | out[3];
}

std::vector<double> cumulative_weights(const double* w, int n) {
    std::vector<double> c(n);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc += std::max(w[i], 0.0);
        c[i] = acc;
    }
    return c;
}

}  // namespace plmdp
