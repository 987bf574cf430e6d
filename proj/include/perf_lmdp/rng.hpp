#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace plmdp {

/// Philox4x32-10 block function: 128-bit counter, 64-bit key.
std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> ctr, std::array<uint32_t, 2> key);

/// Substream identifiers; each (seed, module, round) triple is an independent stream.
enum class RngModule : uint32_t {
    sampling = 1,
    primal_dual = 2,
    selection = 3,
    instances = 4,
    probes = 5,
    reward_noise = 6,
};

/// Counter-based stream keyed by (seed, module, round, draw-index).
/// Draw k of a stream is a pure function of those four values.
class CounterRng {
public:
    CounterRng(uint64_t seed, RngModule module, uint32_t round = 0);

    uint64_t next_u64();
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    int uniform_int(int n);
    double normal();
    /// Index drawn from unnormalized nonnegative weights by inverse CDF.
    int discrete(const std::vector<double>& cumulative);

    uint64_t draws() const { return draw_; }
    /// Stable digest of the stream position for trace records.
    uint64_t digest() const;

private:
    uint64_t seed_;
    uint32_t module_;
    uint32_t round_;
    uint64_t draw_ = 0;
};

/// Cumulative sums for CounterRng::discrete.
std::vector<double> cumulative_weights(const double* w, int n);

}  // namespace plmdp
