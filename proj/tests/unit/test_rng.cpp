#include <doctest.h>

#include <set>

#include "perf_lmdp/rng.hpp"

using namespace plmdp;

TEST_CASE("philox4x32-10 known-answer vectors") {
    auto a = philox4x32({0, 0, 0, 0}, {0, 0});
    CHECK(a == std::array<uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    auto b = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    CHECK(b == std::array<uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    auto c = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    CHECK(c == std::array<uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams are pure functions of their key") {
    CounterRng a(42, RngModule::sampling, 3), b(42, RngModule::sampling, 3);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CounterRng c(42, RngModule::sampling, 4), d(42, RngModule::primal_dual, 3), e(43, RngModule::sampling, 3);
    CounterRng ref(42, RngModule::sampling, 3);
    uint64_t first = ref.next_u64();
    CHECK(c.next_u64() != first);
    CHECK(d.next_u64() != first);
    CHECK(e.next_u64() != first);
}

TEST_CASE("uniform draws are in range and roughly uniform") {
    CounterRng rng(1, RngModule::probes);
    double sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.005);
    std::vector<double> cum{0.0, 1.0, 1.0, 3.0};
    std::set<int> seen;
    for (int i = 0; i < 1000; ++i) seen.insert(rng.discrete(cum));
    CHECK(seen == std::set<int>{1, 3});
}
