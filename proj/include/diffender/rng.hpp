#pragma once

#include <cstdint>
#include <random>

namespace diffender {

/// Seeded random stream. Identical (seed, stream id) pairs reproduce
/// identical draws on every platform: normals come from our own
/// Box-Muller on top of mt19937_64 rather than std::normal_distribution.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    /// Independent child stream, keyed by (parent seed, parent id, key).
    RngStream substream(std::uint64_t key) const;

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0,1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi);
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// splitmix64 finalizer, used to derive stream seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace diffender
