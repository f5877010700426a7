#pragma once

// Counter-based random numbers. A stream is identified by (seed, index,
// purpose); any two streams with distinct identifiers are independent, and a
// stream can be replayed by constructing it again from the same identifier.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace adaptix {

/// Philox4x32-10 block function (Salmon et al., SC'11).
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static constexpr Counter encrypt(Counter ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// SplitMix64 finalizer, used to spread user seeds over the key space.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Purpose tags keep streams drawn for different roles apart even when they
/// share (seed, index).
enum class StreamPurpose : std::uint32_t {
    noise = 0,
    comparator_noise = 1,
    validation = 2,
    e0_estimate = 3,
    synthetic = 4,
    initial = 5,
};

/// Uniform random bit generator over one Philox substream.
class CounterRng {
public:
    using result_type = std::uint64_t;

    CounterRng() : CounterRng(0, 0, StreamPurpose::noise) {}

    CounterRng(std::uint64_t seed, std::uint64_t index, StreamPurpose purpose) {
        const std::uint64_t k = mix64(seed);
        key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
        const std::uint64_t s = mix64(index ^ (std::uint64_t{static_cast<std::uint32_t>(purpose)} << 56));
        stream_lo_ = static_cast<std::uint32_t>(s);
        stream_hi_ = static_cast<std::uint32_t>(s >> 32);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        if (lane_ == 2) {
            const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_),
                                          static_cast<std::uint32_t>(block_ >> 32), stream_lo_,
                                          stream_hi_};
            buffer_ = Philox4x32::encrypt(ctr, key_);
            ++block_;
            lane_ = 0;
        }
        const result_type out = (result_type{buffer_[2 * lane_ + 1]} << 32) | buffer_[2 * lane_];
        ++lane_;
        return out;
    }

    /// Uniform on the open interval (0, 1), 53-bit resolution.
    double uniform01() noexcept {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal() noexcept {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        const double u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    /// +1 or -1 with equal probability.
    double sign() noexcept { return ((*this)() >> 63) ? 1.0 : -1.0; }

private:
    Philox4x32::Key key_{};
    std::uint32_t stream_lo_ = 0;
    std::uint32_t stream_hi_ = 0;
    std::uint64_t block_ = 0;
    Philox4x32::Counter buffer_{};
    int lane_ = 2;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace adaptix
