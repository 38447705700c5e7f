#pragma once

#include <cmath>
#include <cstdint>

namespace bnn {

/// Counter-based random number generator.
///
/// Every value is a pure function of (seed, stream, counter), so draws can be
/// generated in any order or in parallel and still match the sequential
/// sequence exactly. Distinct stream ids yield independent sequences from the
/// same seed. The core is the splitmix64 finalizer over a keyed counter; all
/// integer arithmetic, so the u64 sequence is identical on every platform.
class Rng {
public:
    Rng() : Rng(0, 0) {}
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(mix64(mix64(seed + kGamma) ^
                     (stream * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL))),
          counter_(0) {}

    std::uint64_t seed_key() const { return key_; }

    /// u64 at an explicit counter position (order-independent access).
    std::uint64_t word_at(std::uint64_t i) const { return mix64(key_ + i * kGamma); }

    /// Uniform double in [0,1) at counter position i.
    double uniform_at(std::uint64_t i) const {
        return static_cast<double>(word_at(i) >> 11) * 0x1.0p-53;
    }

    /// Standard normal draw at counter position i (Box-Muller over the
    /// counter pair 2i, 2i+1; u1 is shifted into (0,1] so log stays finite).
    double normal_at(std::uint64_t i) const {
        const double u1 =
            (static_cast<double>(word_at(2 * i) >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = uniform_at(2 * i + 1);
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Sequential interface; advances the internal counter.
    std::uint64_t next_word() { return word_at(counter_++); }
    double next_uniform() { return uniform_at(counter_++); }
    double next_normal() {
        const double z = normal_at(counter_);
        ++counter_;
        return z;
    }

    /// Unbiased-enough integer in [0, n) via Lemire multiply-shift.
    std::uint64_t next_below(std::uint64_t n) {
        const unsigned __int128 m =
            static_cast<unsigned __int128>(next_word()) * n;
        return static_cast<std::uint64_t>(m >> 64);
    }

    static std::uint64_t mix64(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

    std::uint64_t key_;
    std::uint64_t counter_;
};

/// Derive a child seed from (seed, salt); used to give each sample or
/// subsystem its own reproducible seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    return Rng::mix64(seed ^ Rng::mix64(salt + 0x9e3779b97f4a7c15ULL));
}

/// Named stream ids: one root seed fans out into per-subsystem streams.
namespace streams {
constexpr std::uint64_t data = 1;
constexpr std::uint64_t init = 2;
constexpr std::uint64_t shuffle = 3;
constexpr std::uint64_t bayes = 4;
constexpr std::uint64_t attribution = 5;
constexpr std::uint64_t data_meta = 6;

/// Stream id for element `index` of a named family.
constexpr std::uint64_t member(std::uint64_t family, std::uint64_t index) {
    return (family << 32) | index;
}
}  // namespace streams

}  // namespace bnn
