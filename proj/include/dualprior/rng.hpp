#pragma once

#include <cstdint>
#include <span>

namespace dualprior {

/// splitmix64 finalizer. Used for seeding and for deriving sub-stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derive an independent stream seed from a base seed and a stream index.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// xoshiro256** with splitmix64 state expansion.
///
/// All distributions below are defined in terms of next_u64() so that a seed
/// produces the same stream on every platform and in any language:
///   uniform()   = (next_u64() >> 11) * 2^-53              in [0, 1)
///   below(n)    = floor(uniform() * n)
///   normal()    = Box-Muller on two uniforms, cosine branch only
///                 sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
class Rng {
   public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    double uniform();
    double uniform(double lo, double hi);
    std::uint64_t below(std::uint64_t n);
    double normal();
    void fill_normal(std::span<double> out);

   private:
    std::uint64_t s_[4];
};

}  // namespace dualprior
