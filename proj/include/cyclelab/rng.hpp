#pragma once

#include <cmath>
#include <cstdint>

namespace cyclelab {

/* SplitMix64 finalizer. */
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/*
 * Counter-based stream: output k = mix64(key + k*golden). Streams for
 * different (seed, index) pairs are independent of scheduling, so parallel
 * runs are bit-reproducible. Copyable; a copy replays the same sequence.
 */
class SplitStream {
  public:
    SplitStream(std::uint64_t seed, std::uint64_t index)
        : key_(mix64(seed ^ mix64(index * 0x9e3779b97f4a7c15ULL + 0x6a09e667f3bcc909ULL))),
          ctr_(0) {}

    std::uint64_t next_u64() { return mix64(key_ + ctr_++ * 0x9e3779b97f4a7c15ULL); }

    /* uniform on [0,1), 53-bit */
    double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

    /* uniform on (0,1], safe under log() */
    double uniform_open01() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

    std::uint64_t counter() const { return ctr_; }

  private:
    std::uint64_t key_;
    std::uint64_t ctr_;
};

}  // namespace cyclelab
