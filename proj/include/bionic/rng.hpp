#pragma once

#include <cstdint>

namespace bionic {

// Stream ids for the named generators used across the pipeline. Keeping them
// fixed makes every draw a pure function of (seed, stream, index).
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kAugment = 3;
inline constexpr std::uint64_t kNoise = 4;
inline constexpr std::uint64_t kSynthetic = 5;
inline constexpr std::uint64_t kSubset = 6;
}  // namespace streams

// Counter-based generator (splitmix64 output function over a mixed key).
// Draw i of stream (seed, stream_id) depends only on (seed, stream_id, i),
// never on thread scheduling or call sites.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t next_u64();
    double uniform();                            // [0, 1)
    double uniform(double lo, double hi);
    double normal(double mean, double stddev);   // consumes two raw draws
    std::uint64_t uniform_int(std::uint64_t n);  // [0, n)
    bool bernoulli(double p);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t draw_index() const { return counter_; }

    // Derived independent stream, e.g. per-(epoch, sample) substreams.
    RngStream substream(std::uint64_t a, std::uint64_t b = 0) const;

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b);

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace bionic
