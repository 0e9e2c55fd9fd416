#include "bionic/rng.hpp"

#include <cmath>

namespace bionic {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t splitmix64(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed),
      stream_id_(stream_id),
      key_(splitmix64(splitmix64(seed) ^ splitmix64(stream_id * 0xD6E8FEB86659FD93ull))) {}

std::uint64_t RngStream::mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(a) ^ splitmix64(b * 0xA3B195354A39B70Dull));
}

RngStream RngStream::substream(std::uint64_t a, std::uint64_t b) const {
    return RngStream(key_, mix(a, b));
}

std::uint64_t RngStream::next_u64() {
    return splitmix64(key_ + kGolden * counter_++);
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double RngStream::normal(double mean, double stddev) {
    // Box-Muller; u1 in (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    // Lemire multiply-shift; bias is < n / 2^64 and irrelevant here.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

bool RngStream::bernoulli(double p) {
    return uniform() < p;
}

}  // namespace bionic
