#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace balancedit {

// splitmix64 finalizer; used to derive independent stream seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t x);

template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t base, Tags... tags) {
    std::uint64_t s = mix_seed(base);
    ((s = mix_seed(s ^ static_cast<std::uint64_t>(tags))), ...);
    return s;
}

// std::mt19937_64 output is fixed by the standard, but the std:: distributions are
// not, so sampling is done here to keep generated data identical across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    double uniform();  // [0, 1)
    std::size_t uniform_index(std::size_t n);
    double normal();

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[uniform_index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace balancedit
