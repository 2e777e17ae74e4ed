#pragma once

#include <cstdint>
#include <string>

#include "tips/encoding.hpp"

namespace tips::rng {

// SHA-256 counter generator: the output stream is block_0 || block_1 || ...
// where block_i = SHA256(seed || big-endian-64(i)). Used for reproducible
// keygen in tests and as the backing stream of the process-wide generator
// when a deterministic seed is installed.
class CounterDrbg {
public:
    explicit CounterDrbg(Bytes seed) : seed_(std::move(seed)) {}

    void fill(std::uint8_t* buf, std::size_t len);
    Bytes bytes(std::size_t len) {
        Bytes out(len);
        fill(out.data(), len);
        return out;
    }

private:
    Bytes seed_;
    std::uint64_t block_index_ = 0;
    std::uint8_t block_[32];
    std::size_t block_used_ = 32;  // nothing buffered yet
};

// Fill buf with random octets. By default this draws from the OS CSPRNG. When
// a deterministic seed is installed (tests and the scripted demo only; there
// is no way to do this from the command line) it draws from a CounterDrbg
// instead, so every run with the same seed produces the same stream.
void fill(std::uint8_t* buf, std::size_t len);

Bytes bytes(std::size_t len);

// Uniform integer in [0, bound) via rejection sampling; bound must be > 0.
std::uint64_t uniform(std::uint64_t bound);

// Switch the process-wide generator to the deterministic stream derived from
// `seed`. Intended for tests and the demo transcript; production entry points
// never call this.
void seed_deterministic(const Bytes& seed);

// Switch back to the OS CSPRNG.
void use_secure();

bool is_deterministic();

}  // namespace tips::rng
