#include "tips/rng.hpp"

#include <openssl/rand.h>
#include <openssl/sha.h>

#include <algorithm>
#include <cstring>
#include <mutex>
#include <optional>

#include "tips/errors.hpp"

namespace tips::rng {

void CounterDrbg::fill(std::uint8_t* buf, std::size_t len) {
    std::size_t off = 0;
    while (off < len) {
        if (block_used_ == 32) {
            // block = SHA256(seed || be64(index))
            Bytes msg(seed_);
            for (int i = 0; i < 8; ++i) {
                msg.push_back(static_cast<std::uint8_t>(block_index_ >> (56 - 8 * i)));
            }
            SHA256(msg.data(), msg.size(), block_);
            ++block_index_;
            block_used_ = 0;
        }
        std::size_t take = std::min<std::size_t>(32 - block_used_, len - off);
        std::memcpy(buf + off, block_ + block_used_, take);
        block_used_ += take;
        off += take;
    }
}

namespace {

std::mutex g_mu;
std::optional<CounterDrbg> g_drbg;

}  // namespace

void fill(std::uint8_t* buf, std::size_t len) {
    std::lock_guard<std::mutex> lock(g_mu);
    if (g_drbg) {
        g_drbg->fill(buf, len);
        return;
    }
    if (len > 0 && RAND_bytes(buf, static_cast<int>(len)) != 1) {
        fail(ErrorCode::EntropyFailure, "system entropy source unavailable");
    }
}

Bytes bytes(std::size_t len) {
    Bytes out(len);
    fill(out.data(), len);
    return out;
}

std::uint64_t uniform(std::uint64_t bound) {
    if (bound == 0) fail(ErrorCode::MalformedInput, "uniform bound must be positive");
    // Rejection sampling over the largest multiple of bound below 2^64.
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    for (;;) {
        std::uint64_t v = 0;
        std::uint8_t raw[8];
        fill(raw, sizeof(raw));
        for (int i = 0; i < 8; ++i) v = (v << 8) | raw[i];
        if (v < limit) return v % bound;
    }
}

void seed_deterministic(const Bytes& seed) {
    std::lock_guard<std::mutex> lock(g_mu);
    g_drbg.emplace(seed);
}

void use_secure() {
    std::lock_guard<std::mutex> lock(g_mu);
    g_drbg.reset();
}

bool is_deterministic() {
    std::lock_guard<std::mutex> lock(g_mu);
    return g_drbg.has_value();
}

}  // namespace tips::rng
