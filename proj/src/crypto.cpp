#include "tips/crypto.hpp"

#include <openssl/bio.h>
#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/param_build.h>
#include <openssl/pem.h>
#include <openssl/rsa.h>
#include <openssl/sha.h>
#include <openssl/x509.h>

#include <cstring>
#include <functional>
#include <utility>

#include "tips/errors.hpp"
#include "tips/rng.hpp"

namespace tips::crypto {

namespace {

constexpr unsigned long kPublicExponent = 65537;
constexpr int kPrimeBytes = 128;  // 1024-bit factors for RSA-2048
constexpr unsigned long kSearchWindow = 100000;
constexpr int kMillerRabinRounds = 12;  // plus a fixed base-2 round

struct BnFree {
    void operator()(BIGNUM* b) const { BN_free(b); }
};
using BnPtr = std::unique_ptr<BIGNUM, BnFree>;

struct BnCtxFree {
    void operator()(BN_CTX* c) const { BN_CTX_free(c); }
};
using BnCtxPtr = std::unique_ptr<BN_CTX, BnCtxFree>;

struct PkeyCtxFree {
    void operator()(EVP_PKEY_CTX* c) const { EVP_PKEY_CTX_free(c); }
};
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxFree>;

struct MdCtxFree {
    void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxFree>;

struct CipherCtxFree {
    void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};
using CipherCtxPtr = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxFree>;

std::shared_ptr<EVP_PKEY> share_pkey(EVP_PKEY* p) {
    return std::shared_ptr<EVP_PKEY>(p, EVP_PKEY_free);
}

using RandFn = std::function<void(std::uint8_t*, std::size_t)>;

// Odd primes below 2^16, for trial division during the prime search.
const std::vector<std::uint32_t>& small_primes() {
    static const std::vector<std::uint32_t> primes = [] {
        std::vector<bool> composite(65536, false);
        std::vector<std::uint32_t> out;
        for (std::uint32_t i = 3; i < 65536; i += 2) {
            if (composite[i]) continue;
            out.push_back(i);
            for (std::uint64_t j = static_cast<std::uint64_t>(i) * i; j < 65536; j += 2 * i) {
                composite[j] = true;
            }
        }
        return out;
    }();
    return primes;
}

bool miller_rabin_round(const BIGNUM* n, const BIGNUM* n_minus_1, const BIGNUM* d, int s,
                        const BIGNUM* base, BN_CTX* ctx) {
    BnPtr x(BN_new());
    if (BN_mod_exp(x.get(), base, d, n, ctx) != 1) {
        fail(ErrorCode::EntropyFailure, "bignum arithmetic failed");
    }
    if (BN_is_one(x.get()) || BN_cmp(x.get(), n_minus_1) == 0) return true;
    for (int i = 1; i < s; ++i) {
        if (BN_mod_sqr(x.get(), x.get(), n, ctx) != 1) {
            fail(ErrorCode::EntropyFailure, "bignum arithmetic failed");
        }
        if (BN_cmp(x.get(), n_minus_1) == 0) return true;
    }
    return false;
}

bool is_probable_prime(const BIGNUM* n, const RandFn& rnd, BN_CTX* ctx) {
    BnPtr n_minus_1(BN_dup(n));
    BN_sub_word(n_minus_1.get(), 1);
    // n-1 = 2^s * d with d odd
    int s = 0;
    BnPtr d(BN_dup(n_minus_1.get()));
    while (!BN_is_odd(d.get())) {
        BN_rshift1(d.get(), d.get());
        ++s;
    }
    BnPtr base(BN_new());
    BN_set_word(base.get(), 2);
    if (!miller_rabin_round(n, n_minus_1.get(), d.get(), s, base.get(), ctx)) return false;
    for (int round = 0; round < kMillerRabinRounds; ++round) {
        std::uint8_t raw[8];
        rnd(raw, sizeof(raw));
        std::uint64_t v = 3;
        for (std::size_t i = 0; i < sizeof(raw); ++i) v = (v << 8) | raw[i];
        if (v < 3) v = 3;
        BN_set_word(base.get(), v);
        if (!miller_rabin_round(n, n_minus_1.get(), d.get(), s, base.get(), ctx)) return false;
    }
    return true;
}

// 1024-bit probable prime p with gcd(e, p-1) = 1. Incremental search: pick a
// random odd base with the top two bits set (so p*q always reaches 2048
// bits), keep trial-division remainders for the whole window, and only run
// Miller-Rabin on survivors.
BnPtr generate_prime(const RandFn& rnd, BN_CTX* ctx) {
    const auto& primes = small_primes();
    std::vector<std::uint32_t> rems(primes.size());
    for (;;) {
        std::uint8_t buf[kPrimeBytes];
        rnd(buf, sizeof(buf));
        buf[0] |= 0xC0;
        buf[kPrimeBytes - 1] |= 0x01;
        BnPtr base(BN_bin2bn(buf, sizeof(buf), nullptr));
        if (!base) fail(ErrorCode::EntropyFailure, "bignum allocation failed");
        for (std::size_t j = 0; j < primes.size(); ++j) {
            rems[j] = static_cast<std::uint32_t>(BN_mod_word(base.get(), primes[j]));
        }
        std::uint32_t rem_e = static_cast<std::uint32_t>(BN_mod_word(base.get(), kPublicExponent));
        for (unsigned long delta = 0; delta < kSearchWindow; delta += 2) {
            bool divisible = false;
            for (std::size_t j = 0; j < primes.size(); ++j) {
                if ((rems[j] + delta) % primes[j] == 0) {
                    divisible = true;
                    break;
                }
            }
            if (divisible) continue;
            // gcd(e, p-1) must be 1: since e is prime it suffices that
            // p mod e != 1.
            if ((rem_e + delta) % kPublicExponent == 1) continue;
            BnPtr cand(BN_dup(base.get()));
            BN_add_word(cand.get(), delta);
            if (is_probable_prime(cand.get(), rnd, ctx)) return cand;
        }
        // Window exhausted without a prime (rare); draw a fresh base.
    }
}

std::shared_ptr<EVP_PKEY> assemble_rsa_key(BnPtr p, BnPtr q, BN_CTX* ctx) {
    if (BN_cmp(p.get(), q.get()) < 0) std::swap(p, q);

    BnPtr n(BN_new()), e(BN_new()), d(BN_new());
    BnPtr p1(BN_new()), q1(BN_new()), g(BN_new()), lcm(BN_new());
    BnPtr dp(BN_new()), dq(BN_new()), qinv(BN_new());
    BN_set_word(e.get(), kPublicExponent);
    if (BN_mul(n.get(), p.get(), q.get(), ctx) != 1 ||
        BN_sub(p1.get(), p.get(), BN_value_one()) != 1 ||
        BN_sub(q1.get(), q.get(), BN_value_one()) != 1 ||
        BN_gcd(g.get(), p1.get(), q1.get(), ctx) != 1 ||
        BN_mul(lcm.get(), p1.get(), q1.get(), ctx) != 1 ||
        BN_div(lcm.get(), nullptr, lcm.get(), g.get(), ctx) != 1) {
        fail(ErrorCode::EntropyFailure, "bignum arithmetic failed");
    }
    if (BN_mod_inverse(d.get(), e.get(), lcm.get(), ctx) == nullptr ||
        BN_mod(dp.get(), d.get(), p1.get(), ctx) != 1 ||
        BN_mod(dq.get(), d.get(), q1.get(), ctx) != 1 ||
        BN_mod_inverse(qinv.get(), q.get(), p.get(), ctx) == nullptr) {
        fail(ErrorCode::EntropyFailure, "rsa key assembly failed");
    }

    OSSL_PARAM_BLD* bld = OSSL_PARAM_BLD_new();
    if (!bld) fail(ErrorCode::EntropyFailure, "parameter builder allocation failed");
    OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_N, n.get());
    OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_E, e.get());
    OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_D, d.get());
    OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_FACTOR1, p.get());
    OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_FACTOR2, q.get());
    OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_EXPONENT1, dp.get());
    OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_EXPONENT2, dq.get());
    OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_RSA_COEFFICIENT1, qinv.get());
    OSSL_PARAM* params = OSSL_PARAM_BLD_to_param(bld);
    OSSL_PARAM_BLD_free(bld);
    if (!params) fail(ErrorCode::EntropyFailure, "parameter marshalling failed");

    PkeyCtxPtr pctx(EVP_PKEY_CTX_new_from_name(nullptr, "RSA", nullptr));
    EVP_PKEY* pkey = nullptr;
    int ok = pctx && EVP_PKEY_fromdata_init(pctx.get()) == 1 &&
             EVP_PKEY_fromdata(pctx.get(), &pkey, EVP_PKEY_KEYPAIR, params) == 1;
    OSSL_PARAM_free(params);
    if (!ok || !pkey) fail(ErrorCode::EntropyFailure, "rsa key construction failed");
    return share_pkey(pkey);
}

Bytes spki_der(EVP_PKEY* pkey) {
    int len = i2d_PUBKEY(pkey, nullptr);
    if (len <= 0) fail(ErrorCode::MalformedKey, "public key encoding failed");
    Bytes der(static_cast<std::size_t>(len));
    std::uint8_t* p = der.data();
    if (i2d_PUBKEY(pkey, &p) != len) fail(ErrorCode::MalformedKey, "public key encoding failed");
    return der;
}

Digest digest_of(const std::uint8_t* data, std::size_t len) {
    Digest d;
    SHA256(data, len, d.bytes.data());
    return d;
}

std::string armor(const std::string& label, const Bytes& der) {
    std::string out = "-----BEGIN " + label + "-----\n";
    std::string b64 = base64_encode(der);
    for (std::size_t i = 0; i < b64.size(); i += 64) {
        out += b64.substr(i, 64);
        out += '\n';
    }
    out += "-----END " + label + "-----\n";
    return out;
}

Bytes dearmor(const std::string& label, std::string_view pem) {
    const std::string begin = "-----BEGIN " + label + "-----";
    const std::string end = "-----END " + label + "-----";
    std::size_t b = pem.find(begin);
    std::size_t e = pem.find(end);
    if (b == std::string_view::npos || e == std::string_view::npos || e < b) {
        fail(ErrorCode::MalformedKey, "missing or mismatched pem armor for " + label);
    }
    std::string b64;
    for (char c : pem.substr(b + begin.size(), e - b - begin.size())) {
        if (c == '\n' || c == '\r' || c == ' ' || c == '\t') continue;
        b64.push_back(c);
    }
    try {
        return base64_decode(b64);
    } catch (const TipsError&) {
        fail(ErrorCode::MalformedKey, "pem body is not valid base64");
    }
}

// MGF1-SHA256 per RFC 8017 appendix B.2.1.
Bytes mgf1_sha256(const std::uint8_t* seed, std::size_t seed_len, std::size_t out_len) {
    Bytes out;
    out.reserve(out_len + kDigestLen);
    Bytes msg(seed_len + 4);
    std::memcpy(msg.data(), seed, seed_len);
    std::uint32_t counter = 0;
    while (out.size() < out_len) {
        msg[seed_len] = static_cast<std::uint8_t>(counter >> 24);
        msg[seed_len + 1] = static_cast<std::uint8_t>(counter >> 16);
        msg[seed_len + 2] = static_cast<std::uint8_t>(counter >> 8);
        msg[seed_len + 3] = static_cast<std::uint8_t>(counter);
        std::uint8_t block[kDigestLen];
        SHA256(msg.data(), msg.size(), block);
        out.insert(out.end(), block, block + kDigestLen);
        ++counter;
    }
    out.resize(out_len);
    return out;
}

KeyPair build_keypair(const RandFn& rnd) {
    BnCtxPtr ctx(BN_CTX_new());
    if (!ctx) fail(ErrorCode::EntropyFailure, "bignum context allocation failed");
    BnPtr p = generate_prime(rnd, ctx.get());
    BnPtr q = generate_prime(rnd, ctx.get());
    while (BN_cmp(p.get(), q.get()) == 0) {
        q = generate_prime(rnd, ctx.get());
    }
    std::shared_ptr<EVP_PKEY> pkey = assemble_rsa_key(std::move(p), std::move(q), ctx.get());

    KeyPair kp;
    kp.private_key = wrap_private_handle(pkey);
    kp.public_key = kp.private_key.derive_public();
    kp.key_id = kp.public_key.key_id();
    return kp;
}

}  // namespace

PrivateKey wrap_private_handle(std::shared_ptr<EVP_PKEY> h) {
    PrivateKey k;
    k.handle_ = std::move(h);
    return k;
}

PublicKey wrap_public_handle(std::shared_ptr<EVP_PKEY> h) {
    PublicKey k;
    k.handle_ = std::move(h);
    return k;
}

// ------------------------------------------------------------------ Digest --

Digest Digest::from_hex(std::string_view hex) {
    Bytes raw = hex_decode(hex);
    if (raw.size() != kDigestLen) fail(ErrorCode::MalformedInput, "digest must be 32 octets");
    Digest d;
    std::memcpy(d.bytes.data(), raw.data(), kDigestLen);
    return d;
}

SessionKey::~SessionKey() {
    if (!bytes.empty()) OPENSSL_cleanse(bytes.data(), bytes.size());
}

// -------------------------------------------------------------------- JSON --

Json Ciphertext::to_json() const {
    return Json{{"nonce", base64_encode(Bytes(nonce.begin(), nonce.end()))},
                {"body", base64_encode(body)},
                {"tag", base64_encode(Bytes(auth_tag.begin(), auth_tag.end()))}};
}

Ciphertext Ciphertext::from_json(const Json& j) {
    Ciphertext c;
    Bytes nonce = base64_decode(j.at("nonce").get<std::string>());
    Bytes tag = base64_decode(j.at("tag").get<std::string>());
    if (nonce.size() != kNonceLen || tag.size() != kTagLen) {
        fail(ErrorCode::MalformedInput, "ciphertext nonce/tag length invalid");
    }
    std::memcpy(c.nonce.data(), nonce.data(), kNonceLen);
    std::memcpy(c.auth_tag.data(), tag.data(), kTagLen);
    c.body = base64_decode(j.at("body").get<std::string>());
    return c;
}

Json WrappedKey::to_json() const {
    return Json{{"bytes", base64_encode(bytes)}, {"recipient_key_id", recipient_key_id.hex()}};
}

WrappedKey WrappedKey::from_json(const Json& j) {
    WrappedKey w;
    w.bytes = base64_decode(j.at("bytes").get<std::string>());
    w.recipient_key_id = Digest::from_hex(j.at("recipient_key_id").get<std::string>());
    return w;
}

Json Signature::to_json() const {
    return Json{{"bytes", base64_encode(bytes)}, {"signer_key_id", signer_key_id.hex()}};
}

Signature Signature::from_json(const Json& j) {
    Signature s;
    s.bytes = base64_decode(j.at("bytes").get<std::string>());
    s.signer_key_id = Digest::from_hex(j.at("signer_key_id").get<std::string>());
    return s;
}

// -------------------------------------------------------------------- keys --

Bytes PublicKey::der() const {
    if (!handle_) fail(ErrorCode::MalformedKey, "empty public key handle");
    return spki_der(handle_.get());
}

Digest PublicKey::key_id() const {
    Bytes d = der();
    return digest_of(d.data(), d.size());
}

std::string PublicKey::to_pem() const { return armor("TIPS PUBLIC KEY", der()); }

PublicKey PublicKey::from_pem(std::string_view pem) {
    Bytes der = dearmor("TIPS PUBLIC KEY", pem);
    const std::uint8_t* p = der.data();
    EVP_PKEY* pkey = d2i_PUBKEY(nullptr, &p, static_cast<long>(der.size()));
    if (!pkey) fail(ErrorCode::MalformedKey, "public key der parse failed");
    return wrap_public_handle(share_pkey(pkey));
}

PublicKey PrivateKey::derive_public() const {
    if (!handle_) fail(ErrorCode::MalformedKey, "empty private key handle");
    Bytes der = spki_der(handle_.get());
    const std::uint8_t* p = der.data();
    EVP_PKEY* pkey = d2i_PUBKEY(nullptr, &p, static_cast<long>(der.size()));
    if (!pkey) fail(ErrorCode::MalformedKey, "public key derivation failed");
    return wrap_public_handle(share_pkey(pkey));
}

std::string PrivateKey::to_pem() const {
    if (!handle_) fail(ErrorCode::MalformedKey, "empty private key handle");
    BIO* bio = BIO_new(BIO_s_mem());
    if (!bio) fail(ErrorCode::EntropyFailure, "bio allocation failed");
    if (i2d_PKCS8PrivateKey_bio(bio, handle_.get(), nullptr, nullptr, 0, nullptr, nullptr) != 1) {
        BIO_free(bio);
        fail(ErrorCode::MalformedKey, "private key encoding failed");
    }
    char* data = nullptr;
    long len = BIO_get_mem_data(bio, &data);
    Bytes der(data, data + len);
    BIO_free(bio);
    return armor("TIPS PRIVATE KEY", der);
}

PrivateKey PrivateKey::from_pem(std::string_view pem) {
    Bytes der = dearmor("TIPS PRIVATE KEY", pem);
    const std::uint8_t* p = der.data();
    EVP_PKEY* pkey = d2i_AutoPrivateKey(nullptr, &p, static_cast<long>(der.size()));
    if (!pkey) fail(ErrorCode::MalformedKey, "private key der parse failed");
    return wrap_private_handle(share_pkey(pkey));
}

// ------------------------------------------------------------------ keygen --

KeyPair generate_keypair() {
    return build_keypair([](std::uint8_t* buf, std::size_t len) { rng::fill(buf, len); });
}

KeyPair generate_keypair(const Bytes& seed) {
    if (seed.size() < 32) {
        fail(ErrorCode::MalformedInput, "keypair seed must be at least 32 octets");
    }
    rng::CounterDrbg drbg(seed);
    return build_keypair([&drbg](std::uint8_t* buf, std::size_t len) { drbg.fill(buf, len); });
}

SessionKey generate_session_key() { return SessionKey(rng::bytes(kSessionKeyLen)); }

// --------------------------------------------------------------- seal/open --

Ciphertext seal_with_nonce(const Bytes& m, const SessionKey& k_m,
                           const std::array<std::uint8_t, kNonceLen>& nonce) {
    if (k_m.bytes.size() != kSessionKeyLen) {
        fail(ErrorCode::MalformedKey, "session key must be 32 octets");
    }
    if (m.size() > kMaxPlaintext) {
        fail(ErrorCode::PlaintextTooLarge, "plaintext exceeds 16 MiB limit");
    }
    CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
    if (!ctx) fail(ErrorCode::EntropyFailure, "cipher context allocation failed");
    Ciphertext c;
    c.nonce = nonce;
    c.body.resize(m.size());
    int len = 0;
    if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, kNonceLen, nullptr) != 1 ||
        EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, k_m.bytes.data(), c.nonce.data()) != 1) {
        fail(ErrorCode::EntropyFailure, "cipher initialization failed");
    }
    if (!m.empty() &&
        EVP_EncryptUpdate(ctx.get(), c.body.data(), &len, m.data(), static_cast<int>(m.size())) !=
            1) {
        fail(ErrorCode::EntropyFailure, "encryption failed");
    }
    int fin = 0;
    if (EVP_EncryptFinal_ex(ctx.get(), c.body.data() + len, &fin) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagLen, c.auth_tag.data()) != 1) {
        fail(ErrorCode::EntropyFailure, "encryption finalization failed");
    }
    return c;
}

Ciphertext seal(const Bytes& m, const SessionKey& k_m) {
    std::array<std::uint8_t, kNonceLen> nonce;
    rng::fill(nonce.data(), nonce.size());
    return seal_with_nonce(m, k_m, nonce);
}

Bytes open(const Ciphertext& c, const SessionKey& k_m) {
    if (k_m.bytes.size() != kSessionKeyLen) {
        fail(ErrorCode::MalformedKey, "session key must be 32 octets");
    }
    CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
    if (!ctx) fail(ErrorCode::EntropyFailure, "cipher context allocation failed");
    Bytes out(c.body.size());
    int len = 0;
    std::array<std::uint8_t, kTagLen> tag = c.auth_tag;
    bool ok = EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
              EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, kNonceLen, nullptr) == 1 &&
              EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, k_m.bytes.data(), c.nonce.data()) ==
                  1;
    if (ok && !c.body.empty()) {
        ok = EVP_DecryptUpdate(ctx.get(), out.data(), &len, c.body.data(),
                               static_cast<int>(c.body.size())) == 1;
    }
    if (ok) {
        ok = EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagLen, tag.data()) == 1;
    }
    int fin = 0;
    if (!ok || EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &fin) != 1) {
        // One error for wrong key and tampering alike; no plaintext escapes.
        fail(ErrorCode::AuthFailure, "authentication failed");
    }
    return out;
}

// ------------------------------------------------------------- wrap/unwrap --

WrappedKey wrap_key(const SessionKey& k_m, const PublicKey& k_e) {
    if (!k_e.valid()) fail(ErrorCode::MalformedKey, "empty public key handle");
    if (EVP_PKEY_get_base_id(k_e.raw()) != EVP_PKEY_RSA ||
        static_cast<std::size_t>(EVP_PKEY_get_size(k_e.raw())) != kRsaModulusBytes) {
        fail(ErrorCode::MalformedKey, "wrap target must be an rsa-2048 public key");
    }
    if (k_m.bytes.size() != kSessionKeyLen) {
        fail(ErrorCode::MalformedKey, "session key must be 32 octets");
    }

    // OAEP encode (RFC 8017 section 7.1.1) with SHA-256 and an empty label,
    // drawing the seed from tips::rng so wrapping stays reproducible under a
    // deterministic process seed. Decryption goes through the provider's own
    // OAEP path, which cross-checks this encoding on every roundtrip.
    constexpr std::size_t k = kRsaModulusBytes;
    constexpr std::size_t h = kDigestLen;
    Bytes db(k - h - 1, 0);
    SHA256(nullptr, 0, db.data());  // lHash = SHA-256("")
    db[db.size() - kSessionKeyLen - 1] = 0x01;
    std::memcpy(db.data() + db.size() - kSessionKeyLen, k_m.bytes.data(), kSessionKeyLen);

    Bytes seed = rng::bytes(h);
    Bytes db_mask = mgf1_sha256(seed.data(), seed.size(), db.size());
    for (std::size_t i = 0; i < db.size(); ++i) db[i] ^= db_mask[i];
    Bytes seed_mask = mgf1_sha256(db.data(), db.size(), h);
    for (std::size_t i = 0; i < h; ++i) seed[i] ^= seed_mask[i];

    Bytes em(k, 0);
    std::memcpy(em.data() + 1, seed.data(), h);
    std::memcpy(em.data() + 1 + h, db.data(), db.size());

    PkeyCtxPtr ctx(EVP_PKEY_CTX_new(k_e.raw(), nullptr));
    if (!ctx || EVP_PKEY_encrypt_init(ctx.get()) != 1 ||
        EVP_PKEY_CTX_set_rsa_padding(ctx.get(), RSA_NO_PADDING) != 1) {
        fail(ErrorCode::MalformedKey, "rsa encrypt context setup failed");
    }
    std::size_t outlen = k;
    WrappedKey w;
    w.bytes.resize(k);
    if (EVP_PKEY_encrypt(ctx.get(), w.bytes.data(), &outlen, em.data(), em.size()) != 1 ||
        outlen != k) {
        fail(ErrorCode::MalformedKey, "rsa public operation failed");
    }
    w.recipient_key_id = k_e.key_id();
    OPENSSL_cleanse(db.data(), db.size());
    OPENSSL_cleanse(em.data(), em.size());
    return w;
}

SessionKey unwrap_key(const WrappedKey& k_s, const PrivateKey& k_d) {
    if (!k_d.valid()) fail(ErrorCode::MalformedKey, "empty private key handle");
    PkeyCtxPtr ctx(EVP_PKEY_CTX_new(k_d.raw(), nullptr));
    if (!ctx || EVP_PKEY_decrypt_init(ctx.get()) != 1 ||
        EVP_PKEY_CTX_set_rsa_padding(ctx.get(), RSA_PKCS1_OAEP_PADDING) != 1 ||
        EVP_PKEY_CTX_set_rsa_oaep_md(ctx.get(), EVP_sha256()) != 1 ||
        EVP_PKEY_CTX_set_rsa_mgf1_md(ctx.get(), EVP_sha256()) != 1) {
        fail(ErrorCode::UnwrapFailure, "rsa decrypt context setup failed");
    }
    std::size_t outlen = kRsaModulusBytes;
    Bytes out(outlen);
    if (EVP_PKEY_decrypt(ctx.get(), out.data(), &outlen, k_s.bytes.data(), k_s.bytes.size()) !=
        1) {
        fail(ErrorCode::UnwrapFailure, "session key unwrap failed");
    }
    if (outlen != kSessionKeyLen) {
        OPENSSL_cleanse(out.data(), out.size());
        fail(ErrorCode::UnwrapFailure, "session key unwrap failed");
    }
    out.resize(kSessionKeyLen);
    return SessionKey(std::move(out));
}

// ----------------------------------------------------------------- hashing --

Digest digest(const Bytes& data) { return digest_of(data.data(), data.size()); }

Digest digest(std::string_view data) {
    return digest_of(reinterpret_cast<const std::uint8_t*>(data.data()), data.size());
}

// ------------------------------------------------------------- sign/verify --

Signature sign(const Bytes& data, const PrivateKey& k_d) {
    if (!k_d.valid()) fail(ErrorCode::MalformedKey, "empty private key handle");
    MdCtxPtr md(EVP_MD_CTX_new());
    EVP_PKEY_CTX* pctx = nullptr;  // owned by md
    if (!md || EVP_DigestSignInit(md.get(), &pctx, EVP_sha256(), nullptr, k_d.raw()) != 1 ||
        EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PSS_PADDING) != 1 ||
        // Zero-length salt keeps signatures deterministic.
        EVP_PKEY_CTX_set_rsa_pss_saltlen(pctx, 0) != 1) {
        fail(ErrorCode::MalformedKey, "signing context setup failed");
    }
    std::size_t siglen = 0;
    if (EVP_DigestSign(md.get(), nullptr, &siglen, data.data(), data.size()) != 1) {
        fail(ErrorCode::MalformedKey, "signing failed");
    }
    Signature sig;
    sig.bytes.resize(siglen);
    if (EVP_DigestSign(md.get(), sig.bytes.data(), &siglen, data.data(), data.size()) != 1) {
        fail(ErrorCode::MalformedKey, "signing failed");
    }
    sig.bytes.resize(siglen);
    Bytes spki = spki_der(k_d.raw());
    sig.signer_key_id = digest_of(spki.data(), spki.size());
    return sig;
}

bool verify(const Bytes& data, const Signature& sig, const PublicKey& k_e) {
    if (!k_e.valid()) fail(ErrorCode::MalformedKey, "empty public key handle");
    MdCtxPtr md(EVP_MD_CTX_new());
    EVP_PKEY_CTX* pctx = nullptr;  // owned by md
    if (!md || EVP_DigestVerifyInit(md.get(), &pctx, EVP_sha256(), nullptr, k_e.raw()) != 1 ||
        EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PSS_PADDING) != 1 ||
        EVP_PKEY_CTX_set_rsa_pss_saltlen(pctx, RSA_PSS_SALTLEN_AUTO) != 1) {
        fail(ErrorCode::MalformedKey, "verify context setup failed");
    }
    return EVP_DigestVerify(md.get(), sig.bytes.data(), sig.bytes.size(), data.data(),
                            data.size()) == 1;
}

}  // namespace tips::crypto
