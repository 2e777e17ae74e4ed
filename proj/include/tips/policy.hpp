#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>

#include "tips/canonical.hpp"
#include "tips/crypto.hpp"
#include "tips/identity.hpp"
#include "tips/timeutil.hpp"

namespace tips::policy {

// How long an attestation stays acceptable around its evaluation time.
inline constexpr std::chrono::seconds kAttestationFreshness{300};

// True iff code is an assigned ISO-3166 alpha-2 country code (uppercase).
bool is_known_location(const std::string& code);

// All clauses are optional; an empty policy allows everything. Clauses are
// conjunctive.
struct AccessPolicy {
    // [not_before, not_after): inclusive start, exclusive end.
    std::optional<std::pair<UtcTime, UtcTime>> time_window;
    std::optional<std::set<std::string>> allowed_locations;
    std::optional<std::map<std::string, std::string>> required_attributes;

    bool empty() const {
        return !time_window && !allowed_locations && !required_attributes;
    }

    // Enforces window ordering and location code validity.
    void check_valid() const;

    Json to_json() const;
    static AccessPolicy from_json(const Json& j);
};

// Self-signed statement of current time and place, presented by a receiver
// before envelope release.
struct AttributeAttestation {
    std::uint64_t subject = 0;  // certificate serial
    UtcTime claimed_time{};
    std::string claimed_location;
    UtcTime issued_at{};
    crypto::Signature signature;

    Bytes signing_bytes() const;
    Json to_json() const;
    static AttributeAttestation from_json(const Json& j);
};

// Throws on an unknown location code.
AttributeAttestation attest(std::uint64_t subject_serial, const crypto::PrivateKey& subject_key,
                            UtcTime now, const std::string& location);

struct EvalResult {
    bool allowed = false;
    // First failing clause: "attestation", "time", "location" or "attributes";
    // empty when allowed.
    std::string reason;
};

// Conjunction over the policy's set clauses, gated on attestation integrity
// and freshness. Never throws; denial carries the first failing clause.
EvalResult evaluate(const AccessPolicy& policy, const AttributeAttestation& attestation,
                    const identity::Certificate& certificate, UtcTime eval_time);

}  // namespace tips::policy
