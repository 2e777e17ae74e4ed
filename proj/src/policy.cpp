#include "tips/policy.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <string_view>

#include "tips/errors.hpp"

namespace tips::policy {

namespace {

// Officially assigned ISO-3166 alpha-2 codes (249 entries).
constexpr std::array<std::string_view, 249> kLocations = {
    "AD", "AE", "AF", "AG", "AI", "AL", "AM", "AO", "AQ", "AR", "AS", "AT", "AU", "AW", "AX",
    "AZ", "BA", "BB", "BD", "BE", "BF", "BG", "BH", "BI", "BJ", "BL", "BM", "BN", "BO", "BQ",
    "BR", "BS", "BT", "BV", "BW", "BY", "BZ", "CA", "CC", "CD", "CF", "CG", "CH", "CI", "CK",
    "CL", "CM", "CN", "CO", "CR", "CU", "CV", "CW", "CX", "CY", "CZ", "DE", "DJ", "DK", "DM",
    "DO", "DZ", "EC", "EE", "EG", "EH", "ER", "ES", "ET", "FI", "FJ", "FK", "FM", "FO", "FR",
    "GA", "GB", "GD", "GE", "GF", "GG", "GH", "GI", "GL", "GM", "GN", "GP", "GQ", "GR", "GS",
    "GT", "GU", "GW", "GY", "HK", "HM", "HN", "HR", "HT", "HU", "ID", "IE", "IL", "IM", "IN",
    "IO", "IQ", "IR", "IS", "IT", "JE", "JM", "JO", "JP", "KE", "KG", "KH", "KI", "KM", "KN",
    "KP", "KR", "KW", "KY", "KZ", "LA", "LB", "LC", "LI", "LK", "LR", "LS", "LT", "LU", "LV",
    "LY", "MA", "MC", "MD", "ME", "MF", "MG", "MH", "MK", "ML", "MM", "MN", "MO", "MP", "MQ",
    "MR", "MS", "MT", "MU", "MV", "MW", "MX", "MY", "MZ", "NA", "NC", "NE", "NF", "NG", "NI",
    "NL", "NO", "NP", "NR", "NU", "NZ", "OM", "PA", "PE", "PF", "PG", "PH", "PK", "PL", "PM",
    "PN", "PR", "PS", "PT", "PW", "PY", "QA", "RE", "RO", "RS", "RU", "RW", "SA", "SB", "SC",
    "SD", "SE", "SG", "SH", "SI", "SJ", "SK", "SL", "SM", "SN", "SO", "SR", "SS", "ST", "SV",
    "SX", "SY", "SZ", "TC", "TD", "TF", "TG", "TH", "TJ", "TK", "TL", "TM", "TN", "TO", "TR",
    "TT", "TV", "TW", "TZ", "UA", "UG", "UM", "US", "UY", "UZ", "VA", "VC", "VE", "VG", "VI",
    "VN", "VU", "WF", "WS", "YE", "YT", "ZA", "ZM", "ZW"};

// Certificate attribute lookup: role and org are first-class, the rest live
// in the extra map.
std::optional<std::string> attribute_value(const identity::Certificate& cert,
                                           const std::string& name) {
    if (name == "role") return cert.attributes.role;
    if (name == "org") return cert.attributes.org;
    auto it = cert.attributes.extra.find(name);
    if (it == cert.attributes.extra.end()) return std::nullopt;
    return it->second;
}

}  // namespace

bool is_known_location(const std::string& code) {
    return std::binary_search(kLocations.begin(), kLocations.end(), std::string_view(code));
}

void AccessPolicy::check_valid() const {
    if (time_window && time_window->first >= time_window->second)
        fail(ErrorCode::MalformedInput, "policy time window is empty");
    if (allowed_locations) {
        for (const auto& loc : *allowed_locations) {
            if (!is_known_location(loc))
                fail(ErrorCode::InvalidLocation, "unknown location code: " + loc);
        }
    }
}

Json AccessPolicy::to_json() const {
    Json j = Json::object();
    if (time_window) {
        j["time_window"] =
            Json::array({format_rfc3339(time_window->first), format_rfc3339(time_window->second)});
    }
    if (allowed_locations) j["allowed_locations"] = *allowed_locations;
    if (required_attributes) j["required_attributes"] = *required_attributes;
    return j;
}

AccessPolicy AccessPolicy::from_json(const Json& j) {
    AccessPolicy p;
    try {
        if (j.contains("time_window")) {
            const auto& w = j.at("time_window");
            if (!w.is_array() || w.size() != 2)
                fail(ErrorCode::MalformedInput, "time_window must be a [start, end] pair");
            p.time_window = {parse_rfc3339(w.at(0).get<std::string>()),
                             parse_rfc3339(w.at(1).get<std::string>())};
        }
        if (j.contains("allowed_locations"))
            p.allowed_locations = j.at("allowed_locations").get<std::set<std::string>>();
        if (j.contains("required_attributes"))
            p.required_attributes =
                j.at("required_attributes").get<std::map<std::string, std::string>>();
    } catch (const Json::exception& e) {
        fail(ErrorCode::MalformedInput, std::string("bad policy document: ") + e.what());
    }
    p.check_valid();
    return p;
}

Bytes AttributeAttestation::signing_bytes() const {
    Json j{{"claimed_location", claimed_location},
           {"claimed_time", format_rfc3339(claimed_time)},
           {"issued_at", format_rfc3339(issued_at)},
           {"subject", subject}};
    return to_bytes(canonical_dump(j));
}

Json AttributeAttestation::to_json() const {
    return Json{{"claimed_location", claimed_location},
                {"claimed_time", format_rfc3339(claimed_time)},
                {"issued_at", format_rfc3339(issued_at)},
                {"signature", signature.to_json()},
                {"subject", subject}};
}

AttributeAttestation AttributeAttestation::from_json(const Json& j) {
    AttributeAttestation a;
    try {
        a.subject = j.at("subject").get<std::uint64_t>();
        a.claimed_time = parse_rfc3339(j.at("claimed_time").get<std::string>());
        a.claimed_location = j.at("claimed_location").get<std::string>();
        a.issued_at = parse_rfc3339(j.at("issued_at").get<std::string>());
        a.signature = crypto::Signature::from_json(j.at("signature"));
    } catch (const Json::exception& e) {
        fail(ErrorCode::MalformedInput, std::string("bad attestation document: ") + e.what());
    }
    return a;
}

AttributeAttestation attest(std::uint64_t subject_serial, const crypto::PrivateKey& subject_key,
                            UtcTime now, const std::string& location) {
    if (!is_known_location(location))
        fail(ErrorCode::InvalidLocation, "unknown location code: " + location);
    AttributeAttestation a;
    a.subject = subject_serial;
    a.claimed_time = now;
    a.claimed_location = location;
    a.issued_at = now;
    a.signature = crypto::sign(a.signing_bytes(), subject_key);
    return a;
}

EvalResult evaluate(const AccessPolicy& policy, const AttributeAttestation& attestation,
                    const identity::Certificate& certificate, UtcTime eval_time) {
    // Gate on the attestation itself before looking at any clause: it must be
    // bound to the presented certificate, carry a good self-signature, and be
    // fresh relative to the evaluation time.
    if (attestation.subject != certificate.serial) return {false, "attestation"};
    if (!crypto::verify(attestation.signing_bytes(), attestation.signature,
                        certificate.public_key))
        return {false, "attestation"};
    auto skew = eval_time >= attestation.issued_at ? eval_time - attestation.issued_at
                                                   : attestation.issued_at - eval_time;
    if (skew > kAttestationFreshness) return {false, "attestation"};

    if (policy.time_window) {
        if (attestation.claimed_time < policy.time_window->first ||
            attestation.claimed_time >= policy.time_window->second)
            return {false, "time"};
    }
    if (policy.allowed_locations) {
        if (!policy.allowed_locations->count(attestation.claimed_location))
            return {false, "location"};
    }
    if (policy.required_attributes) {
        for (const auto& [name, want] : *policy.required_attributes) {
            auto have = attribute_value(certificate, name);
            if (!have || *have != want) return {false, "attributes"};
        }
    }
    return {true, ""};
}

}  // namespace tips::policy
