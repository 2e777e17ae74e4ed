#include "tips/identity.hpp"

#include <algorithm>

#include "tips/errors.hpp"

namespace tips::identity {

namespace {

Json attributes_to_json(const AttributeMap& m) {
    Json j = Json::object();
    for (const auto& [k, v] : m) j[k] = v;
    return j;
}

AttributeMap attributes_from_json(const Json& j) {
    AttributeMap m;
    for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = it.value().get<std::string>();
    return m;
}

}  // namespace

// ------------------------------------------------------------------- types --

Json Subject::to_json() const {
    return Json{{"common_name", common_name}, {"organisation", organisation}};
}

Subject Subject::from_json(const Json& j) {
    return Subject{j.at("common_name").get<std::string>(),
                   j.at("organisation").get<std::string>()};
}

Bytes Csr::signing_bytes() const {
    Json j{{"public_key", public_key.to_pem()},
           {"requested_attributes", attributes_to_json(requested_attributes)},
           {"subject", subject.to_json()}};
    return to_bytes(canonical_dump(j));
}

Json Csr::to_json() const {
    Json j{{"public_key", public_key.to_pem()},
           {"requested_attributes", attributes_to_json(requested_attributes)},
           {"subject", subject.to_json()}};
    j["self_signature"] = self_signature.to_json();
    return j;
}

Csr Csr::from_json(const Json& j) {
    Csr csr;
    csr.public_key = crypto::PublicKey::from_pem(j.at("public_key").get<std::string>());
    csr.subject = Subject::from_json(j.at("subject"));
    csr.requested_attributes = attributes_from_json(j.at("requested_attributes"));
    csr.self_signature = crypto::Signature::from_json(j.at("self_signature"));
    return csr;
}

Json CertAttributes::to_json() const {
    return Json{{"extra", attributes_to_json(extra)}, {"org", org}, {"role", role}};
}

CertAttributes CertAttributes::from_json(const Json& j) {
    return CertAttributes{j.at("org").get<std::string>(), j.at("role").get<std::string>(),
                          attributes_from_json(j.at("extra"))};
}

Bytes Certificate::to_be_signed() const {
    Json j{{"attributes", attributes.to_json()},
           {"issuer_key_id", issuer_key_id.hex()},
           {"not_after", format_rfc3339(not_after)},
           {"not_before", format_rfc3339(not_before)},
           {"public_key", public_key.to_pem()},
           {"serial", serial},
           {"subject", subject.to_json()}};
    return to_bytes(canonical_dump(j));
}

Json Certificate::to_json() const {
    Json j{{"attributes", attributes.to_json()},
           {"issuer_key_id", issuer_key_id.hex()},
           {"not_after", format_rfc3339(not_after)},
           {"not_before", format_rfc3339(not_before)},
           {"public_key", public_key.to_pem()},
           {"serial", serial},
           {"subject", subject.to_json()}};
    j["ca_signature"] = ca_signature.to_json();
    return j;
}

Certificate Certificate::from_json(const Json& j) {
    Certificate c;
    c.serial = j.at("serial").get<std::uint64_t>();
    c.subject = Subject::from_json(j.at("subject"));
    c.public_key = crypto::PublicKey::from_pem(j.at("public_key").get<std::string>());
    c.attributes = CertAttributes::from_json(j.at("attributes"));
    c.issuer_key_id = crypto::Digest::from_hex(j.at("issuer_key_id").get<std::string>());
    c.not_before = parse_rfc3339(j.at("not_before").get<std::string>());
    c.not_after = parse_rfc3339(j.at("not_after").get<std::string>());
    c.ca_signature = crypto::Signature::from_json(j.at("ca_signature"));
    return c;
}

Bytes Crl::to_be_signed() const {
    Json j{{"issued_at", format_rfc3339(issued_at)},
           {"revoked_serials", Json(revoked_serials)}};
    return to_bytes(canonical_dump(j));
}

Json Crl::to_json() const {
    Json j{{"issued_at", format_rfc3339(issued_at)},
           {"revoked_serials", Json(revoked_serials)}};
    j["ca_signature"] = ca_signature.to_json();
    return j;
}

Crl Crl::from_json(const Json& j) {
    Crl crl;
    for (const auto& s : j.at("revoked_serials")) {
        crl.revoked_serials.insert(s.get<std::uint64_t>());
    }
    crl.issued_at = parse_rfc3339(j.at("issued_at").get<std::string>());
    crl.ca_signature = crypto::Signature::from_json(j.at("ca_signature"));
    return crl;
}

void MspConfig::check_valid() const {
    if (trusted_cas.empty()) {
        fail(ErrorCode::SetupFailure, "msp requires at least one trusted ca");
    }
    auto it = trusted_cas.find(crl.ca_signature.signer_key_id.hex());
    if (it == trusted_cas.end() ||
        !crypto::verify(crl.to_be_signed(), crl.ca_signature, it->second)) {
        fail(ErrorCode::SetupFailure, "crl is not signed by a trusted ca");
    }
}

Json MspConfig::to_json() const {
    Json cas = Json::object();
    for (const auto& [id, key] : trusted_cas) cas[id] = key.to_pem();
    Json policies = Json::object();
    for (const auto& [role, ops] : access_policies) policies[role] = Json(ops);
    return Json{{"access_policies", policies}, {"crl", crl.to_json()}, {"trusted_cas", cas}};
}

MspConfig MspConfig::from_json(const Json& j) {
    MspConfig msp;
    const Json& cas = j.at("trusted_cas");
    for (auto it = cas.begin(); it != cas.end(); ++it) {
        msp.trusted_cas[it.key()] = crypto::PublicKey::from_pem(it.value().get<std::string>());
    }
    msp.crl = Crl::from_json(j.at("crl"));
    const Json& policies = j.at("access_policies");
    for (auto it = policies.begin(); it != policies.end(); ++it) {
        std::set<std::string> ops;
        for (const auto& op : it.value()) ops.insert(op.get<std::string>());
        msp.access_policies[it.key()] = std::move(ops);
    }
    return msp;
}

Json IdentityRecord::to_json() const {
    return Json{{"certificate", certificate.to_json()},
                {"enrolled_at", format_rfc3339(enrolled_at)},
                {"enrollment_status",
                 enrollment_status == EnrollmentStatus::Enrolled ? "Enrolled" : "Revoked"}};
}

IdentityRecord IdentityRecord::from_json(const Json& j) {
    IdentityRecord rec;
    rec.certificate = Certificate::from_json(j.at("certificate"));
    rec.enrolled_at = parse_rfc3339(j.at("enrolled_at").get<std::string>());
    rec.enrollment_status = j.at("enrollment_status").get<std::string>() == "Enrolled"
                                ? EnrollmentStatus::Enrolled
                                : EnrollmentStatus::Revoked;
    return rec;
}

std::string_view validation_result_name(ValidationResult r) {
    switch (r) {
        case ValidationResult::Valid: return "VALID";
        case ValidationResult::UntrustedIssuer: return "UNTRUSTED_ISSUER";
        case ValidationResult::Revoked: return "REVOKED";
        case ValidationResult::Expired: return "EXPIRED";
    }
    return "UNKNOWN";
}

// ---------------------------------------------------------------------- ca --

CertificateAuthority::CertificateAuthority(std::string name, crypto::KeyPair kp)
    : name_(std::move(name)), keypair_(std::move(kp)) {
    crl_ = sign_crl({}, UtcTime{});
}

CertificateAuthority::CertificateAuthority(CertificateAuthority&& o) noexcept
    : name_(std::move(o.name_)),
      keypair_(std::move(o.keypair_)),
      next_serial_(o.next_serial_),
      issued_(std::move(o.issued_)),
      crl_(std::move(o.crl_)) {}

CertificateAuthority CertificateAuthority::create(std::string name) {
    return CertificateAuthority(std::move(name), crypto::generate_keypair());
}

CertificateAuthority CertificateAuthority::create_seeded(std::string name, const Bytes& seed) {
    return CertificateAuthority(std::move(name), crypto::generate_keypair(seed));
}

Crl CertificateAuthority::sign_crl(std::set<std::uint64_t> serials, UtcTime now) const {
    Crl crl;
    crl.revoked_serials = std::move(serials);
    crl.issued_at = now;
    crl.ca_signature = crypto::sign(crl.to_be_signed(), keypair_.private_key);
    return crl;
}

Certificate CertificateAuthority::issue(const Csr& csr, std::chrono::seconds validity,
                                        UtcTime now) {
    if (validity <= std::chrono::seconds(0)) {
        fail(ErrorCode::MalformedInput, "certificate validity must be positive");
    }
    if (csr.subject.common_name.empty()) {
        fail(ErrorCode::InvalidCsr, "csr subject has no common name");
    }
    if (!crypto::verify(csr.signing_bytes(), csr.self_signature, csr.public_key)) {
        fail(ErrorCode::InvalidCsr, "csr self-signature does not verify");
    }

    std::lock_guard<std::mutex> lock(mu_);
    for (const Certificate& c : issued_) {
        bool live = c.subject == csr.subject && !crl_.revoked_serials.contains(c.serial) &&
                    now < c.not_after;
        if (live) {
            fail(ErrorCode::DuplicateSubject,
                 "subject already holds live certificate serial " + std::to_string(c.serial));
        }
    }

    Certificate cert;
    cert.serial = next_serial_++;
    cert.subject = csr.subject;
    cert.public_key = csr.public_key;
    cert.attributes.org = csr.subject.organisation;
    cert.attributes.role = "member";
    for (const auto& [k, v] : csr.requested_attributes) {
        if (k == "role") {
            cert.attributes.role = v;
        } else {
            cert.attributes.extra[k] = v;
        }
    }
    cert.issuer_key_id = keypair_.key_id;
    cert.not_before = now;
    cert.not_after = now + validity;
    cert.ca_signature = crypto::sign(cert.to_be_signed(), keypair_.private_key);
    issued_.push_back(cert);
    return cert;
}

Crl CertificateAuthority::revoke(std::uint64_t serial, UtcTime now) {
    std::lock_guard<std::mutex> lock(mu_);
    bool known = std::any_of(issued_.begin(), issued_.end(),
                             [&](const Certificate& c) { return c.serial == serial; });
    if (!known) {
        fail(ErrorCode::UnknownSerial, "serial " + std::to_string(serial) + " was not issued here");
    }
    std::set<std::uint64_t> serials = crl_.revoked_serials;
    serials.insert(serial);
    crl_ = sign_crl(std::move(serials), now);
    return crl_;
}

Crl CertificateAuthority::current_crl() const {
    std::lock_guard<std::mutex> lock(mu_);
    return crl_;
}

std::vector<Certificate> CertificateAuthority::issued() const {
    std::lock_guard<std::mutex> lock(mu_);
    return issued_;
}

std::uint64_t CertificateAuthority::last_serial() const {
    std::lock_guard<std::mutex> lock(mu_);
    return next_serial_ - 1;
}

Json CertificateAuthority::to_json() const {
    std::lock_guard<std::mutex> lock(mu_);
    Json issued = Json::array();
    for (const Certificate& c : issued_) issued.push_back(c.to_json());
    return Json{{"crl", crl_.to_json()},
                {"issued", issued},
                {"name", name_},
                {"next_serial", next_serial_},
                {"private_key", keypair_.private_key.to_pem()}};
}

CertificateAuthority CertificateAuthority::from_json(const Json& j) {
    crypto::KeyPair kp;
    kp.private_key = crypto::PrivateKey::from_pem(j.at("private_key").get<std::string>());
    kp.public_key = kp.private_key.derive_public();
    kp.key_id = kp.public_key.key_id();
    CertificateAuthority ca(j.at("name").get<std::string>(), std::move(kp));
    ca.next_serial_ = j.at("next_serial").get<std::uint64_t>();
    for (const auto& c : j.at("issued")) ca.issued_.push_back(Certificate::from_json(c));
    ca.crl_ = Crl::from_json(j.at("crl"));
    return ca;
}

// ----------------------------------------------------------------- lookups --

Csr create_csr(const crypto::KeyPair& keypair, Subject subject,
               AttributeMap requested_attributes) {
    if (subject.common_name.empty()) {
        fail(ErrorCode::InvalidSubject, "subject requires a non-empty common name");
    }
    Csr csr;
    csr.public_key = keypair.public_key;
    csr.subject = std::move(subject);
    csr.requested_attributes = std::move(requested_attributes);
    csr.self_signature = crypto::sign(csr.signing_bytes(), keypair.private_key);
    return csr;
}

ValidationResult validate_identity(const MspConfig& msp, const Certificate& certificate,
                                   UtcTime now) {
    auto it = msp.trusted_cas.find(certificate.issuer_key_id.hex());
    if (it == msp.trusted_cas.end()) return ValidationResult::UntrustedIssuer;
    if (!crypto::verify(certificate.to_be_signed(), certificate.ca_signature, it->second)) {
        return ValidationResult::UntrustedIssuer;
    }
    if (msp.crl.revoked_serials.contains(certificate.serial)) return ValidationResult::Revoked;
    if (now < certificate.not_before || now >= certificate.not_after) {
        return ValidationResult::Expired;
    }
    return ValidationResult::Valid;
}

IdentityRecord enroll(const MspConfig& msp, const Certificate& certificate, UtcTime now) {
    switch (validate_identity(msp, certificate, now)) {
        case ValidationResult::Valid: break;
        case ValidationResult::UntrustedIssuer:
            fail(ErrorCode::UntrustedIssuer, "certificate does not chain to a trusted ca");
        case ValidationResult::Revoked:
            fail(ErrorCode::Revoked,
                 "certificate serial " + std::to_string(certificate.serial) + " is revoked");
        case ValidationResult::Expired:
            fail(ErrorCode::Expired, "certificate is outside its validity window");
    }
    IdentityRecord rec;
    rec.certificate = certificate;
    rec.enrollment_status = EnrollmentStatus::Enrolled;
    rec.enrolled_at = now;
    return rec;
}

}  // namespace tips::identity
