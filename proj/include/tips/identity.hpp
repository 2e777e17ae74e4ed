#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "tips/canonical.hpp"
#include "tips/crypto.hpp"
#include "tips/timeutil.hpp"

namespace tips::identity {

using AttributeMap = std::map<std::string, std::string>;

struct Subject {
    std::string common_name;
    std::string organisation;

    bool operator==(const Subject&) const = default;
    Json to_json() const;
    static Subject from_json(const Json& j);
};

// Certificate signing request, self-signed by the requesting key.
struct Csr {
    crypto::PublicKey public_key;
    Subject subject;
    AttributeMap requested_attributes;
    crypto::Signature self_signature;

    // Canonical encoding covered by self_signature.
    Bytes signing_bytes() const;
    Json to_json() const;
    static Csr from_json(const Json& j);
};

struct CertAttributes {
    std::string org;
    std::string role;
    AttributeMap extra;

    Json to_json() const;
    static CertAttributes from_json(const Json& j);
};

// Compact canonical-JSON stand-in for an X.509 end-entity certificate: the
// lifecycle semantics matter here, not ASN.1 wire compatibility.
struct Certificate {
    std::uint64_t serial = 0;
    Subject subject;
    crypto::PublicKey public_key;
    CertAttributes attributes;
    crypto::Digest issuer_key_id;
    UtcTime not_before{};
    UtcTime not_after{};
    crypto::Signature ca_signature;

    // Canonical to-be-signed encoding (everything except ca_signature).
    Bytes to_be_signed() const;
    Json to_json() const;
    static Certificate from_json(const Json& j);
};

struct Crl {
    std::set<std::uint64_t> revoked_serials;
    UtcTime issued_at{};
    crypto::Signature ca_signature;

    Bytes to_be_signed() const;
    Json to_json() const;
    static Crl from_json(const Json& j);
};

// Trust anchors, revocation data and role-based operation grants used by
// validation on every ledger path.
struct MspConfig {
    // key_id hex -> trusted CA public key
    std::map<std::string, crypto::PublicKey> trusted_cas;
    Crl crl;
    // role -> permitted contract operations
    std::map<std::string, std::set<std::string>> access_policies;

    // Enforces: at least one trusted CA, CRL signed by one of them.
    void check_valid() const;

    Json to_json() const;
    static MspConfig from_json(const Json& j);
};

enum class EnrollmentStatus { Enrolled, Revoked };

struct IdentityRecord {
    Certificate certificate;
    EnrollmentStatus enrollment_status = EnrollmentStatus::Enrolled;
    UtcTime enrolled_at{};

    Json to_json() const;
    static IdentityRecord from_json(const Json& j);
};

enum class ValidationResult { Valid, UntrustedIssuer, Revoked, Expired };

std::string_view validation_result_name(ValidationResult r);

// Issues certificates with sequential serials and maintains the CRL.
// Issuance and revocation are serialized; reads take the same lock briefly
// and return copies.
class CertificateAuthority {
public:
    // Fresh CA with its own signing keypair.
    static CertificateAuthority create(std::string name);
    // Deterministic variant for tests/demo.
    static CertificateAuthority create_seeded(std::string name, const Bytes& seed);

    const std::string& name() const { return name_; }
    crypto::PublicKey public_key() const { return keypair_.public_key; }
    crypto::Digest key_id() const { return keypair_.key_id; }

    Certificate issue(const Csr& csr, std::chrono::seconds validity, UtcTime now);
    Crl revoke(std::uint64_t serial, UtcTime now);

    Crl current_crl() const;
    std::vector<Certificate> issued() const;
    std::uint64_t last_serial() const;

    Json to_json() const;  // includes private key material
    static CertificateAuthority from_json(const Json& j);

    CertificateAuthority(CertificateAuthority&& o) noexcept;
    CertificateAuthority& operator=(CertificateAuthority&&) = delete;
    CertificateAuthority(const CertificateAuthority&) = delete;

private:
    CertificateAuthority(std::string name, crypto::KeyPair kp);

    Crl sign_crl(std::set<std::uint64_t> serials, UtcTime now) const;

    mutable std::mutex mu_;
    std::string name_;
    crypto::KeyPair keypair_;
    std::uint64_t next_serial_ = 1;
    std::vector<Certificate> issued_;
    Crl crl_;
};

// Default certificate lifetime.
inline constexpr std::chrono::seconds kDefaultValidity{365LL * 24 * 3600};

Csr create_csr(const crypto::KeyPair& keypair, Subject subject,
               AttributeMap requested_attributes);

// Throws UNTRUSTED_ISSUER / EXPIRED / REVOKED; otherwise returns an Enrolled
// record.
IdentityRecord enroll(const MspConfig& msp, const Certificate& certificate, UtcTime now);

// Pure form of enroll used by endorsement/submission paths: never throws,
// returns a reason code instead.
ValidationResult validate_identity(const MspConfig& msp, const Certificate& certificate,
                                   UtcTime now);

}  // namespace tips::identity
