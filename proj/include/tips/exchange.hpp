#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tips/canonical.hpp"
#include "tips/crypto.hpp"
#include "tips/identity.hpp"
#include "tips/ledger.hpp"
#include "tips/policy.hpp"
#include "tips/timeutil.hpp"

namespace tips::exchange {

// ---------------------------------------------------------------------------
// STIX 2.1 subset: indicators only.

struct Indicator {
    std::string id;  // "indicator--<uuid4>"
    std::string pattern;
    UtcTime valid_from{};
    std::vector<std::string> labels;

    Json to_json() const;
    static Indicator from_json(const Json& j);
};

struct ThreatBundle {
    std::string bundle_id;  // "bundle--<uuid4>"
    std::vector<Indicator> objects;
    std::string created_by;

    // Throws MALFORMED_BUNDLE: ids must match their type prefixes and carry a
    // UUID shape, and the bundle must hold at least one object.
    void check_valid() const;

    // The stable key-sorted serialization — the exact bytes that get sealed.
    Bytes canonical_bytes() const;

    Json to_json() const;
    static ThreatBundle from_json(const Json& j);
};

// RFC 4122 version-4 UUID drawn from tips::rng (deterministic under a seeded
// process generator).
std::string new_uuid();

Indicator make_indicator(std::string pattern, UtcTime valid_from,
                         std::vector<std::string> labels);
ThreatBundle make_bundle(std::string created_by, std::vector<Indicator> objects);

// ---------------------------------------------------------------------------
// Wire records.

struct PublishedKey {
    std::uint64_t owner = 0;  // certificate serial
    crypto::PublicKey public_key;
    std::string channel_id;
    crypto::Signature signature;  // owner's certificate key over the binding

    Bytes signing_bytes() const;  // canonical {channel_id, owner, public_key}
    Json to_json() const;
    static PublishedKey from_json(const Json& j);
};

struct Envelope {
    crypto::Digest envelope_id;  // digest of document(), fixed before posting
    std::uint64_t sender = 0;    // certificate serial
    crypto::Digest recipient_key_id;
    crypto::Ciphertext ciphertext;   // c = seal(bundle, k_m)
    crypto::WrappedKey wrapped_key;  // k_s = wrap(k_m, recipient key)
    policy::AccessPolicy policy;
    crypto::Digest posted_tx;  // transaction that carried it onto the ledger

    // The on-ledger body: everything except envelope_id and posted_tx, both
    // of which are derived (digest of the body; lineage of the state entry).
    Json document() const;
    static Envelope from_document(const Json& doc);

    Json to_json() const;  // full form, id and posting transaction included
    static Envelope from_json(const Json& j);
};

struct EnvelopeSummary {
    std::string envelope_id;  // hex
    std::uint64_t sender = 0;
    UtcTime posted{};
    bool read = false;  // by the agent asking
};

struct InboxFilter {
    bool unread_only = false;
    std::optional<std::uint64_t> sender;
};

// ---------------------------------------------------------------------------
// Agent-side protocol operations.
//
// An agent's local key material: the certificate key signs transactions and
// attestations, the exchange keypair opens envelopes. The private halves are
// confined here — they never enter a proposal, a block, or world state.

struct Agent {
    identity::Certificate certificate;
    crypto::KeyPair cert_key;
    std::optional<crypto::KeyPair> exchange_key;

    std::uint64_t serial() const { return certificate.serial; }
};

// Signs and commits the agent's exchange public key for one channel.
// Republishing after a local rotation bumps the record's lineage; the latest
// version wins for new senders.
PublishedKey publish_public_key(ledger::Network& net, const Agent& agent,
                                const std::string& channel);

// Envelope construction and posting: fresh k_m per call, sealed bundle,
// wrapped key bound to the recipient's currently published key. k_m lives
// only on this stack frame and is wiped when it unwinds.
Envelope send_bundle(ledger::Network& net, const Agent& sender, const std::string& channel,
                     std::uint64_t recipient, const ThreatBundle& bundle,
                     const policy::AccessPolicy& access = {});

// Reception: fetch the envelope, evaluate its access policy against a fresh
// attestation of `location` (before any key material is touched), unwrap,
// open, parse, and commit an idempotent read receipt. Denials commit a
// policy_denied transaction and throw POLICY_DENIED.
ThreatBundle receive_bundle(ledger::Network& net, const Agent& recipient,
                            const std::string& channel, const crypto::Digest& envelope_id,
                            const std::string& location);

// Inbox view over world state; decrypts nothing.
std::vector<EnvelopeSummary> list_envelopes(ledger::Network& net, const Agent& agent,
                                            const std::string& channel,
                                            const InboxFilter& filter = {});

// Reads one envelope record back from channel state (query path), with its
// posting transaction resolved from lineage.
Envelope fetch_envelope(ledger::Network& net, const Agent& caller, const std::string& channel,
                        const crypto::Digest& envelope_id);

}  // namespace tips::exchange
