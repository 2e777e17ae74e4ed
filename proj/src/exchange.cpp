#include "tips/exchange.hpp"

#include <algorithm>
#include <utility>

#include "tips/contract.hpp"
#include "tips/errors.hpp"
#include "tips/rng.hpp"

namespace tips::exchange {

namespace {

bool is_uuid(std::string_view s) {
    if (s.size() != 36) return false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i == 8 || i == 13 || i == 18 || i == 23) {
            if (s[i] != '-') return false;
        } else if (!((s[i] >= '0' && s[i] <= '9') || (s[i] >= 'a' && s[i] <= 'f'))) {
            return false;
        }
    }
    return true;
}

bool has_typed_uuid(const std::string& id, std::string_view prefix) {
    return id.size() > prefix.size() && id.compare(0, prefix.size(), prefix) == 0 &&
           is_uuid(std::string_view(id).substr(prefix.size()));
}

[[noreturn]] void malformed(const std::string& what) {
    fail(ErrorCode::MalformedBundle, what);
}

std::string require_string(const Json& j, const char* field) {
    if (!j.contains(field) || !j.at(field).is_string())
        malformed(std::string("missing string field: ") + field);
    return j.at(field).get<std::string>();
}

// Query shortcut used by the fetch paths below.
Json run_query(ledger::Network& net, const Agent& caller, const std::string& channel,
               const std::string& op, Json args) {
    auto p = ledger::build_proposal(channel, op, std::move(args), caller.serial(),
                                    caller.cert_key.private_key, net.now());
    return net.query(channel, p);
}

ledger::TxOutcome run_invoke(ledger::Network& net, const Agent& caller,
                             const std::string& channel, const std::string& op, Json args) {
    auto p = ledger::build_proposal(channel, op, std::move(args), caller.serial(),
                                    caller.cert_key.private_key, net.now());
    return net.invoke(channel, p);
}

}  // namespace

// ---------------------------------------------------------------------------
// STIX subset

std::string new_uuid() {
    Bytes b = rng::bytes(16);
    b[6] = static_cast<std::uint8_t>((b[6] & 0x0F) | 0x40);  // version 4
    b[8] = static_cast<std::uint8_t>((b[8] & 0x3F) | 0x80);  // RFC 4122 variant
    std::string hex = hex_encode(b.data(), b.size());
    return hex.substr(0, 8) + "-" + hex.substr(8, 4) + "-" + hex.substr(12, 4) + "-" +
           hex.substr(16, 4) + "-" + hex.substr(20, 12);
}

Json Indicator::to_json() const {
    return Json{{"id", id},
                {"labels", labels},
                {"pattern", pattern},
                {"type", "indicator"},
                {"valid_from", format_rfc3339(valid_from)}};
}

Indicator Indicator::from_json(const Json& j) {
    Indicator ind;
    try {
        if (j.contains("type") && j.at("type") != "indicator")
            malformed("object type is not indicator");
        ind.id = require_string(j, "id");
        ind.pattern = require_string(j, "pattern");
        ind.valid_from = parse_rfc3339(require_string(j, "valid_from"));
        if (!j.contains("labels") || !j.at("labels").is_array())
            malformed("missing array field: labels");
        for (const auto& l : j.at("labels")) {
            if (!l.is_string()) malformed("labels must be strings");
            ind.labels.push_back(l.get<std::string>());
        }
    } catch (const TipsError& e) {
        if (e.code() == ErrorCode::MalformedBundle) throw;
        malformed(std::string("bad indicator: ") + e.what());
    } catch (const Json::exception& e) {
        malformed(std::string("bad indicator: ") + e.what());
    }
    return ind;
}

void ThreatBundle::check_valid() const {
    if (!has_typed_uuid(bundle_id, "bundle--"))
        malformed("bundle_id must look like bundle--<uuid>: " + bundle_id);
    if (objects.empty()) malformed("bundle holds no objects");
    for (const auto& o : objects) {
        if (!has_typed_uuid(o.id, "indicator--"))
            malformed("indicator id must look like indicator--<uuid>: " + o.id);
        if (o.pattern.empty()) malformed("indicator pattern is empty: " + o.id);
    }
}

Bytes ThreatBundle::canonical_bytes() const { return to_bytes(canonical_dump(to_json())); }

Json ThreatBundle::to_json() const {
    Json objs = Json::array();
    for (const auto& o : objects) objs.push_back(o.to_json());
    return Json{{"created_by", created_by},
                {"id", bundle_id},
                {"objects", std::move(objs)},
                {"type", "bundle"}};
}

ThreatBundle ThreatBundle::from_json(const Json& j) {
    ThreatBundle b;
    try {
        if (j.contains("type") && j.at("type") != "bundle")
            malformed("top-level type is not bundle");
        b.bundle_id = require_string(j, "id");
        b.created_by = require_string(j, "created_by");
        if (!j.contains("objects") || !j.at("objects").is_array())
            malformed("missing array field: objects");
        for (const auto& o : j.at("objects")) b.objects.push_back(Indicator::from_json(o));
    } catch (const TipsError& e) {
        if (e.code() == ErrorCode::MalformedBundle) throw;
        malformed(std::string("bad bundle: ") + e.what());
    } catch (const Json::exception& e) {
        malformed(std::string("bad bundle: ") + e.what());
    }
    b.check_valid();
    return b;
}

Indicator make_indicator(std::string pattern, UtcTime valid_from,
                         std::vector<std::string> labels) {
    Indicator ind;
    ind.id = "indicator--" + new_uuid();
    ind.pattern = std::move(pattern);
    ind.valid_from = valid_from;
    ind.labels = std::move(labels);
    return ind;
}

ThreatBundle make_bundle(std::string created_by, std::vector<Indicator> objects) {
    ThreatBundle b;
    b.bundle_id = "bundle--" + new_uuid();
    b.created_by = std::move(created_by);
    b.objects = std::move(objects);
    b.check_valid();
    return b;
}

// ---------------------------------------------------------------------------
// Wire records

Bytes PublishedKey::signing_bytes() const {
    return to_bytes(canonical_dump(Json{{"channel_id", channel_id},
                                        {"owner", owner},
                                        {"public_key", public_key.to_pem()}}));
}

Json PublishedKey::to_json() const {
    return Json{{"channel_id", channel_id},
                {"owner", owner},
                {"public_key", public_key.to_pem()},
                {"signature", signature.to_json()}};
}

PublishedKey PublishedKey::from_json(const Json& j) {
    PublishedKey pk;
    try {
        pk.owner = j.at("owner").get<std::uint64_t>();
        pk.channel_id = j.at("channel_id").get<std::string>();
        pk.public_key = crypto::PublicKey::from_pem(j.at("public_key").get<std::string>());
        pk.signature = crypto::Signature::from_json(j.at("signature"));
    } catch (const Json::exception& e) {
        fail(ErrorCode::MalformedInput, std::string("bad published key record: ") + e.what());
    }
    return pk;
}

Json Envelope::document() const {
    return Json{{"ciphertext", ciphertext.to_json()},
                {"policy", policy.to_json()},
                {"recipient_key_id", recipient_key_id.hex()},
                {"sender", sender},
                {"wrapped_key", wrapped_key.to_json()}};
}

Envelope Envelope::from_document(const Json& doc) {
    Envelope env;
    try {
        env.sender = doc.at("sender").get<std::uint64_t>();
        env.recipient_key_id =
            crypto::Digest::from_hex(doc.at("recipient_key_id").get<std::string>());
        env.ciphertext = crypto::Ciphertext::from_json(doc.at("ciphertext"));
        env.wrapped_key = crypto::WrappedKey::from_json(doc.at("wrapped_key"));
        env.policy = policy::AccessPolicy::from_json(doc.at("policy"));
    } catch (const Json::exception& e) {
        fail(ErrorCode::MalformedInput, std::string("bad envelope record: ") + e.what());
    }
    env.envelope_id = crypto::digest(to_bytes(canonical_dump(env.document())));
    return env;
}

Json Envelope::to_json() const {
    Json j = document();
    j["envelope_id"] = envelope_id.hex();
    j["posted_tx"] = posted_tx.hex();
    return j;
}

Envelope Envelope::from_json(const Json& j) {
    Envelope env = from_document(j);
    try {
        if (j.contains("envelope_id") &&
            j.at("envelope_id").get<std::string>() != env.envelope_id.hex())
            fail(ErrorCode::MalformedInput, "envelope_id does not match the envelope body");
        if (j.contains("posted_tx"))
            env.posted_tx = crypto::Digest::from_hex(j.at("posted_tx").get<std::string>());
    } catch (const Json::exception& e) {
        fail(ErrorCode::MalformedInput, std::string("bad envelope record: ") + e.what());
    }
    return env;
}

// ---------------------------------------------------------------------------
// Protocol operations

PublishedKey publish_public_key(ledger::Network& net, const Agent& agent,
                                const std::string& channel) {
    if (!agent.exchange_key || !agent.exchange_key->public_key.valid())
        fail(ErrorCode::SetupFailure, "agent holds no exchange keypair to publish");

    PublishedKey pk;
    pk.owner = agent.serial();
    pk.public_key = agent.exchange_key->public_key;
    pk.channel_id = channel;
    pk.signature = crypto::sign(pk.signing_bytes(), agent.cert_key.private_key);

    auto out = run_invoke(net, agent, channel, "publish_key",
                          Json{{"owner", agent.serial()}, {"document", pk.to_json()}});
    if (!out.valid)
        fail(ErrorCode::ContractError, "key publication failed ledger validation");
    return pk;
}

namespace {

// The recipient's current key record, verified against their certificate.
PublishedKey recipient_key(ledger::Network& net, const Agent& sender,
                           const std::string& channel, std::uint64_t recipient) {
    auto cert = net.find_identity(recipient);
    if (!cert)
        fail(ErrorCode::IdentityRejected,
             "recipient is not enrolled: " + std::to_string(recipient));

    Json r;
    try {
        r = run_query(net, sender, channel, "get_object",
                      Json{{"key", contract::pubkey_state_key(recipient)}});
    } catch (const TipsError& e) {
        if (e.code() == ErrorCode::NotFound || e.code() == ErrorCode::Tombstoned)
            fail(ErrorCode::NoPublishedKey,
                 "recipient has no usable key on this channel: " + std::to_string(recipient));
        throw;
    }
    auto payload = base64_decode(r.at("payload").get<std::string>());
    auto pk = PublishedKey::from_json(Json::parse(payload.begin(), payload.end()));

    if (pk.owner != recipient)
        fail(ErrorCode::NoPublishedKey, "published key record names a different owner");
    if (pk.channel_id != channel)
        fail(ErrorCode::NoPublishedKey, "key was published for a different channel");
    if (!crypto::verify(pk.signing_bytes(), pk.signature, cert->public_key))
        fail(ErrorCode::IdentityRejected, "published key signature does not verify");
    return pk;
}

}  // namespace

Envelope send_bundle(ledger::Network& net, const Agent& sender, const std::string& channel,
                     std::uint64_t recipient, const ThreatBundle& bundle,
                     const policy::AccessPolicy& access) {
    bundle.check_valid();
    access.check_valid();
    auto pk = recipient_key(net, sender, channel, recipient);

    Bytes plaintext = bundle.canonical_bytes();
    if (plaintext.size() > crypto::kMaxPlaintext)
        fail(ErrorCode::BundleTooLarge,
             "bundle serializes to " + std::to_string(plaintext.size()) + " bytes, cap is " +
                 std::to_string(crypto::kMaxPlaintext));

    Envelope env;
    env.sender = sender.serial();
    env.recipient_key_id = pk.public_key.key_id();
    env.policy = access;
    {
        // k_m exists only inside this block and is wiped on the way out.
        crypto::SessionKey k_m = crypto::generate_session_key();
        env.ciphertext = crypto::seal(plaintext, k_m);
        env.wrapped_key = crypto::wrap_key(k_m, pk.public_key);
    }
    env.envelope_id = crypto::digest(to_bytes(canonical_dump(env.document())));

    auto out = run_invoke(net, sender, channel, "post_envelope",
                          Json{{"envelope_id", env.envelope_id.hex()},
                               {"document", env.document()}});
    if (!out.valid) fail(ErrorCode::ContractError, "envelope post failed ledger validation");
    env.posted_tx = out.tx_id;
    return env;
}

Envelope fetch_envelope(ledger::Network& net, const Agent& caller, const std::string& channel,
                        const crypto::Digest& envelope_id) {
    auto key = contract::envelope_state_key(envelope_id.hex());
    Json r = run_query(net, caller, channel, "get_object", Json{{"key", key}});
    auto payload = base64_decode(r.at("payload").get<std::string>());

    Json doc = Json::parse(payload.begin(), payload.end(), nullptr, false);
    if (doc.is_discarded())
        fail(ErrorCode::MalformedBundle, "envelope record is not valid JSON");
    Envelope env = Envelope::from_document(doc);
    if (env.envelope_id != envelope_id)
        fail(ErrorCode::IntegrityMismatch, "stored envelope does not hash to its id");

    Json lin = run_query(net, caller, channel, "get_lineage", Json{{"key", key}});
    const auto& entries = lin.at("lineage");
    if (!entries.empty())
        env.posted_tx =
            crypto::Digest::from_hex(entries.at(0).at("tx_id").get<std::string>());
    return env;
}

ThreatBundle receive_bundle(ledger::Network& net, const Agent& recipient,
                            const std::string& channel, const crypto::Digest& envelope_id,
                            const std::string& location) {
    auto attestation = policy::attest(recipient.serial(), recipient.cert_key.private_key,
                                      net.now(), location);
    Envelope env = fetch_envelope(net, recipient, channel, envelope_id);

    // Policy gate comes strictly before any key material is touched.
    auto verdict = policy::evaluate(env.policy, attestation, recipient.certificate, net.now());
    if (!verdict.allowed) {
        run_invoke(net, recipient, channel, "policy_denied",
                   Json{{"envelope_id", envelope_id.hex()}, {"reason", verdict.reason}});
        fail(ErrorCode::PolicyDenied, "access policy denied release: " + verdict.reason);
    }

    if (!recipient.exchange_key || !recipient.exchange_key->private_key.valid() ||
        recipient.exchange_key->key_id != env.recipient_key_id)
        fail(ErrorCode::UnwrapFailure, "envelope is not addressed to this agent's key");

    crypto::SessionKey k_m =
        crypto::unwrap_key(env.wrapped_key, recipient.exchange_key->private_key);
    Bytes plaintext = crypto::open(env.ciphertext, k_m);

    Json body = Json::parse(plaintext.begin(), plaintext.end(), nullptr, false);
    if (body.is_discarded())
        fail(ErrorCode::MalformedBundle, "decrypted payload is not valid JSON");
    ThreatBundle bundle = ThreatBundle::from_json(body);

    auto receipt = run_invoke(net, recipient, channel, "read_receipt",
                              Json{{"envelope_id", envelope_id.hex()}});
    if (!receipt.valid)
        fail(ErrorCode::ContractError, "read receipt failed ledger validation");
    return bundle;
}

std::vector<EnvelopeSummary> list_envelopes(ledger::Network& net, const Agent& agent,
                                            const std::string& channel,
                                            const InboxFilter& filter) {
    auto env_docs = net.state_scan(channel, agent.serial(), "env/");
    auto receipt_docs = net.state_scan(channel, agent.serial(), "receipt/");

    std::set<std::string> read_keys;
    for (const auto& [key, doc] : receipt_docs) {
        if (!doc.is_object() || doc.value("tombstoned", false)) continue;
        read_keys.insert(key);
    }

    std::vector<EnvelopeSummary> out;
    for (const auto& [key, doc] : env_docs) {
        if (!doc.is_object() || doc.value("tombstoned", false)) continue;
        const auto& lineage = doc.at("lineage");
        if (!lineage.is_array() || lineage.empty()) continue;

        EnvelopeSummary s;
        s.envelope_id = key.substr(std::string_view("env/").size());
        s.sender = lineage.at(0).at("actor").get<std::uint64_t>();
        s.posted = parse_rfc3339(lineage.at(0).at("timestamp").get<std::string>());
        s.read = read_keys.count(contract::receipt_state_key(s.envelope_id, agent.serial())) > 0;

        if (filter.unread_only && s.read) continue;
        if (filter.sender && s.sender != *filter.sender) continue;
        out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(), [](const EnvelopeSummary& a, const EnvelopeSummary& b) {
        if (a.posted != b.posted) return a.posted < b.posted;
        return a.envelope_id < b.envelope_id;
    });
    return out;
}

}  // namespace tips::exchange
