#include "tips/ledger.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "tips/errors.hpp"

namespace tips::ledger {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Enumerations

const char* endorsement_policy_name(EndorsementPolicy p) {
    switch (p) {
        case EndorsementPolicy::MajorityOfOrgs: return "MajorityOfOrgs";
        case EndorsementPolicy::AllOrgs: return "AllOrgs";
        case EndorsementPolicy::AnyOrg: return "AnyOrg";
    }
    return "?";
}

EndorsementPolicy endorsement_policy_from_name(const std::string& name) {
    if (name == "MajorityOfOrgs") return EndorsementPolicy::MajorityOfOrgs;
    if (name == "AllOrgs") return EndorsementPolicy::AllOrgs;
    if (name == "AnyOrg") return EndorsementPolicy::AnyOrg;
    fail(ErrorCode::MalformedInput, "unknown endorsement policy: " + name);
}

std::size_t required_endorsements(EndorsementPolicy p, std::size_t member_count) {
    switch (p) {
        case EndorsementPolicy::MajorityOfOrgs: return member_count / 2 + 1;
        case EndorsementPolicy::AllOrgs: return member_count;
        case EndorsementPolicy::AnyOrg: return 1;
    }
    return member_count;
}

const char* audit_event_type_name(AuditEventType t) {
    switch (t) {
        case AuditEventType::KeyPublished: return "KeyPublished";
        case AuditEventType::EnvelopePosted: return "EnvelopePosted";
        case AuditEventType::EnvelopeRead: return "EnvelopeRead";
        case AuditEventType::ObjectStored: return "ObjectStored";
        case AuditEventType::ObjectErased: return "ObjectErased";
        case AuditEventType::PolicyDenied: return "PolicyDenied";
    }
    return "?";
}

AuditEventType audit_event_type_from_name(const std::string& name) {
    for (auto t : {AuditEventType::KeyPublished, AuditEventType::EnvelopePosted,
                   AuditEventType::EnvelopeRead, AuditEventType::ObjectStored,
                   AuditEventType::ObjectErased, AuditEventType::PolicyDenied})
        if (name == audit_event_type_name(t)) return t;
    fail(ErrorCode::MalformedInput, "unknown audit event type: " + name);
}

// ---------------------------------------------------------------------------
// Wire types

Bytes TransactionProposal::signing_bytes() const {
    Json j{{"args", args},
           {"channel_id", channel_id},
           {"op", op},
           {"submitter", submitter},
           {"timestamp", format_rfc3339(timestamp)}};
    return to_bytes(canonical_dump(j));
}

Json TransactionProposal::to_json() const {
    return Json{{"args", args},
                {"channel_id", channel_id},
                {"op", op},
                {"submitter", submitter},
                {"submitter_signature", submitter_signature.to_json()},
                {"timestamp", format_rfc3339(timestamp)},
                {"tx_id", tx_id.hex()}};
}

TransactionProposal TransactionProposal::from_json(const Json& j) {
    TransactionProposal p;
    try {
        p.tx_id = crypto::Digest::from_hex(j.at("tx_id").get<std::string>());
        p.channel_id = j.at("channel_id").get<std::string>();
        p.op = j.at("op").get<std::string>();
        p.args = j.at("args");
        p.submitter = j.at("submitter").get<std::uint64_t>();
        p.submitter_signature = crypto::Signature::from_json(j.at("submitter_signature"));
        p.timestamp = parse_rfc3339(j.at("timestamp").get<std::string>());
    } catch (const Json::exception& e) {
        fail(ErrorCode::MalformedInput, std::string("bad proposal document: ") + e.what());
    }
    return p;
}

TransactionProposal build_proposal(const std::string& channel_id, const std::string& op,
                                   Json args, std::uint64_t submitter_serial,
                                   const crypto::PrivateKey& submitter_key, UtcTime now) {
    TransactionProposal p;
    p.channel_id = channel_id;
    p.op = op;
    p.args = std::move(args);
    p.submitter = submitter_serial;
    p.timestamp = now;
    auto body = p.signing_bytes();
    p.tx_id = crypto::digest(body);
    p.submitter_signature = crypto::sign(body, submitter_key);
    return p;
}

Bytes Endorsement::signing_bytes() const {
    Json j{{"endorser_org", endorser_org},
           {"read_set", read_set},
           {"tx_id", tx_id.hex()},
           {"write_set", write_set}};
    return to_bytes(canonical_dump(j));
}

Json Endorsement::to_json() const {
    return Json{{"endorser_org", endorser_org},
                {"endorser_signature", endorser_signature.to_json()},
                {"read_set", read_set},
                {"tx_id", tx_id.hex()},
                {"write_set", write_set}};
}

Endorsement Endorsement::from_json(const Json& j) {
    Endorsement e;
    try {
        e.tx_id = crypto::Digest::from_hex(j.at("tx_id").get<std::string>());
        e.read_set = j.at("read_set");
        e.write_set = j.at("write_set");
        e.endorser_org = j.at("endorser_org").get<std::string>();
        e.endorser_signature = crypto::Signature::from_json(j.at("endorser_signature"));
    } catch (const Json::exception& ex) {
        fail(ErrorCode::MalformedInput, std::string("bad endorsement document: ") + ex.what());
    }
    return e;
}

Json CommittedTx::to_json() const {
    Json ends = Json::array();
    for (const auto& e : endorsements) ends.push_back(e.to_json());
    return Json{{"endorsements", std::move(ends)},
                {"proposal", proposal.to_json()},
                {"valid", valid}};
}

CommittedTx CommittedTx::from_json(const Json& j) {
    CommittedTx tx;
    try {
        tx.proposal = TransactionProposal::from_json(j.at("proposal"));
        for (const auto& e : j.at("endorsements")) tx.endorsements.push_back(Endorsement::from_json(e));
        tx.valid = j.at("valid").get<bool>();
    } catch (const Json::exception& ex) {
        fail(ErrorCode::MalformedInput, std::string("bad transaction document: ") + ex.what());
    }
    return tx;
}

crypto::Digest Block::compute_hash() const {
    Json txs = Json::array();
    for (const auto& t : transactions) txs.push_back(t.to_json());
    Json j{{"height", height},
           {"prev_hash", prev_hash.hex()},
           {"timestamp", format_rfc3339(timestamp)},
           {"transactions", std::move(txs)}};
    return crypto::digest(to_bytes(canonical_dump(j)));
}

Json Block::to_json() const {
    Json txs = Json::array();
    for (const auto& t : transactions) txs.push_back(t.to_json());
    return Json{{"block_hash", block_hash.hex()},
                {"height", height},
                {"prev_hash", prev_hash.hex()},
                {"timestamp", format_rfc3339(timestamp)},
                {"transactions", std::move(txs)}};
}

Block Block::from_json(const Json& j) {
    Block b;
    try {
        b.height = j.at("height").get<std::uint64_t>();
        b.prev_hash = crypto::Digest::from_hex(j.at("prev_hash").get<std::string>());
        b.timestamp = parse_rfc3339(j.at("timestamp").get<std::string>());
        for (const auto& t : j.at("transactions")) b.transactions.push_back(CommittedTx::from_json(t));
        b.block_hash = crypto::Digest::from_hex(j.at("block_hash").get<std::string>());
    } catch (const Json::exception& ex) {
        fail(ErrorCode::MalformedInput, std::string("bad block document: ") + ex.what());
    }
    return b;
}

crypto::Digest chain_digest(const Block& b) {
    return crypto::digest(to_bytes(canonical_dump(b.to_json())));
}

Json AuditEvent::to_json() const {
    return Json{{"actor", actor},
                {"event_type", audit_event_type_name(event_type)},
                {"tx_id", tx_id.hex()},
                {"wall_time", format_rfc3339(wall_time)}};
}

// ---------------------------------------------------------------------------
// Channel

Channel::Channel(std::string id, std::vector<std::string> members, EndorsementPolicy policy,
                 ChannelMode mode, UtcTime genesis_time, const fs::path& offchain_root)
    : id_(std::move(id)),
      members_(std::move(members)),
      policy_(policy),
      mode_(mode),
      offchain_(offchain_root) {
    std::sort(members_.begin(), members_.end());
    members_.erase(std::unique(members_.begin(), members_.end()), members_.end());
    if (members_.empty()) fail(ErrorCode::EmptyMembership, "channel requires at least one org");

    Block genesis;
    genesis.height = 0;
    genesis.prev_hash = crypto::Digest{};  // 32 zero octets
    genesis.timestamp = genesis_time;
    validate_and_commit(std::move(genesis));
}

std::optional<std::pair<Json, std::uint64_t>> Channel::get(const std::string& key) const {
    auto it = state_.find(key);
    if (it == state_.end()) return std::nullopt;
    return std::make_pair(it->second.value, it->second.version);
}

bool Channel::is_member(const std::string& org) const {
    return std::binary_search(members_.begin(), members_.end(), org);
}

std::vector<bool> Channel::commit_core(Block& block) {
    if (block.height != blocks_.size())
        fail(ErrorCode::BrokenChain,
             "candidate height " + std::to_string(block.height) + " does not extend tip " +
                 std::to_string(blocks_.size()));
    auto expected_prev = blocks_.empty() ? crypto::Digest{} : chain_digest(blocks_.back());
    if (block.prev_hash != expected_prev)
        fail(ErrorCode::BrokenChain, "candidate prev_hash does not match chain tip");

    std::vector<bool> validity;
    validity.reserve(block.transactions.size());
    for (auto& tx : block.transactions) {
        // MVCC: every version read during simulation must still be current.
        // Transactions validate sequentially, so earlier writes in this block
        // invalidate later conflicting reads.
        bool ok = !tx.endorsements.empty();
        if (ok) {
            for (const auto& r : tx.endorsements[0].read_set) {
                auto key = r.at("key").get<std::string>();
                auto version = r.at("version").get<std::uint64_t>();
                auto it = state_.find(key);
                std::uint64_t current = it == state_.end() ? 0 : it->second.version;
                if (current != version) {
                    ok = false;
                    break;
                }
            }
        }
        if (ok) {
            for (const auto& w : tx.endorsements[0].write_set) {
                auto key = w.at("key").get<std::string>();
                auto it = state_.find(key);
                std::uint64_t next = it == state_.end() ? 1 : it->second.version + 1;
                state_[key] = {w.at("value"), next};
            }
        }
        tx.valid = ok;
        validity.push_back(ok);
    }
    return validity;
}

std::vector<bool> Channel::validate_and_commit(Block block) {
    auto validity = commit_core(block);
    block.block_hash = block.compute_hash();
    blocks_.push_back(std::move(block));
    return validity;
}

void Channel::replay_block(const Block& stored) {
    Block b = stored;
    auto validity = commit_core(b);
    for (std::size_t i = 0; i < validity.size(); ++i) {
        if (validity[i] != stored.transactions[i].valid)
            fail(ErrorCode::BrokenChain,
                 "replay validity divergence at height " + std::to_string(stored.height));
    }
    b.block_hash = b.compute_hash();
    if (b.block_hash != stored.block_hash)
        fail(ErrorCode::BrokenChain,
             "replay hash divergence at height " + std::to_string(stored.height));
    blocks_.push_back(std::move(b));
}

std::vector<std::string> Channel::block_lines() const {
    std::vector<std::string> lines;
    lines.reserve(blocks_.size());
    for (const auto& b : blocks_) lines.push_back(canonical_dump(b.to_json()));
    return lines;
}

std::optional<std::uint64_t> Channel::verify_chain() const {
    return verify_block_lines(block_lines());
}

Json Channel::meta_json() const {
    return Json{{"channel_id", id_},
                {"closed", closed_},
                {"members", members_},
                {"mode", mode_ == ChannelMode::Session ? "session" : "long_term"},
                {"policy", endorsement_policy_name(policy_)}};
}

std::optional<std::uint64_t> verify_block_lines(const std::vector<std::string>& lines) {
    crypto::Digest prev{};  // genesis predecessor: 32 zero octets
    for (std::size_t i = 0; i < lines.size(); ++i) {
        Block b;
        try {
            b = Block::from_json(Json::parse(lines[i]));
        } catch (...) {
            return i;  // unparseable serialization counts as a bad block
        }
        if (b.height != i) return i;
        if (b.prev_hash != prev) return i;
        if (b.compute_hash() != b.block_hash) return i;
        // The stored line must be the canonical encoding: tampering that
        // survives parsing but changes bytes is still detected.
        if (canonical_dump(b.to_json()) != lines[i]) return i;
        prev = crypto::digest(to_bytes(lines[i]));
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Network

Network::Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
    if (!cfg_.clock) cfg_.clock = &fallback_clock_;
    if (cfg_.data_dir.empty())
        fail(ErrorCode::SetupFailure, "network requires a data directory");
    fs::create_directories(cfg_.data_dir);
    if (cfg_.batch_size == 0) fail(ErrorCode::SetupFailure, "batch size must be positive");
    if (cfg_.batch_timeout.count() <= 0)
        fail(ErrorCode::SetupFailure, "batch timeout must be positive");
}

Network::~Network() { stop_pump(); }

UtcTime Network::now() const { return cfg_.clock->now(); }

void Network::add_org(const std::string& name, std::size_t peer_count) {
    if (name.empty()) fail(ErrorCode::MalformedInput, "org name must be non-empty");
    if (peer_count == 0) fail(ErrorCode::MalformedInput, "org needs at least one peer");
    std::lock_guard lock(mu_);
    for (const auto& o : orgs_)
        if (o.name == name) fail(ErrorCode::MalformedInput, "org already exists: " + name);
    OrgPeers org;
    org.name = name;
    for (std::size_t i = 0; i < peer_count; ++i) org.peers.push_back(crypto::generate_keypair());
    orgs_.push_back(std::move(org));
}

std::vector<std::string> Network::org_names() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> names;
    for (const auto& o : orgs_) names.push_back(o.name);
    return names;
}

void Network::set_msp(identity::MspConfig msp) {
    msp.check_valid();
    std::lock_guard lock(mu_);
    msp_ = std::move(msp);
}

identity::MspConfig Network::msp_config() const {
    std::lock_guard lock(mu_);
    return msp_;
}

void Network::update_crl(identity::Crl crl) {
    std::lock_guard lock(mu_);
    auto updated = msp_;
    updated.crl = std::move(crl);
    updated.check_valid();  // the new CRL must be signed by a trusted CA
    msp_ = std::move(updated);
}

void Network::enroll(const identity::Certificate& cert) {
    std::lock_guard lock(mu_);
    identity::enroll(msp_, cert, now());  // throws when the cert does not validate
    identities_[cert.serial] = cert;
}

std::optional<identity::Certificate> Network::find_identity(std::uint64_t serial) const {
    std::lock_guard lock(mu_);
    auto it = identities_.find(serial);
    if (it == identities_.end()) return std::nullopt;
    return it->second;
}

void Network::create_channel(const std::string& id, std::vector<std::string> members,
                             EndorsementPolicy policy, ChannelMode mode) {
    if (id.empty()) fail(ErrorCode::MalformedInput, "channel id must be non-empty");
    if (members.empty()) fail(ErrorCode::EmptyMembership, "channel requires at least one org");
    std::lock_guard lock(mu_);
    if (channels_.count(id)) fail(ErrorCode::DuplicateChannel, "channel already exists: " + id);
    for (const auto& m : members) {
        bool known = false;
        for (const auto& o : orgs_)
            if (o.name == m) known = true;
        if (!known) fail(ErrorCode::MalformedInput, "unknown org in membership: " + m);
    }
    ChannelRuntime rt;
    rt.channel = std::make_unique<Channel>(id, std::move(members), policy, mode, now(),
                                           cfg_.data_dir / "offchain" / id);
    rt.last_cut = std::chrono::steady_clock::now();
    channels_.emplace(id, std::move(rt));
}

std::vector<std::string> Network::channel_ids() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> ids;
    for (const auto& [id, rt] : channels_) ids.push_back(id);
    return ids;
}

const Channel& Network::channel(const std::string& id) const {
    std::lock_guard lock(mu_);
    return *runtime(id).channel;
}

Network::ChannelRuntime& Network::runtime(const std::string& channel_id) {
    auto it = channels_.find(channel_id);
    if (it == channels_.end()) fail(ErrorCode::UnknownChannel, "no such channel: " + channel_id);
    return it->second;
}

const Network::ChannelRuntime& Network::runtime(const std::string& channel_id) const {
    auto it = channels_.find(channel_id);
    if (it == channels_.end()) fail(ErrorCode::UnknownChannel, "no such channel: " + channel_id);
    return it->second;
}

const identity::Certificate& Network::checked_identity_locked(std::uint64_t serial) const {
    auto it = identities_.find(serial);
    if (it == identities_.end())
        fail(ErrorCode::IdentityRejected, "unknown identity serial: " + std::to_string(serial));
    auto result = identity::validate_identity(msp_, it->second, cfg_.clock->now());
    if (result != identity::ValidationResult::Valid)
        fail(ErrorCode::IdentityRejected,
             std::string("identity rejected: ") +
                 std::string(identity::validation_result_name(result)));
    return it->second;
}

void Network::check_member_caller_locked(const ChannelRuntime& rt, std::uint64_t caller) const {
    const auto& cert = checked_identity_locked(caller);
    if (!rt.channel->is_member(cert.attributes.org))
        fail(ErrorCode::NotAMember, "caller org is not a channel member: " + cert.attributes.org);
}

EndorseResult Network::endorse(const std::string& channel_id,
                               const TransactionProposal& proposal, const std::string& org,
                               std::size_t peer_index) {
    std::lock_guard lock(mu_);
    return endorse_locked(runtime(channel_id), proposal, org, peer_index);
}

EndorseResult Network::endorse_locked(ChannelRuntime& rt, const TransactionProposal& proposal,
                                      const std::string& org, std::size_t peer_index) {
    Channel& ch = *rt.channel;
    if (ch.closed()) fail(ErrorCode::ChannelClosed, "channel is closed: " + ch.id());
    if (proposal.channel_id != ch.id())
        fail(ErrorCode::MalformedInput, "proposal targets a different channel");
    if (!ch.is_member(org)) fail(ErrorCode::NotAMember, "org is not a channel member: " + org);

    const OrgPeers* peers = nullptr;
    for (const auto& o : orgs_)
        if (o.name == org) peers = &o;
    if (!peers || peer_index >= peers->peers.size())
        fail(ErrorCode::SetupFailure, "no endorsing peer available for org: " + org);

    // Identity gate: the submitter must be enrolled and still valid, the
    // proposal internally consistent and signed by the submitter's key.
    const auto& cert = checked_identity_locked(proposal.submitter);
    if (!ch.is_member(cert.attributes.org))
        fail(ErrorCode::NotAMember,
             "submitter org is not a channel member: " + cert.attributes.org);
    if (!msp_.access_policies.empty()) {
        auto it = msp_.access_policies.find(cert.attributes.role);
        if (it == msp_.access_policies.end() || !it->second.count(proposal.op))
            fail(ErrorCode::NotAuthorised,
                 "role " + cert.attributes.role + " may not call " + proposal.op);
    }
    auto body = proposal.signing_bytes();
    if (crypto::digest(body) != proposal.tx_id)
        fail(ErrorCode::MalformedInput, "proposal tx_id does not match its body");
    if (!crypto::verify(body, proposal.submitter_signature, cert.public_key))
        fail(ErrorCode::IdentityRejected, "proposal signature does not verify");

    // Simulate against committed state; contract failures propagate.
    contract::TxContext ctx(ch, ch.offchain(), proposal.tx_id, proposal.submitter,
                            cert.attributes.role, proposal.timestamp, cfg_.offchain_threshold);
    Json result = contract::execute(ctx, proposal.op, proposal.args);

    Endorsement e;
    e.tx_id = proposal.tx_id;
    auto rw = ctx.rw_set();
    e.read_set = rw.at("read_set");
    e.write_set = rw.at("write_set");
    e.endorser_org = org;
    e.endorser_signature = crypto::sign(e.signing_bytes(), peers->peers[peer_index].private_key);
    return {std::move(e), std::move(result)};
}

void Network::submit(const std::string& channel_id, const TransactionProposal& proposal,
                     std::vector<Endorsement> endorsements) {
    std::vector<Block> cut;
    CommitListener listener;
    {
        std::lock_guard lock(mu_);
        auto& rt = runtime(channel_id);
        Channel& ch = *rt.channel;
        if (ch.closed()) fail(ErrorCode::ChannelClosed, "channel is closed: " + ch.id());
        if (proposal.channel_id != ch.id())
            fail(ErrorCode::MalformedInput, "proposal targets a different channel");

        auto body = proposal.signing_bytes();
        if (crypto::digest(body) != proposal.tx_id)
            fail(ErrorCode::MalformedInput, "proposal tx_id does not match its body");
        const auto& cert = checked_identity_locked(proposal.submitter);
        if (!crypto::verify(body, proposal.submitter_signature, cert.public_key))
            fail(ErrorCode::IdentityRejected, "proposal signature does not verify");

        if (endorsements.empty())
            fail(ErrorCode::PolicyNotMet, "submission carries no endorsements");

        // All endorsements must target this tx, agree on the rw-sets, come
        // from member orgs, and verify under a registered peer key.
        const std::string reference = canonical_dump(
            Json{{"read_set", endorsements[0].read_set}, {"write_set", endorsements[0].write_set}});
        std::set<std::string> distinct_orgs;
        for (const auto& e : endorsements) {
            if (e.tx_id != proposal.tx_id)
                fail(ErrorCode::MalformedInput, "endorsement targets a different transaction");
            if (!ch.is_member(e.endorser_org))
                fail(ErrorCode::NotAMember,
                     "endorsing org is not a channel member: " + e.endorser_org);
            auto shape = canonical_dump(Json{{"read_set", e.read_set}, {"write_set", e.write_set}});
            if (shape != reference)
                fail(ErrorCode::EndorsementMismatch,
                     "endorsements disagree on read/write sets");
            const OrgPeers* peers = nullptr;
            for (const auto& o : orgs_)
                if (o.name == e.endorser_org) peers = &o;
            bool verified = false;
            if (peers) {
                for (const auto& kp : peers->peers) {
                    if (kp.key_id == e.endorser_signature.signer_key_id &&
                        crypto::verify(e.signing_bytes(), e.endorser_signature, kp.public_key)) {
                        verified = true;
                        break;
                    }
                }
            }
            if (!verified)
                fail(ErrorCode::IdentityRejected,
                     "endorsement signature does not verify for org " + e.endorser_org);
            distinct_orgs.insert(e.endorser_org);
        }
        auto required = required_endorsements(ch.policy(), ch.members().size());
        if (distinct_orgs.size() < required)
            fail(ErrorCode::PolicyNotMet,
                 "policy requires " + std::to_string(required) + " distinct orgs, got " +
                     std::to_string(distinct_orgs.size()));

        rt.queue.push_back({proposal, std::move(endorsements)});
        if (cfg_.immediate_commit) {
            while (auto block = cut_block_locked(rt)) cut.push_back(std::move(*block));
        }
        listener = listener_;
    }
    if (!cut.empty()) {
        commit_cv_.notify_all();
        if (listener)
            for (const auto& b : cut) listener(channel_id, b);
    }
}

std::optional<Block> Network::cut_block_locked(ChannelRuntime& rt) {
    if (rt.queue.empty()) return std::nullopt;
    Channel& ch = *rt.channel;
    Block b;
    b.height = ch.blocks().size();
    b.prev_hash = chain_digest(ch.blocks().back());
    b.timestamp = now();
    std::size_t take = std::min(cfg_.batch_size, rt.queue.size());
    for (std::size_t i = 0; i < take; ++i) {
        auto& pending = rt.queue.front();
        CommittedTx tx;
        tx.proposal = std::move(pending.proposal);
        tx.endorsements = std::move(pending.endorsements);
        b.transactions.push_back(std::move(tx));
        rt.queue.pop_front();
    }
    ch.validate_and_commit(std::move(b));
    const Block& committed = ch.blocks().back();
    apply_side_effects_locked(rt, committed);
    record_outcomes_locked(committed);
    rt.last_cut = std::chrono::steady_clock::now();
    return committed;
}

void Network::apply_side_effects_locked(ChannelRuntime& rt, const Block& block) {
    Channel& ch = *rt.channel;
    for (const auto& tx : block.transactions) {
        if (!tx.valid || tx.endorsements.empty()) continue;
        if (tx.proposal.op == "erase_object") {
            // Destroy the off-chain payload unless another live object still
            // references the same content-addressed file.
            auto key = tx.proposal.args.value("key", std::string());
            for (const auto& w : tx.endorsements[0].write_set) {
                if (w.at("key").get<std::string>() != key) continue;
                const Json& doc = w.at("value");
                if (!doc.contains("off_chain_ref")) break;
                auto ref = doc.at("off_chain_ref").get<std::string>();
                bool still_referenced = false;
                for (const auto& [k, entry] : ch.world_state()) {
                    if (k == key || !entry.value.is_object()) continue;
                    if (entry.value.value("off_chain_ref", std::string()) == ref &&
                        !entry.value.value("tombstoned", true)) {
                        still_referenced = true;
                        break;
                    }
                }
                if (!still_referenced) ch.offchain().destroy(ref);
                break;
            }
        } else if (tx.proposal.op == "read_receipt" && rt.channel->mode() == ChannelMode::Session &&
                   !tx.endorsements[0].write_set.empty()) {
            // Session channels close once the first read receipt lands.
            ch.close();
        }
    }
}

void Network::record_outcomes_locked(const Block& block) {
    for (const auto& tx : block.transactions) {
        TxOutcome out;
        out.tx_id = tx.proposal.tx_id;
        out.valid = tx.valid;
        out.height = block.height;
        outcomes_[tx.proposal.tx_id.hex()] = std::move(out);
    }
}

std::optional<TxOutcome> Network::wait_for(const crypto::Digest& tx_id,
                                           std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    auto hex = tx_id.hex();
    bool found = commit_cv_.wait_for(lock, timeout, [&] { return outcomes_.count(hex) > 0; });
    if (!found) return std::nullopt;
    return outcomes_.at(hex);
}

void Network::flush(const std::string& channel_id) {
    std::vector<Block> cut;
    CommitListener listener;
    {
        std::lock_guard lock(mu_);
        auto& rt = runtime(channel_id);
        while (auto block = cut_block_locked(rt)) cut.push_back(std::move(*block));
        listener = listener_;
    }
    if (!cut.empty()) {
        commit_cv_.notify_all();
        if (listener)
            for (const auto& b : cut) listener(channel_id, b);
    }
}

void Network::flush_all() {
    for (const auto& id : channel_ids()) flush(id);
}

TxOutcome Network::invoke(const std::string& channel_id, const TransactionProposal& proposal) {
    std::vector<std::string> members;
    EndorsementPolicy policy;
    {
        std::lock_guard lock(mu_);
        const auto& rt = runtime(channel_id);
        members = rt.channel->members();
        policy = rt.channel->policy();
    }
    auto needed = required_endorsements(policy, members.size());
    std::vector<Endorsement> endorsements;
    Json result;
    for (std::size_t i = 0; i < needed; ++i) {
        auto er = endorse(channel_id, proposal, members[i]);
        result = std::move(er.result);
        endorsements.push_back(std::move(er.endorsement));
    }
    submit(channel_id, proposal, std::move(endorsements));
    auto out = wait_for(proposal.tx_id, std::chrono::seconds(60));
    if (!out) fail(ErrorCode::SetupFailure, "transaction did not commit within the wait window");
    out->result = std::move(result);
    return *out;
}

Json Network::query(const std::string& channel_id, const TransactionProposal& proposal,
                    const std::string& org) {
    std::lock_guard lock(mu_);
    auto& rt = runtime(channel_id);
    auto use_org = org.empty() ? rt.channel->members().front() : org;
    auto er = endorse_locked(rt, proposal, use_org, 0);
    if (!er.endorsement.write_set.empty())
        fail(ErrorCode::ContractError, "query operations must not write state");
    return er.result;
}

std::vector<std::pair<std::string, Json>> Network::state_scan(const std::string& channel_id,
                                                              std::uint64_t caller_serial,
                                                              const std::string& prefix) const {
    std::lock_guard lock(mu_);
    const auto& rt = runtime(channel_id);
    check_member_caller_locked(rt, caller_serial);
    std::vector<std::pair<std::string, Json>> hits;
    for (const auto& [key, entry] : rt.channel->world_state()) {
        if (key.rfind(prefix, 0) == 0) hits.emplace_back(key, entry.value);
    }
    return hits;
}

std::vector<AuditEvent> Network::audit_query(const std::string& channel_id,
                                             std::uint64_t caller_serial,
                                             const AuditFilter& filter) const {
    std::lock_guard lock(mu_);
    const auto& rt = runtime(channel_id);
    check_member_caller_locked(rt, caller_serial);

    std::vector<AuditEvent> events;
    for (const auto& block : rt.channel->blocks()) {
        for (const auto& tx : block.transactions) {
            if (!tx.valid) continue;
            std::optional<AuditEventType> type;
            const auto& op = tx.proposal.op;
            if (op == "put_object") type = AuditEventType::ObjectStored;
            else if (op == "erase_object") type = AuditEventType::ObjectErased;
            else if (op == "publish_key") type = AuditEventType::KeyPublished;
            else if (op == "post_envelope") type = AuditEventType::EnvelopePosted;
            else if (op == "policy_denied") type = AuditEventType::PolicyDenied;
            else if (op == "read_receipt" && !tx.endorsements.empty() &&
                     !tx.endorsements[0].write_set.empty())
                type = AuditEventType::EnvelopeRead;  // duplicates write nothing: no event
            if (!type) continue;

            AuditEvent ev;
            ev.event_type = *type;
            ev.actor = tx.proposal.submitter;
            ev.tx_id = tx.proposal.tx_id;
            ev.wall_time = block.timestamp;
            if (filter.actor && ev.actor != *filter.actor) continue;
            if (filter.event_type && ev.event_type != *filter.event_type) continue;
            if (filter.time_range &&
                (ev.wall_time < filter.time_range->first || ev.wall_time >= filter.time_range->second))
                continue;
            events.push_back(std::move(ev));
        }
    }
    return events;
}

void Network::set_commit_listener(CommitListener listener) {
    std::lock_guard lock(mu_);
    listener_ = std::move(listener);
}

void Network::start_pump() {
    std::lock_guard lock(mu_);
    if (pump_running_) return;
    pump_running_ = true;
    pump_ = std::thread([this] { pump_loop(); });
}

void Network::stop_pump() {
    {
        std::lock_guard lock(mu_);
        if (!pump_running_) return;
        pump_running_ = false;
    }
    pump_cv_.notify_all();
    if (pump_.joinable()) pump_.join();
}

void Network::pump_loop() {
    std::unique_lock lock(mu_);
    while (pump_running_) {
        pump_cv_.wait_for(lock, std::chrono::milliseconds(1));
        if (!pump_running_) break;
        std::vector<std::pair<std::string, Block>> cut;
        auto steady_now = std::chrono::steady_clock::now();
        for (auto& [id, rt] : channels_) {
            if (rt.queue.empty()) continue;
            if (steady_now - rt.last_cut < cfg_.batch_timeout) continue;
            if (auto block = cut_block_locked(rt)) cut.emplace_back(id, std::move(*block));
        }
        if (!cut.empty()) {
            auto listener = listener_;
            lock.unlock();
            commit_cv_.notify_all();
            if (listener)
                for (const auto& [id, b] : cut) listener(id, b);
            lock.lock();
        }
    }
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write file: " + path.string());
    out << content;
    if (!out) fail(ErrorCode::IoError, "short write to file: " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot read file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void Network::save() const {
    std::lock_guard lock(mu_);
    fs::create_directories(cfg_.data_dir);

    Json orgs = Json::array();
    for (const auto& o : orgs_) {
        Json peers = Json::array();
        for (const auto& kp : o.peers) peers.push_back(kp.private_key.to_pem());
        orgs.push_back(Json{{"name", o.name}, {"peers", std::move(peers)}});
    }
    Json identities = Json::array();
    for (const auto& [serial, cert] : identities_) identities.push_back(cert.to_json());
    Json net{{"batch_size", cfg_.batch_size},
             {"batch_timeout_ms", cfg_.batch_timeout.count()},
             {"identities", std::move(identities)},
             {"msp", msp_.to_json()},
             {"offchain_threshold", cfg_.offchain_threshold},
             {"orgs", std::move(orgs)}};
    write_file(cfg_.data_dir / "network.json", canonical_dump(net) + "\n");

    for (const auto& [id, rt] : channels_) {
        auto dir = cfg_.data_dir / "channels" / id;
        fs::create_directories(dir);
        write_file(dir / "meta.json", canonical_dump(rt.channel->meta_json()) + "\n");
        std::string blocks;
        for (const auto& line : rt.channel->block_lines()) {
            blocks += line;
            blocks += '\n';
        }
        write_file(dir / "blocks.jsonl", blocks);
        Json state = Json::object();
        for (const auto& [key, entry] : rt.channel->world_state())
            state[key] = Json{{"value", entry.value}, {"version", entry.version}};
        write_file(dir / "state.json", canonical_dump(state) + "\n");
    }
}

std::unique_ptr<Network> Network::load(NetworkConfig cfg) {
    auto net_path = cfg.data_dir / "network.json";
    if (!fs::exists(net_path))
        fail(ErrorCode::IoError, "no network state under: " + cfg.data_dir.string());
    Json net;
    try {
        net = Json::parse(read_file(net_path));
    } catch (const Json::exception& e) {
        fail(ErrorCode::MalformedInput, std::string("bad network document: ") + e.what());
    }

    try {
        cfg.batch_size = net.at("batch_size").get<std::size_t>();
        cfg.batch_timeout = std::chrono::milliseconds(net.at("batch_timeout_ms").get<long>());
        cfg.offchain_threshold = net.at("offchain_threshold").get<std::size_t>();
        auto network = std::make_unique<Network>(cfg);
        network->msp_ = identity::MspConfig::from_json(net.at("msp"));
        for (const auto& o : net.at("orgs")) {
            OrgPeers org;
            org.name = o.at("name").get<std::string>();
            for (const auto& pem : o.at("peers")) {
                crypto::KeyPair kp;
                kp.private_key = crypto::PrivateKey::from_pem(pem.get<std::string>());
                kp.public_key = kp.private_key.derive_public();
                kp.key_id = kp.public_key.key_id();
                org.peers.push_back(std::move(kp));
            }
            network->orgs_.push_back(std::move(org));
        }
        for (const auto& c : net.at("identities")) {
            auto cert = identity::Certificate::from_json(c);
            network->identities_[cert.serial] = std::move(cert);
        }

        auto channels_dir = cfg.data_dir / "channels";
        if (fs::exists(channels_dir)) {
            for (const auto& entry : fs::directory_iterator(channels_dir)) {
                if (!entry.is_directory()) continue;
                auto meta = Json::parse(read_file(entry.path() / "meta.json"));
                auto id = meta.at("channel_id").get<std::string>();
                auto members = meta.at("members").get<std::vector<std::string>>();
                auto policy = endorsement_policy_from_name(meta.at("policy").get<std::string>());
                auto mode = meta.at("mode").get<std::string>() == "session" ? ChannelMode::Session
                                                                            : ChannelMode::LongTerm;

                std::vector<std::string> lines;
                std::istringstream blocks(read_file(entry.path() / "blocks.jsonl"));
                for (std::string line; std::getline(blocks, line);)
                    if (!line.empty()) lines.push_back(line);
                if (lines.empty())
                    fail(ErrorCode::BrokenChain, "channel has no persisted blocks: " + id);
                if (auto bad = verify_block_lines(lines))
                    fail(ErrorCode::BrokenChain,
                         "persisted chain corrupt at height " + std::to_string(*bad));

                // Rebuild: construct with the persisted genesis, then replay.
                auto genesis = Block::from_json(Json::parse(lines[0]));
                ChannelRuntime rt;
                rt.channel = std::make_unique<Channel>(id, members, policy, mode,
                                                       genesis.timestamp,
                                                       cfg.data_dir / "offchain" / id);
                rt.last_cut = std::chrono::steady_clock::now();
                if (chain_digest(rt.channel->blocks().front()) != chain_digest(genesis))
                    fail(ErrorCode::BrokenChain, "genesis divergence on replay: " + id);
                for (std::size_t i = 1; i < lines.size(); ++i) {
                    auto stored = Block::from_json(Json::parse(lines[i]));
                    rt.channel->replay_block(stored);
                    network->apply_side_effects_locked(rt, rt.channel->blocks().back());
                    network->record_outcomes_locked(rt.channel->blocks().back());
                }
                if (meta.at("closed").get<bool>()) rt.channel->close();

                // Replay determinism: the rebuilt state must match the snapshot.
                auto state_path = entry.path() / "state.json";
                if (fs::exists(state_path)) {
                    Json snapshot = Json::parse(read_file(state_path));
                    Json rebuilt = Json::object();
                    for (const auto& [key, se] : rt.channel->world_state())
                        rebuilt[key] = Json{{"value", se.value}, {"version", se.version}};
                    if (rebuilt != snapshot)
                        fail(ErrorCode::BrokenChain,
                             "replayed state diverges from snapshot: " + id);
                }
                network->channels_.emplace(id, std::move(rt));
            }
        }
        return network;
    } catch (const Json::exception& e) {
        fail(ErrorCode::MalformedInput, std::string("bad persisted state: ") + e.what());
    }
}

}  // namespace tips::ledger
