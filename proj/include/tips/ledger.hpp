#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tips/canonical.hpp"
#include "tips/contract.hpp"
#include "tips/crypto.hpp"
#include "tips/identity.hpp"
#include "tips/timeutil.hpp"

namespace tips::ledger {

enum class EndorsementPolicy { MajorityOfOrgs, AllOrgs, AnyOrg };

const char* endorsement_policy_name(EndorsementPolicy p);
EndorsementPolicy endorsement_policy_from_name(const std::string& name);

// Endorsements required from distinct member orgs before ordering.
std::size_t required_endorsements(EndorsementPolicy p, std::size_t member_count);

// Session channels close permanently once the first read receipt commits.
enum class ChannelMode { LongTerm, Session };

struct TransactionProposal {
    crypto::Digest tx_id;  // digest of the canonical proposal body
    std::string channel_id;
    std::string op;
    Json args;
    std::uint64_t submitter = 0;  // certificate serial
    crypto::Signature submitter_signature;
    UtcTime timestamp{};

    Bytes signing_bytes() const;  // canonical body: everything except tx_id + signature
    Json to_json() const;
    static TransactionProposal from_json(const Json& j);
};

// Client-side construction: derives tx_id and signs with the submitter's
// certificate key.
TransactionProposal build_proposal(const std::string& channel_id, const std::string& op,
                                   Json args, std::uint64_t submitter_serial,
                                   const crypto::PrivateKey& submitter_key, UtcTime now);

struct Endorsement {
    crypto::Digest tx_id;
    Json read_set;   // [{key, version}], version 0 records an absent read
    Json write_set;  // [{key, value}]
    std::string endorser_org;
    crypto::Signature endorser_signature;

    Bytes signing_bytes() const;
    Json to_json() const;
    static Endorsement from_json(const Json& j);
};

struct EndorseResult {
    Endorsement endorsement;
    Json result;  // simulation output of the contract op
};

struct CommittedTx {
    TransactionProposal proposal;
    std::vector<Endorsement> endorsements;
    bool valid = false;  // set by MVCC validation at commit

    Json to_json() const;
    static CommittedTx from_json(const Json& j);
};

struct Block {
    std::uint64_t height = 0;
    crypto::Digest prev_hash;  // genesis: 32 zero octets
    UtcTime timestamp{};
    std::vector<CommittedTx> transactions;
    crypto::Digest block_hash;  // digest over the canonical encoding of the fields above

    crypto::Digest compute_hash() const;
    Json to_json() const;
    static Block from_json(const Json& j);
};

// Digest of the full canonical encoding (block_hash included): the value the
// next block must carry as prev_hash.
crypto::Digest chain_digest(const Block& b);

enum class AuditEventType {
    KeyPublished,
    EnvelopePosted,
    EnvelopeRead,
    ObjectStored,
    ObjectErased,
    PolicyDenied,
};

const char* audit_event_type_name(AuditEventType t);
AuditEventType audit_event_type_from_name(const std::string& name);

struct AuditEvent {
    AuditEventType event_type{};
    std::uint64_t actor = 0;  // submitter certificate serial
    crypto::Digest tx_id;
    UtcTime wall_time{};  // commit time (block timestamp)

    Json to_json() const;
};

struct AuditFilter {
    std::optional<std::uint64_t> actor;
    std::optional<AuditEventType> event_type;
    // [from, to): inclusive start, exclusive end.
    std::optional<std::pair<UtcTime, UtcTime>> time_range;
};

struct StateEntry {
    Json value;
    std::uint64_t version = 0;  // MVCC counter, bumps on every applied write
};

// One ledger instance: ordered blocks plus the world state they produce.
// Mutation happens only through commit; thread safety is the owning
// Network's responsibility.
class Channel : public contract::StateView {
  public:
    Channel(std::string id, std::vector<std::string> members, EndorsementPolicy policy,
            ChannelMode mode, UtcTime genesis_time, const std::filesystem::path& offchain_root);

    std::optional<std::pair<Json, std::uint64_t>> get(const std::string& key) const override;

    const std::string& id() const { return id_; }
    const std::vector<std::string>& members() const { return members_; }
    bool is_member(const std::string& org) const;
    EndorsementPolicy policy() const { return policy_; }
    ChannelMode mode() const { return mode_; }
    bool closed() const { return closed_; }
    void close() { closed_ = true; }
    const std::vector<Block>& blocks() const { return blocks_; }
    const std::map<std::string, StateEntry>& world_state() const { return state_; }
    contract::OffchainStore& offchain() { return offchain_; }

    // MVCC-validates the candidate against current state, applies the writes
    // of valid transactions, finalizes block_hash, and appends. Returns the
    // per-transaction validity flags. Throws BROKEN_CHAIN when the candidate
    // does not extend the tip.
    std::vector<bool> validate_and_commit(Block block);

    // Re-commits a block loaded from disk, enforcing that recomputed validity
    // flags and block hash match the stored ones (replay determinism).
    void replay_block(const Block& stored);

    // nullopt when intact, otherwise the height of the first bad block.
    std::optional<std::uint64_t> verify_chain() const;
    // Canonical one-line-per-block serialization (the persisted form).
    std::vector<std::string> block_lines() const;

    Json meta_json() const;

  private:
    std::vector<bool> commit_core(Block& block);

    std::string id_;
    std::vector<std::string> members_;  // sorted unique org ids
    EndorsementPolicy policy_;
    ChannelMode mode_;
    bool closed_ = false;
    std::vector<Block> blocks_;
    std::map<std::string, StateEntry> state_;
    contract::OffchainStore offchain_;
};

// Chain verification over serialized block lines; parse failures count as a
// bad block at that height.
std::optional<std::uint64_t> verify_block_lines(const std::vector<std::string>& lines);

struct TxOutcome {
    crypto::Digest tx_id;
    bool valid = false;
    std::uint64_t height = 0;
    Json result;  // populated by invoke() from the endorsement simulation
};

struct NetworkConfig {
    std::filesystem::path data_dir;  // off-chain files + persistence
    Clock* clock = nullptr;          // borrowed; nullptr → internal system clock
    // Commit each submission immediately instead of batching through the
    // orderer pacing (one-shot CLI style).
    bool immediate_commit = true;
    std::size_t batch_size = 10;
    std::chrono::milliseconds batch_timeout{50};
    std::size_t offchain_threshold = contract::kDefaultOffchainThreshold;
};

// The simulated permissioned network: MSP, enrolled identities, org peers
// with endorsement keys, channels, and a solo orderer.
//
// Pacing: with immediate_commit off, a block is cut only once batch_timeout
// has elapsed since the previous cut, taking up to batch_size queued
// transactions — so a saturated channel commits at most
// batch_size/batch_timeout tx/s, and an isolated transaction waits at most
// one timeout. flush() bypasses pacing.
class Network {
  public:
    explicit Network(NetworkConfig cfg);
    ~Network();

    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    // -- topology ------------------------------------------------------
    void add_org(const std::string& name, std::size_t peer_count = 1);
    std::vector<std::string> org_names() const;

    // -- identity ------------------------------------------------------
    void set_msp(identity::MspConfig msp);
    identity::MspConfig msp_config() const;
    void update_crl(identity::Crl crl);
    void enroll(const identity::Certificate& cert);
    std::optional<identity::Certificate> find_identity(std::uint64_t serial) const;

    // -- channels ------------------------------------------------------
    void create_channel(const std::string& id, std::vector<std::string> members,
                        EndorsementPolicy policy, ChannelMode mode = ChannelMode::LongTerm);
    std::vector<std::string> channel_ids() const;
    const Channel& channel(const std::string& id) const;

    // -- transaction pipeline -------------------------------------------
    EndorseResult endorse(const std::string& channel_id, const TransactionProposal& proposal,
                          const std::string& org, std::size_t peer_index = 0);
    void submit(const std::string& channel_id, const TransactionProposal& proposal,
                std::vector<Endorsement> endorsements);
    std::optional<TxOutcome> wait_for(const crypto::Digest& tx_id,
                                      std::chrono::milliseconds timeout);
    void flush(const std::string& channel_id);
    void flush_all();

    // Full round trip: endorse with as many member orgs as the channel policy
    // requires, submit, await commit; attaches the simulation result.
    TxOutcome invoke(const std::string& channel_id, const TransactionProposal& proposal);
    // Endorsed read without ordering: the op must leave the write set empty.
    Json query(const std::string& channel_id, const TransactionProposal& proposal,
               const std::string& org = "");

    // Local state scan (not a transaction); caller must be a channel member.
    std::vector<std::pair<std::string, Json>> state_scan(const std::string& channel_id,
                                                         std::uint64_t caller_serial,
                                                         const std::string& prefix) const;

    std::vector<AuditEvent> audit_query(const std::string& channel_id,
                                        std::uint64_t caller_serial,
                                        const AuditFilter& filter) const;

    // -- orchestration ---------------------------------------------------
    using CommitListener = std::function<void(const std::string& channel_id, const Block&)>;
    void set_commit_listener(CommitListener listener);
    void start_pump();
    void stop_pump();

    UtcTime now() const;
    std::size_t batch_size() const { return cfg_.batch_size; }
    std::chrono::milliseconds batch_timeout() const { return cfg_.batch_timeout; }

    // -- persistence -----------------------------------------------------
    void save() const;
    static std::unique_ptr<Network> load(NetworkConfig cfg);

  private:
    struct PendingTx {
        TransactionProposal proposal;
        std::vector<Endorsement> endorsements;
    };

    struct OrgPeers {
        std::string name;
        std::vector<crypto::KeyPair> peers;
    };

    struct ChannelRuntime {
        std::unique_ptr<Channel> channel;
        std::deque<PendingTx> queue;
        std::chrono::steady_clock::time_point last_cut;
    };

    ChannelRuntime& runtime(const std::string& channel_id);
    const ChannelRuntime& runtime(const std::string& channel_id) const;
    const identity::Certificate& checked_identity_locked(std::uint64_t serial) const;
    void check_member_caller_locked(const ChannelRuntime& rt, std::uint64_t caller) const;
    EndorseResult endorse_locked(ChannelRuntime& rt, const TransactionProposal& proposal,
                                 const std::string& org, std::size_t peer_index);
    // Cuts one block of up to batch_size queued txs; returns it for listener
    // dispatch. Caller holds the lock.
    std::optional<Block> cut_block_locked(ChannelRuntime& rt);
    void apply_side_effects_locked(ChannelRuntime& rt, const Block& block);
    void record_outcomes_locked(const Block& block);
    void pump_loop();

    NetworkConfig cfg_;
    SystemClock fallback_clock_;
    mutable std::mutex mu_;
    std::condition_variable commit_cv_;
    std::vector<OrgPeers> orgs_;
    identity::MspConfig msp_;
    std::map<std::uint64_t, identity::Certificate> identities_;
    std::map<std::string, ChannelRuntime> channels_;
    std::map<std::string, TxOutcome> outcomes_;  // by tx_id hex
    CommitListener listener_;
    std::thread pump_;
    bool pump_running_ = false;
    std::condition_variable pump_cv_;
};

}  // namespace tips::ledger
