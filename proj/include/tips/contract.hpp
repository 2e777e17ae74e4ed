#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tips/canonical.hpp"
#include "tips/crypto.hpp"
#include "tips/encoding.hpp"
#include "tips/timeutil.hpp"

namespace tips::contract {

// Payloads at or above this many bytes leave the world state and live in the
// off-chain store; the state keeps checksum + locator only.
inline constexpr std::size_t kDefaultOffchainThreshold = 1024;

// Content-addressed directory of payload files: filename = hex checksum,
// which doubles as the locator recorded on-chain. Writes and deletes are
// serialized; reads are safe to run concurrently with each other.
class OffchainStore {
  public:
    explicit OffchainStore(std::filesystem::path root);

    // Stores payload under its checksum; returns the locator (checksum hex).
    std::string put(const Bytes& payload);
    std::optional<Bytes> get(const std::string& locator) const;
    bool exists(const std::string& locator) const;
    // Best-effort shredding: overwrite file contents, then unlink. Idempotent.
    void destroy(const std::string& locator);

    const std::filesystem::path& root() const { return root_; }

  private:
    std::filesystem::path path_for(const std::string& locator) const;

    std::filesystem::path root_;
    mutable std::mutex mu_;
};

struct LineageEntry {
    std::uint32_t version = 0;
    crypto::Digest tx_id;
    std::uint64_t actor = 0;  // certificate serial
    UtcTime timestamp{};
    std::string action;  // Created | Updated | Erased

    Json to_json() const;
    static LineageEntry from_json(const Json& j);
};

// Metadata view of an object as recorded on-chain.
struct StoredObject {
    std::string object_key;
    crypto::Digest checksum;
    std::uint64_t size = 0;
    std::uint32_t version = 0;  // counts from 1
    std::optional<std::string> off_chain_ref;
    bool tombstoned = false;

    Json to_json() const;
    static StoredObject from_json(const Json& j);
};

// Proof of cancellation handed to the data subject after an erase commits.
struct ErasureReceipt {
    std::string object_key;
    crypto::Digest erase_tx;
    UtcTime wall_time{};
    crypto::Signature signature;

    Bytes signing_bytes() const;
    Json to_json() const;
    static ErasureReceipt from_json(const Json& j);
};

ErasureReceipt make_erasure_receipt(const std::string& object_key, const crypto::Digest& erase_tx,
                                    UtcTime wall_time, const crypto::PrivateKey& signer);

// Read access to committed channel state. Values are the canonical state
// documents; the version is the per-key MVCC counter.
class StateView {
  public:
    virtual ~StateView() = default;
    virtual std::optional<std::pair<Json, std::uint64_t>> get(const std::string& key) const = 0;
};

struct ReadEntry {
    std::string key;
    std::uint64_t version = 0;  // 0 records that the key was absent when read
};

struct WriteEntry {
    std::string key;
    Json value;
};

// Execution context for one operation: collects the read/write sets during
// endorsement simulation. Reads see the tx's own pending writes; absent keys
// are recorded at version 0 so commit-time validation re-checks absence.
class TxContext {
  public:
    TxContext(const StateView& state, OffchainStore& offchain, crypto::Digest tx_id,
              std::uint64_t actor, std::string actor_role, UtcTime timestamp,
              std::size_t offchain_threshold = kDefaultOffchainThreshold);

    std::optional<Json> get_state(const std::string& key);
    void put_state(const std::string& key, Json value);

    const std::vector<ReadEntry>& read_set() const { return read_set_; }
    const std::vector<WriteEntry>& write_set() const { return write_set_; }
    // Canonical {"read_set": [...], "write_set": [...]} document; endorsers
    // sign this and the orderer compares it across endorsements.
    Json rw_set() const;

    const crypto::Digest& tx_id() const { return tx_id_; }
    std::uint64_t actor() const { return actor_; }
    const std::string& actor_role() const { return actor_role_; }
    UtcTime timestamp() const { return timestamp_; }
    OffchainStore& offchain() { return offchain_; }
    std::size_t offchain_threshold() const { return offchain_threshold_; }

  private:
    const StateView& state_;
    OffchainStore& offchain_;
    crypto::Digest tx_id_;
    std::uint64_t actor_;
    std::string actor_role_;
    UtcTime timestamp_{};
    std::size_t offchain_threshold_;
    std::vector<ReadEntry> read_set_;
    std::vector<WriteEntry> write_set_;
};

Json rw_set_to_json(const std::vector<ReadEntry>& reads, const std::vector<WriteEntry>& writes);

// Dispatches one operation by name against the context. Storage ops:
//   put_object{key, payload}            -> StoredObject
//   get_checksum{key}                   -> {checksum}
//   get_object{key}                     -> {payload}
//   get_version{key}                    -> {version}
//   get_lineage{key}                    -> {lineage: [...]}
//   get_assets_from_batch{keys}         -> {records: [...], misses: [...]}
//   erase_object{key}                   -> StoredObject (tombstone view)
// Exchange support (payloads stored through the same object machinery):
//   publish_key{owner, document}        -> StoredObject at "pubkey/<owner>"
//   post_envelope{envelope_id, document}-> StoredObject at "env/<id>"
//   read_receipt{envelope_id}           -> {duplicate: bool}
//   policy_denied{envelope_id, reason}  -> {}
// Binary payloads cross the boundary base64-encoded. Unknown operations and
// malformed argument documents raise CONTRACT_ERROR; domain failures keep
// their specific codes.
Json execute(TxContext& ctx, const std::string& op, const Json& args);

// Objects recorded by exchange support ops live under reserved prefixes.
std::string pubkey_state_key(std::uint64_t owner_serial);
std::string envelope_state_key(const std::string& envelope_id_hex);
std::string receipt_state_key(const std::string& envelope_id_hex, std::uint64_t reader_serial);

}  // namespace tips::contract
