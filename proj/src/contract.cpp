#include "tips/contract.hpp"

#include <fstream>

#include "tips/errors.hpp"

namespace tips::contract {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// OffchainStore

OffchainStore::OffchainStore(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_);
}

fs::path OffchainStore::path_for(const std::string& locator) const {
    // Locators are hex digests produced by this process; reject anything that
    // could escape the store directory.
    if (locator.empty() || locator.find_first_not_of("0123456789abcdef") != std::string::npos)
        fail(ErrorCode::MalformedInput, "bad off-chain locator");
    return root_ / locator;
}

std::string OffchainStore::put(const Bytes& payload) {
    auto locator = crypto::digest(payload).hex();
    std::lock_guard lock(mu_);
    auto path = path_for(locator);
    if (fs::exists(path)) return locator;  // content-addressed: same bytes already present
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::IoError, "cannot write off-chain file: " + tmp.string());
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size()));
        if (!out) fail(ErrorCode::IoError, "short write to off-chain file: " + tmp.string());
    }
    fs::rename(tmp, path);
    return locator;
}

std::optional<Bytes> OffchainStore::get(const std::string& locator) const {
    std::lock_guard lock(mu_);
    auto path = path_for(locator);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

bool OffchainStore::exists(const std::string& locator) const {
    std::lock_guard lock(mu_);
    return fs::exists(path_for(locator));
}

void OffchainStore::destroy(const std::string& locator) {
    std::lock_guard lock(mu_);
    auto path = path_for(locator);
    std::error_code ec;
    auto size = fs::file_size(path, ec);
    if (!ec && size > 0) {
        std::ofstream out(path, std::ios::binary | std::ios::in);
        if (out) {
            Bytes zeros(static_cast<std::size_t>(size), 0);
            out.write(reinterpret_cast<const char*>(zeros.data()),
                      static_cast<std::streamsize>(zeros.size()));
            out.flush();
        }
    }
    fs::remove(path, ec);
}

// ---------------------------------------------------------------------------
// Plain data types

Json LineageEntry::to_json() const {
    return Json{{"action", action},
                {"actor", actor},
                {"timestamp", format_rfc3339(timestamp)},
                {"tx_id", tx_id.hex()},
                {"version", version}};
}

LineageEntry LineageEntry::from_json(const Json& j) {
    LineageEntry e;
    try {
        e.version = j.at("version").get<std::uint32_t>();
        e.tx_id = crypto::Digest::from_hex(j.at("tx_id").get<std::string>());
        e.actor = j.at("actor").get<std::uint64_t>();
        e.timestamp = parse_rfc3339(j.at("timestamp").get<std::string>());
        e.action = j.at("action").get<std::string>();
    } catch (const Json::exception& ex) {
        fail(ErrorCode::MalformedInput, std::string("bad lineage entry: ") + ex.what());
    }
    return e;
}

Json StoredObject::to_json() const {
    Json j{{"checksum", checksum.hex()},
           {"object_key", object_key},
           {"size", size},
           {"tombstoned", tombstoned},
           {"version", version}};
    if (off_chain_ref) j["off_chain_ref"] = *off_chain_ref;
    return j;
}

StoredObject StoredObject::from_json(const Json& j) {
    StoredObject o;
    try {
        o.object_key = j.at("object_key").get<std::string>();
        o.checksum = crypto::Digest::from_hex(j.at("checksum").get<std::string>());
        o.size = j.at("size").get<std::uint64_t>();
        o.version = j.at("version").get<std::uint32_t>();
        if (j.contains("off_chain_ref")) o.off_chain_ref = j.at("off_chain_ref").get<std::string>();
        o.tombstoned = j.at("tombstoned").get<bool>();
    } catch (const Json::exception& ex) {
        fail(ErrorCode::MalformedInput, std::string("bad stored object: ") + ex.what());
    }
    return o;
}

Bytes ErasureReceipt::signing_bytes() const {
    Json j{{"erase_tx", erase_tx.hex()},
           {"object_key", object_key},
           {"wall_time", format_rfc3339(wall_time)}};
    return to_bytes(canonical_dump(j));
}

Json ErasureReceipt::to_json() const {
    return Json{{"erase_tx", erase_tx.hex()},
                {"object_key", object_key},
                {"signature", signature.to_json()},
                {"wall_time", format_rfc3339(wall_time)}};
}

ErasureReceipt ErasureReceipt::from_json(const Json& j) {
    ErasureReceipt r;
    try {
        r.object_key = j.at("object_key").get<std::string>();
        r.erase_tx = crypto::Digest::from_hex(j.at("erase_tx").get<std::string>());
        r.wall_time = parse_rfc3339(j.at("wall_time").get<std::string>());
        r.signature = crypto::Signature::from_json(j.at("signature"));
    } catch (const Json::exception& ex) {
        fail(ErrorCode::MalformedInput, std::string("bad erasure receipt: ") + ex.what());
    }
    return r;
}

ErasureReceipt make_erasure_receipt(const std::string& object_key, const crypto::Digest& erase_tx,
                                    UtcTime wall_time, const crypto::PrivateKey& signer) {
    ErasureReceipt r;
    r.object_key = object_key;
    r.erase_tx = erase_tx;
    r.wall_time = wall_time;
    r.signature = crypto::sign(r.signing_bytes(), signer);
    return r;
}

// ---------------------------------------------------------------------------
// TxContext

TxContext::TxContext(const StateView& state, OffchainStore& offchain, crypto::Digest tx_id,
                     std::uint64_t actor, std::string actor_role, UtcTime timestamp,
                     std::size_t offchain_threshold)
    : state_(state),
      offchain_(offchain),
      tx_id_(tx_id),
      actor_(actor),
      actor_role_(std::move(actor_role)),
      timestamp_(timestamp),
      offchain_threshold_(offchain_threshold) {}

std::optional<Json> TxContext::get_state(const std::string& key) {
    for (const auto& w : write_set_)
        if (w.key == key) return w.value;  // read-your-writes, no read recorded

    auto hit = state_.get(key);
    std::uint64_t version = hit ? hit->second : 0;
    bool seen = false;
    for (const auto& r : read_set_)
        if (r.key == key) {
            seen = true;
            break;
        }
    if (!seen) read_set_.push_back({key, version});
    if (!hit) return std::nullopt;
    return hit->first;
}

void TxContext::put_state(const std::string& key, Json value) {
    for (auto& w : write_set_)
        if (w.key == key) {
            w.value = std::move(value);
            return;
        }
    write_set_.push_back({key, std::move(value)});
}

Json rw_set_to_json(const std::vector<ReadEntry>& reads, const std::vector<WriteEntry>& writes) {
    Json r = Json::array();
    for (const auto& e : reads) r.push_back(Json{{"key", e.key}, {"version", e.version}});
    Json w = Json::array();
    for (const auto& e : writes) w.push_back(Json{{"key", e.key}, {"value", e.value}});
    return Json{{"read_set", r}, {"write_set", w}};
}

Json TxContext::rw_set() const { return rw_set_to_json(read_set_, write_set_); }

// ---------------------------------------------------------------------------
// Operation handlers

namespace {

constexpr const char* kReservedPrefixes[] = {"pubkey/", "env/", "receipt/", "denial/"};

bool has_reserved_prefix(const std::string& key) {
    for (const char* p : kReservedPrefixes)
        if (key.rfind(p, 0) == 0) return true;
    return false;
}

struct ObjectDoc {
    crypto::Digest checksum;
    std::uint64_t size = 0;
    std::uint32_t version = 0;
    std::optional<std::string> off_chain_ref;
    std::optional<std::string> inline_payload;  // base64, only below the threshold
    bool tombstoned = false;
    std::vector<LineageEntry> lineage;

    Json to_json() const {
        Json l = Json::array();
        for (const auto& e : lineage) l.push_back(e.to_json());
        Json j{{"checksum", checksum.hex()},
               {"lineage", std::move(l)},
               {"size", size},
               {"tombstoned", tombstoned},
               {"version", version}};
        if (off_chain_ref) j["off_chain_ref"] = *off_chain_ref;
        if (inline_payload) j["inline_payload"] = *inline_payload;
        return j;
    }

    static ObjectDoc from_json(const Json& j) {
        ObjectDoc d;
        try {
            d.checksum = crypto::Digest::from_hex(j.at("checksum").get<std::string>());
            d.size = j.at("size").get<std::uint64_t>();
            d.version = j.at("version").get<std::uint32_t>();
            if (j.contains("off_chain_ref"))
                d.off_chain_ref = j.at("off_chain_ref").get<std::string>();
            if (j.contains("inline_payload"))
                d.inline_payload = j.at("inline_payload").get<std::string>();
            d.tombstoned = j.at("tombstoned").get<bool>();
            for (const auto& e : j.at("lineage")) d.lineage.push_back(LineageEntry::from_json(e));
        } catch (const Json::exception& ex) {
            fail(ErrorCode::MalformedInput, std::string("bad object document: ") + ex.what());
        }
        return d;
    }

    StoredObject summary(const std::string& key) const {
        StoredObject o;
        o.object_key = key;
        o.checksum = checksum;
        o.size = size;
        o.version = version;
        o.off_chain_ref = off_chain_ref;
        o.tombstoned = tombstoned;
        return o;
    }
};

std::string require_string(const Json& args, const char* field) {
    if (!args.contains(field) || !args.at(field).is_string())
        fail(ErrorCode::ContractError, std::string("missing string argument: ") + field);
    return args.at(field).get<std::string>();
}

bool is_u64(const Json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

std::uint64_t require_u64(const Json& args, const char* field) {
    if (!args.contains(field) || !is_u64(args.at(field)))
        fail(ErrorCode::ContractError, std::string("missing unsigned argument: ") + field);
    return args.at(field).get<std::uint64_t>();
}

std::optional<ObjectDoc> load_doc(TxContext& ctx, const std::string& key) {
    auto j = ctx.get_state(key);
    if (!j) return std::nullopt;
    return ObjectDoc::from_json(*j);
}

// Shared storage routine behind put_object and the exchange support ops.
// check_existing=false skips the read entirely (blind write to a key known
// to be unique, e.g. one embedding the tx id).
ObjectDoc store_payload(TxContext& ctx, const std::string& key, const Bytes& payload,
                        bool check_existing = true) {
    if (key.empty()) fail(ErrorCode::EmptyKey, "object key must be non-empty");
    std::optional<ObjectDoc> prev;
    if (check_existing) prev = load_doc(ctx, key);
    if (prev && prev->tombstoned)
        fail(ErrorCode::Tombstoned, "key permanently closed by erasure: " + key);

    ObjectDoc doc;
    doc.checksum = crypto::digest(payload);
    doc.size = payload.size();
    doc.version = prev ? prev->version + 1 : 1;
    doc.tombstoned = false;
    if (prev) doc.lineage = prev->lineage;
    if (payload.size() >= ctx.offchain_threshold()) {
        doc.off_chain_ref = ctx.offchain().put(payload);
    } else {
        doc.inline_payload = base64_encode(payload);
    }
    doc.lineage.push_back({doc.version, ctx.tx_id(), ctx.actor(), ctx.timestamp(),
                           prev ? "Updated" : "Created"});
    ctx.put_state(key, doc.to_json());
    return doc;
}

Json op_put_object(TxContext& ctx, const Json& args) {
    auto key = require_string(args, "key");
    if (has_reserved_prefix(key))
        fail(ErrorCode::NotAuthorised, "key prefix is reserved for protocol objects: " + key);
    Bytes payload = base64_decode(require_string(args, "payload"));
    return store_payload(ctx, key, payload).summary(key).to_json();
}

ObjectDoc require_doc(TxContext& ctx, const std::string& key) {
    auto doc = load_doc(ctx, key);
    if (!doc) fail(ErrorCode::NotFound, "no object at key: " + key);
    return *doc;
}

Json op_get_checksum(TxContext& ctx, const Json& args) {
    auto key = require_string(args, "key");
    return Json{{"checksum", require_doc(ctx, key).checksum.hex()}};
}

Json op_get_object(TxContext& ctx, const Json& args) {
    auto key = require_string(args, "key");
    auto doc = require_doc(ctx, key);
    if (doc.tombstoned) fail(ErrorCode::Tombstoned, "object erased: " + key);

    Bytes payload;
    if (doc.off_chain_ref) {
        auto bytes = ctx.offchain().get(*doc.off_chain_ref);
        if (!bytes)
            fail(ErrorCode::IntegrityMismatch, "off-chain payload missing for key: " + key);
        payload = std::move(*bytes);
    } else if (doc.inline_payload) {
        payload = base64_decode(*doc.inline_payload);
    } else {
        fail(ErrorCode::IntegrityMismatch, "object record holds no payload: " + key);
    }
    if (crypto::digest(payload) != doc.checksum)
        fail(ErrorCode::IntegrityMismatch, "payload digest does not match checksum: " + key);
    return Json{{"payload", base64_encode(payload)}};
}

Json op_get_version(TxContext& ctx, const Json& args) {
    auto key = require_string(args, "key");
    return Json{{"version", require_doc(ctx, key).version}};
}

Json op_get_lineage(TxContext& ctx, const Json& args) {
    auto key = require_string(args, "key");
    auto doc = require_doc(ctx, key);
    Json l = Json::array();
    for (const auto& e : doc.lineage) l.push_back(e.to_json());
    return Json{{"lineage", std::move(l)}};
}

Json op_get_assets_from_batch(TxContext& ctx, const Json& args) {
    if (!args.contains("keys") || !args.at("keys").is_array())
        fail(ErrorCode::ContractError, "missing array argument: keys");
    Json records = Json::array();
    Json misses = Json::array();
    for (const auto& k : args.at("keys")) {
        if (!k.is_string()) fail(ErrorCode::ContractError, "batch keys must be strings");
        auto key = k.get<std::string>();
        auto doc = load_doc(ctx, key);
        if (doc)
            records.push_back(doc->summary(key).to_json());
        else
            misses.push_back(key);
    }
    return Json{{"misses", std::move(misses)}, {"records", std::move(records)}};
}

Json op_erase_object(TxContext& ctx, const Json& args) {
    auto key = require_string(args, "key");
    auto doc = require_doc(ctx, key);
    if (doc.tombstoned) fail(ErrorCode::Tombstoned, "object already erased: " + key);
    if (doc.lineage.empty())
        fail(ErrorCode::ContractError, "object record carries no lineage: " + key);
    bool is_creator = doc.lineage.front().actor == ctx.actor();
    if (!is_creator && ctx.actor_role() != "dpo")
        fail(ErrorCode::NotAuthorised, "erase requires the object creator or role=dpo");

    doc.tombstoned = true;
    doc.inline_payload.reset();  // on-chain copy of the payload goes away with the tombstone
    doc.version += 1;
    doc.lineage.push_back({doc.version, ctx.tx_id(), ctx.actor(), ctx.timestamp(), "Erased"});
    ctx.put_state(key, doc.to_json());
    return doc.summary(key).to_json();
}

Json op_publish_key(TxContext& ctx, const Json& args) {
    auto owner = require_u64(args, "owner");
    if (owner != ctx.actor())
        fail(ErrorCode::NotAuthorised, "agents may only publish their own key");
    if (!args.contains("document"))
        fail(ErrorCode::ContractError, "missing argument: document");
    Bytes payload = to_bytes(canonical_dump(args.at("document")));
    auto key = pubkey_state_key(owner);
    return store_payload(ctx, key, payload).summary(key).to_json();
}

Json op_post_envelope(TxContext& ctx, const Json& args) {
    auto id_hex = require_string(args, "envelope_id");
    if (!args.contains("document"))
        fail(ErrorCode::ContractError, "missing argument: document");
    const Json& doc = args.at("document");
    if (!doc.contains("sender") || !is_u64(doc.at("sender")) ||
        doc.at("sender").get<std::uint64_t>() != ctx.actor())
        fail(ErrorCode::NotAuthorised, "envelope sender must be the submitting agent");
    Bytes payload = to_bytes(canonical_dump(doc));
    if (crypto::digest(payload).hex() != id_hex)
        fail(ErrorCode::ContractError, "envelope id does not match document digest");
    auto key = envelope_state_key(id_hex);
    if (load_doc(ctx, key))
        fail(ErrorCode::ContractError, "envelope already posted: " + id_hex);
    return store_payload(ctx, key, payload).summary(key).to_json();
}

Json op_read_receipt(TxContext& ctx, const Json& args) {
    auto id_hex = require_string(args, "envelope_id");
    auto env = load_doc(ctx, envelope_state_key(id_hex));
    if (!env) fail(ErrorCode::NotFound, "no envelope with id: " + id_hex);

    auto key = receipt_state_key(id_hex, ctx.actor());
    if (load_doc(ctx, key)) return Json{{"duplicate", true}};

    Json receipt{{"envelope_id", id_hex},
                 {"read_tx", ctx.tx_id().hex()},
                 {"reader", ctx.actor()},
                 {"wall_time", format_rfc3339(ctx.timestamp())}};
    store_payload(ctx, key, to_bytes(canonical_dump(receipt)));
    return Json{{"duplicate", false}};
}

Json op_policy_denied(TxContext& ctx, const Json& args) {
    auto id_hex = require_string(args, "envelope_id");
    auto reason = require_string(args, "reason");
    Json record{{"denied", ctx.actor()}, {"envelope_id", id_hex}, {"reason", reason}};
    auto key = "denial/" + id_hex + "/" + std::to_string(ctx.actor()) + "/" + ctx.tx_id().hex();
    store_payload(ctx, key, to_bytes(canonical_dump(record)), /*check_existing=*/false);
    return Json::object();
}

}  // namespace

std::string pubkey_state_key(std::uint64_t owner_serial) {
    return "pubkey/" + std::to_string(owner_serial);
}

std::string envelope_state_key(const std::string& envelope_id_hex) {
    return "env/" + envelope_id_hex;
}

std::string receipt_state_key(const std::string& envelope_id_hex, std::uint64_t reader_serial) {
    return "receipt/" + envelope_id_hex + "/" + std::to_string(reader_serial);
}

Json execute(TxContext& ctx, const std::string& op, const Json& args) {
    if (!args.is_object()) fail(ErrorCode::ContractError, "operation arguments must be an object");
    if (op == "put_object") return op_put_object(ctx, args);
    if (op == "get_checksum") return op_get_checksum(ctx, args);
    if (op == "get_object") return op_get_object(ctx, args);
    if (op == "get_version") return op_get_version(ctx, args);
    if (op == "get_lineage") return op_get_lineage(ctx, args);
    if (op == "get_assets_from_batch") return op_get_assets_from_batch(ctx, args);
    if (op == "erase_object") return op_erase_object(ctx, args);
    if (op == "publish_key") return op_publish_key(ctx, args);
    if (op == "post_envelope") return op_post_envelope(ctx, args);
    if (op == "read_receipt") return op_read_receipt(ctx, args);
    if (op == "policy_denied") return op_policy_denied(ctx, args);
    fail(ErrorCode::ContractError, "unknown contract operation: " + op);
}

}  // namespace tips::contract
