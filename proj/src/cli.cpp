#include "tips/cli.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "tips/bench.hpp"
#include "tips/crypto.hpp"
#include "tips/encoding.hpp"
#include "tips/errors.hpp"
#include "tips/exchange.hpp"
#include "tips/identity.hpp"
#include "tips/ledger.hpp"
#include "tips/policy.hpp"
#include "tips/rng.hpp"
#include "tips/timeutil.hpp"

namespace tips::cli {
namespace {

namespace fs = std::filesystem;

UtcTime wall_now() {
    return std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
}

// ------------------------------------------------------------------- files --

void owner_only(const fs::path& p) {
    fs::permissions(p, fs::perms::owner_read | fs::perms::owner_write,
                    fs::perm_options::replace);
}

Json read_json_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open " + p.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    Json doc = Json::parse(buf.str(), nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded()) fail(ErrorCode::MalformedInput, "not valid JSON: " + p.string());
    return doc;
}

void write_json_file(const fs::path& p, const Json& doc, bool secret = false) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write " + p.string());
    out << doc.dump(2) << '\n';
    out.close();
    if (!out) fail(ErrorCode::IoError, "short write: " + p.string());
    if (secret) owner_only(p);
}

Bytes read_file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open " + p.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    auto s = buf.str();
    return Bytes(s.begin(), s.end());
}

// ----------------------------------------------------------------- storage --

// Layout inside the data dir: ca.json (CA state, owner-only), keys/ (private
// key material, owner-only), csr/ + certs/ (public documents), config.json
// (active identity + default channel), network.json + channels/ (ledger
// persistence), .lock (advisory lock serializing invocations).
struct Store {
    fs::path root;

    fs::path ca_file() const { return root / "ca.json"; }
    fs::path config_file() const { return root / "config.json"; }
    fs::path network_file() const { return root / "network.json"; }
    fs::path keys_dir() const { return root / "keys"; }
    fs::path csr_dir() const { return root / "csr"; }
    fs::path certs_dir() const { return root / "certs"; }
    fs::path lock_file() const { return root / ".lock"; }

    void ensure() const {
        std::error_code ec;
        fs::create_directories(root, ec);
        if (ec) fail(ErrorCode::IoError, "cannot create data dir " + root.string());
        fs::create_directories(keys_dir());
        fs::create_directories(csr_dir());
        fs::create_directories(certs_dir());
        fs::permissions(keys_dir(), fs::perms::owner_all, fs::perm_options::replace);
    }
};

// Advisory exclusive lock on the data dir, held for the whole invocation.
class DirLock {
  public:
    explicit DirLock(const fs::path& p) {
        fd_ = ::open(p.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0600);
        if (fd_ < 0) fail(ErrorCode::IoError, "cannot open lock file " + p.string());
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            fd_ = -1;
            fail(ErrorCode::IoError, "cannot lock data dir via " + p.string());
        }
    }
    ~DirLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

  private:
    int fd_ = -1;
};

struct CliConfig {
    std::optional<std::uint64_t> active_identity;
    std::optional<std::string> default_channel;
};

CliConfig load_config(const Store& s) {
    CliConfig c;
    if (!fs::exists(s.config_file())) return c;
    auto j = read_json_file(s.config_file());
    if (j.contains("active_identity"))
        c.active_identity = j.at("active_identity").get<std::uint64_t>();
    if (j.contains("default_channel"))
        c.default_channel = j.at("default_channel").get<std::string>();
    return c;
}

void save_config(const Store& s, const CliConfig& c) {
    Json j = Json::object();
    if (c.active_identity) j["active_identity"] = *c.active_identity;
    if (c.default_channel) j["default_channel"] = *c.default_channel;
    write_json_file(s.config_file(), j);
}

Json keypair_doc(const crypto::KeyPair& kp) {
    return Json{{"key_id", kp.key_id.hex()},
                {"private_pem", kp.private_key.to_pem()},
                {"public_pem", kp.public_key.to_pem()}};
}

void save_keypair(const fs::path& p, const crypto::KeyPair& kp) {
    write_json_file(p, keypair_doc(kp), /*secret=*/true);
}

crypto::KeyPair load_keypair(const fs::path& p) {
    if (!fs::exists(p))
        fail(ErrorCode::UnknownIdentity, "no private key at " + p.string());
    auto j = read_json_file(p);
    return crypto::KeyPair{
        crypto::PrivateKey::from_pem(j.at("private_pem").get<std::string>()),
        crypto::PublicKey::from_pem(j.at("public_pem").get<std::string>()),
        crypto::Digest::from_hex(j.at("key_id").get<std::string>())};
}

// ----------------------------------------------------------------- network --

identity::CertificateAuthority load_ca(const Store& s) {
    if (!fs::exists(s.ca_file()))
        fail(ErrorCode::NotFound, "no certificate authority in this data dir (run `tips ca init`)");
    return identity::CertificateAuthority::from_json(read_json_file(s.ca_file()));
}

// Opens (or creates) the simulated network rooted in the store. CA trust and
// the current CRL are re-applied from ca.json on every open so revocations
// take effect across invocations.
std::unique_ptr<ledger::Network> open_network(const Store& s) {
    ledger::NetworkConfig cfg;
    cfg.data_dir = s.root;
    auto net = fs::exists(s.network_file()) ? ledger::Network::load(cfg)
                                            : std::make_unique<ledger::Network>(cfg);
    if (fs::exists(s.ca_file())) {
        auto ca = identity::CertificateAuthority::from_json(read_json_file(s.ca_file()));
        auto msp = net->msp_config();
        msp.trusted_cas[ca.key_id().hex()] = ca.public_key();
        msp.crl = ca.current_crl();
        net->set_msp(std::move(msp));
    }
    return net;
}

// ------------------------------------------------------------------- flags --

struct Opts {
    // globals
    std::string data_dir = "./.tips";
    std::string output = "human";
    std::optional<std::uint64_t> as_serial;

    // per-command slots (only one leaf command runs per invocation)
    std::string name;
    std::string org = "org1";
    std::string role = "agent";
    std::string channel;
    std::string csr_file, cert_file, bundle_file, policy_file, config_file;
    std::string out_file, in_file, value;
    std::string key;
    std::string envelope_hex;
    std::string location = "GB";
    std::string workload = "read";
    std::string orgs_csv;
    std::string policy_name = "majority";
    std::string mode_name = "long-term";
    std::optional<std::uint64_t> serial, to, from_serial, actor;
    std::optional<std::string> type_name;
    bool unread_only = false;
    std::uint64_t tx = 1, workers = 1, batch = 10;
    std::optional<double> rate;
    std::uint64_t validity_days = 365;

    std::ostream* out = nullptr;
    std::ostream* err = nullptr;

    bool json() const { return output == "json"; }
};

// TIPS_DATA_DIR wins over --data-dir when set.
fs::path effective_data_dir(const Opts& o) {
    if (const char* env = std::getenv("TIPS_DATA_DIR"); env != nullptr && *env != '\0')
        return fs::path(env);
    return fs::path(o.data_dir);
}

void emit(const Opts& o, const Json& doc, const std::string& human) {
    if (o.json())
        *o.out << doc.dump(2) << "\n";
    else
        *o.out << human;
}

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream in(csv);
    while (std::getline(in, item, ','))
        if (!item.empty()) parts.push_back(item);
    return parts;
}

ledger::EndorsementPolicy policy_from_flag(std::string v) {
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "majority" || v == "majorityoforgs") return ledger::EndorsementPolicy::MajorityOfOrgs;
    if (v == "all" || v == "allorgs") return ledger::EndorsementPolicy::AllOrgs;
    if (v == "any" || v == "anyorg") return ledger::EndorsementPolicy::AnyOrg;
    fail(ErrorCode::MalformedInput, "unknown endorsement policy: " + v + " (majority|all|any)");
}

ledger::ChannelMode mode_from_flag(std::string v) {
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "long-term" || v == "longterm") return ledger::ChannelMode::LongTerm;
    if (v == "session") return ledger::ChannelMode::Session;
    fail(ErrorCode::MalformedInput, "unknown channel mode: " + v + " (long-term|session)");
}

const char* mode_name_of(ledger::ChannelMode m) {
    return m == ledger::ChannelMode::Session ? "session" : "long-term";
}

std::string resolve_channel(const Opts& o, const CliConfig& c) {
    if (!o.channel.empty()) return o.channel;
    if (c.default_channel) return *c.default_channel;
    fail(ErrorCode::UnknownChannel, "no --channel given and no default channel configured");
}

// Resolves the acting identity: --as flag, else the configured active one.
exchange::Agent acting_agent(const Opts& o, const Store& s, const CliConfig& c,
                             ledger::Network& net) {
    std::uint64_t serial = 0;
    if (o.as_serial)
        serial = *o.as_serial;
    else if (c.active_identity)
        serial = *c.active_identity;
    else
        fail(ErrorCode::UnknownIdentity, "no acting identity: pass --as <serial> or enroll one");

    auto cert = net.find_identity(serial);
    if (!cert)
        fail(ErrorCode::UnknownIdentity,
             "serial " + std::to_string(serial) + " is not enrolled here");

    exchange::Agent a{*cert, load_keypair(s.keys_dir() / (std::to_string(serial) + ".key")),
                      std::nullopt};
    auto xp = s.keys_dir() / (std::to_string(serial) + ".exchange.key");
    if (fs::exists(xp)) a.exchange_key = load_keypair(xp);
    return a;
}

// ---------------------------------------------------------------- commands --

void cmd_ca_init(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    if (fs::exists(s.ca_file()))
        fail(ErrorCode::DuplicateSubject, "ca already initialised at " + s.ca_file().string());
    auto ca = identity::CertificateAuthority::create(o.name);
    write_json_file(s.ca_file(), ca.to_json(), /*secret=*/true);
    emit(o, Json{{"key_id", ca.key_id().hex()}, {"name", ca.name()}},
         "ca " + ca.name() + " initialised, key " + ca.key_id().hex() + "\n");
}

void cmd_ca_issue(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto ca = load_ca(s);
    auto csr = identity::Csr::from_json(read_json_file(fs::path(o.csr_file)));
    auto cert = ca.issue(csr, std::chrono::seconds(o.validity_days * 86400), wall_now());
    write_json_file(s.ca_file(), ca.to_json(), /*secret=*/true);
    fs::path cert_path = o.out_file.empty()
                             ? s.certs_dir() / (std::to_string(cert.serial) + ".json")
                             : fs::path(o.out_file);
    write_json_file(cert_path, cert.to_json());
    emit(o,
         Json{{"not_after", format_rfc3339(cert.not_after)},
              {"org", cert.attributes.org},
              {"path", cert_path.string()},
              {"serial", cert.serial},
              {"subject", cert.subject.common_name}},
         "issued serial " + std::to_string(cert.serial) + " to " + cert.subject.common_name +
             " (" + cert.attributes.org + ") -> " + cert_path.string() + "\n");
}

void cmd_ca_revoke(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto ca = load_ca(s);
    auto crl = ca.revoke(*o.serial, wall_now());
    write_json_file(s.ca_file(), ca.to_json(), /*secret=*/true);
    if (fs::exists(s.network_file())) open_network(s)->save();  // refresh persisted CRL
    Json revoked = Json::array();
    for (auto n : crl.revoked_serials) revoked.push_back(n);
    emit(o, Json{{"issued_at", format_rfc3339(crl.issued_at)}, {"revoked", revoked}},
         "revoked serial " + std::to_string(*o.serial) + "; crl now lists " +
             std::to_string(crl.revoked_serials.size()) + " serial(s)\n");
}

void cmd_enroll(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    auto cert = identity::Certificate::from_json(read_json_file(fs::path(o.cert_file)));
    net->enroll(cert);
    net->save();

    // Keep a serial-addressed copy of the local key material so later
    // invocations can act as this identity.
    auto by_name = s.keys_dir() / (cert.subject.common_name + ".key");
    if (fs::exists(by_name)) {
        auto dst = s.keys_dir() / (std::to_string(cert.serial) + ".key");
        fs::copy_file(by_name, dst, fs::copy_options::overwrite_existing);
        owner_only(dst);
        auto xn = s.keys_dir() / (cert.subject.common_name + ".exchange.key");
        if (fs::exists(xn)) {
            auto xdst = s.keys_dir() / (std::to_string(cert.serial) + ".exchange.key");
            fs::copy_file(xn, xdst, fs::copy_options::overwrite_existing);
            owner_only(xdst);
        }
    }

    auto cfg = load_config(s);
    bool activated = false;
    if (!cfg.active_identity) {
        cfg.active_identity = cert.serial;
        activated = true;
    }
    save_config(s, cfg);
    emit(o,
         Json{{"active", activated},
              {"org", cert.attributes.org},
              {"serial", cert.serial},
              {"subject", cert.subject.common_name}},
         "enrolled " + cert.subject.common_name + " as serial " + std::to_string(cert.serial) +
             (activated ? " (now the active identity)" : "") + "\n");
}

void cmd_channel_create(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    auto members = split_csv(o.orgs_csv);
    auto known = net->org_names();
    for (const auto& m : members)
        if (std::find(known.begin(), known.end(), m) == known.end()) net->add_org(m, 2);
    net->create_channel(o.channel, members, policy_from_flag(o.policy_name),
                        mode_from_flag(o.mode_name));
    net->save();

    auto cfg = load_config(s);
    if (!cfg.default_channel) {
        cfg.default_channel = o.channel;
        save_config(s, cfg);
    }

    const auto& ch = net->channel(o.channel);
    Json mem = Json::array();
    for (const auto& m : ch.members()) mem.push_back(m);
    emit(o,
         Json{{"channel", o.channel},
              {"members", mem},
              {"mode", mode_name_of(ch.mode())},
              {"policy", ledger::endorsement_policy_name(ch.policy())}},
         "channel " + o.channel + " created: " + o.orgs_csv + ", " +
             ledger::endorsement_policy_name(ch.policy()) + ", " + mode_name_of(ch.mode()) +
             "\n");
}

void cmd_channel_list(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    Json arr = Json::array();
    std::string human;
    for (const auto& id : net->channel_ids()) {
        const auto& ch = net->channel(id);
        Json mem = Json::array();
        std::string mcsv;
        for (const auto& m : ch.members()) {
            mem.push_back(m);
            if (!mcsv.empty()) mcsv += ",";
            mcsv += m;
        }
        arr.push_back(Json{{"blocks", ch.blocks().size()},
                           {"channel", id},
                           {"closed", ch.closed()},
                           {"members", mem},
                           {"mode", mode_name_of(ch.mode())},
                           {"policy", ledger::endorsement_policy_name(ch.policy())}});
        human += id + " members=" + mcsv +
                 " policy=" + ledger::endorsement_policy_name(ch.policy()) +
                 " mode=" + mode_name_of(ch.mode()) +
                 " blocks=" + std::to_string(ch.blocks().size()) +
                 (ch.closed() ? " closed" : "") + "\n";
    }
    if (human.empty()) human = "no channels\n";
    emit(o, arr, human);
}

void cmd_agent_keygen(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto kp = crypto::generate_keypair();
    auto xkp = crypto::generate_keypair();
    save_keypair(s.keys_dir() / (o.name + ".key"), kp);
    save_keypair(s.keys_dir() / (o.name + ".exchange.key"), xkp);
    auto csr = identity::create_csr(kp, {o.name, o.org}, {{"role", o.role}});
    fs::path csr_path =
        o.out_file.empty() ? s.csr_dir() / (o.name + ".json") : fs::path(o.out_file);
    write_json_file(csr_path, csr.to_json());
    emit(o,
         Json{{"csr", csr_path.string()},
              {"exchange_key_id", xkp.key_id.hex()},
              {"key_id", kp.key_id.hex()},
              {"name", o.name},
              {"org", o.org},
              {"role", o.role}},
         "keys for " + o.name + " (" + o.org + ") written; csr at " + csr_path.string() + "\n");
}

void cmd_agent_publish_key(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    auto cfg = load_config(s);
    auto channel = resolve_channel(o, cfg);
    auto agent = acting_agent(o, s, cfg, *net);
    auto pk = exchange::publish_public_key(*net, agent, channel);
    net->save();
    emit(o,
         Json{{"channel", channel},
              {"key_id", agent.exchange_key->key_id.hex()},
              {"owner", pk.owner}},
         "published exchange key " + agent.exchange_key->key_id.hex() + " for serial " +
             std::to_string(pk.owner) + " on " + channel + "\n");
}

void cmd_agent_attest(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    auto cfg = load_config(s);
    auto agent = acting_agent(o, s, cfg, *net);
    auto at = policy::attest(agent.serial(), agent.cert_key.private_key, wall_now(), o.location);
    emit(o, at.to_json(),
         "attested: serial " + std::to_string(agent.serial()) + " at " + o.location + ", " +
             format_rfc3339(wall_now()) + "\n");
}

void cmd_send(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    auto cfg = load_config(s);
    auto channel = resolve_channel(o, cfg);
    auto agent = acting_agent(o, s, cfg, *net);
    auto bundle = exchange::ThreatBundle::from_json(read_json_file(fs::path(o.bundle_file)));
    policy::AccessPolicy access;
    if (!o.policy_file.empty())
        access = policy::AccessPolicy::from_json(read_json_file(fs::path(o.policy_file)));
    auto env = exchange::send_bundle(*net, agent, channel, *o.to, bundle, access);
    net->save();
    emit(o,
         Json{{"envelope_id", env.envelope_id.hex()},
              {"posted_tx", env.posted_tx.hex()},
              {"recipient", *o.to},
              {"sender", agent.serial()}},
         "posted envelope " + env.envelope_id.hex() + " for serial " + std::to_string(*o.to) +
             " (tx " + env.posted_tx.hex().substr(0, 12) + ")\n");
}

void cmd_recv(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    auto cfg = load_config(s);
    auto channel = resolve_channel(o, cfg);
    auto agent = acting_agent(o, s, cfg, *net);
    auto id = crypto::Digest::from_hex(o.envelope_hex);
    exchange::ThreatBundle bundle;
    try {
        bundle = exchange::receive_bundle(*net, agent, channel, id, o.location);
    } catch (const TipsError&) {
        net->save();  // denial transactions are part of the audit trail
        throw;
    }
    net->save();
    Json doc = bundle.to_json();
    if (!o.out_file.empty()) {
        write_json_file(fs::path(o.out_file), doc);
        emit(o,
             Json{{"bundle_id", bundle.bundle_id},
                  {"objects", bundle.objects.size()},
                  {"path", o.out_file}},
             "received " + bundle.bundle_id + " (" + std::to_string(bundle.objects.size()) +
                 " objects) -> " + o.out_file + "\n");
    } else {
        emit(o, doc,
             "received " + bundle.bundle_id + " (" + std::to_string(bundle.objects.size()) +
                 " objects)\n" + doc.dump(2) + "\n");
    }
}

void cmd_inbox(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    auto cfg = load_config(s);
    auto channel = resolve_channel(o, cfg);
    auto agent = acting_agent(o, s, cfg, *net);
    exchange::InboxFilter f;
    f.unread_only = o.unread_only;
    f.sender = o.from_serial;
    auto rows = exchange::list_envelopes(*net, agent, channel, f);
    Json arr = Json::array();
    std::string human;
    for (const auto& r : rows) {
        arr.push_back(Json{{"envelope_id", r.envelope_id},
                           {"posted", format_rfc3339(r.posted)},
                           {"read", r.read},
                           {"sender", r.sender}});
        human += r.envelope_id + " from " + std::to_string(r.sender) + " at " +
                 format_rfc3339(r.posted) + (r.read ? " read" : " unread") + "\n";
    }
    if (human.empty()) human = "inbox empty\n";
    emit(o, arr, human);
}

void cmd_object_put(Opts& o) {
    if (o.in_file.empty() == o.value.empty())
        fail(ErrorCode::MalformedInput, "object put needs exactly one of --file or --value");
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    auto cfg = load_config(s);
    auto channel = resolve_channel(o, cfg);
    auto agent = acting_agent(o, s, cfg, *net);
    Bytes payload = o.in_file.empty() ? to_bytes(o.value) : read_file_bytes(fs::path(o.in_file));
    auto prop = ledger::build_proposal(channel, "put_object",
                                       Json{{"key", o.key}, {"payload", base64_encode(payload)}},
                                       agent.serial(), agent.cert_key.private_key, net->now());
    auto outcome = net->invoke(channel, prop);
    net->save();
    if (!outcome.valid) fail(ErrorCode::ContractError, "transaction invalidated at commit");
    Json doc = outcome.result;
    doc["tx"] = outcome.tx_id.hex();
    emit(o, doc,
         "stored " + o.key + " v" + std::to_string(doc.value("version", 0)) + " checksum " +
             doc.value("checksum", std::string{}).substr(0, 12) + " (tx " +
             outcome.tx_id.hex().substr(0, 12) + ")\n");
}

void cmd_object_get(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    auto cfg = load_config(s);
    auto channel = resolve_channel(o, cfg);
    auto agent = acting_agent(o, s, cfg, *net);
    auto res = net->query(channel, ledger::build_proposal(channel, "get_object",
                                                          Json{{"key", o.key}}, agent.serial(),
                                                          agent.cert_key.private_key, net->now()));
    Bytes payload = base64_decode(res.at("payload").get<std::string>());
    if (!o.out_file.empty()) {
        std::ofstream f(o.out_file, std::ios::binary | std::ios::trunc);
        if (!f) fail(ErrorCode::IoError, "cannot write " + o.out_file);
        f.write(reinterpret_cast<const char*>(payload.data()),
                static_cast<std::streamsize>(payload.size()));
        emit(o, Json{{"bytes", payload.size()}, {"key", o.key}, {"path", o.out_file}},
             "wrote " + std::to_string(payload.size()) + " bytes to " + o.out_file + "\n");
    } else if (o.json()) {
        emit(o, Json{{"key", o.key}, {"payload", base64_encode(payload)}}, "");
    } else {
        o.out->write(reinterpret_cast<const char*>(payload.data()),
                     static_cast<std::streamsize>(payload.size()));
    }
}

void cmd_object_lineage(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    auto cfg = load_config(s);
    auto channel = resolve_channel(o, cfg);
    auto agent = acting_agent(o, s, cfg, *net);
    auto res = net->query(channel, ledger::build_proposal(channel, "get_lineage",
                                                          Json{{"key", o.key}}, agent.serial(),
                                                          agent.cert_key.private_key, net->now()));
    std::string human;
    for (const auto& e : res.at("lineage")) {
        human += "v" + std::to_string(e.value("version", 0)) + " " +
                 e.value("action", std::string{}) + " by " +
                 std::to_string(e.value("actor", std::uint64_t{0})) + " at " +
                 e.value("timestamp", std::string{}) + " tx " +
                 e.value("tx_id", std::string{}).substr(0, 12) + "\n";
    }
    if (human.empty()) human = "no lineage\n";
    emit(o, res, human);
}

void cmd_object_erase(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    auto cfg = load_config(s);
    auto channel = resolve_channel(o, cfg);
    auto agent = acting_agent(o, s, cfg, *net);
    auto prop = ledger::build_proposal(channel, "erase_object", Json{{"key", o.key}},
                                       agent.serial(), agent.cert_key.private_key, net->now());
    auto outcome = net->invoke(channel, prop);
    net->save();
    if (!outcome.valid) fail(ErrorCode::ContractError, "transaction invalidated at commit");
    Json doc = outcome.result;
    doc["tx"] = outcome.tx_id.hex();
    emit(o, doc,
         "erased " + o.key + "; receipt tx " + outcome.tx_id.hex().substr(0, 12) +
             ", checksum and lineage stay auditable\n");
}

void cmd_audit(Opts& o) {
    Store s{effective_data_dir(o)};
    s.ensure();
    DirLock lock(s.lock_file());
    auto net = open_network(s);
    auto cfg = load_config(s);
    auto channel = resolve_channel(o, cfg);
    auto agent = acting_agent(o, s, cfg, *net);
    ledger::AuditFilter f;
    f.actor = o.actor;
    if (o.type_name) f.event_type = ledger::audit_event_type_from_name(*o.type_name);
    auto events = net->audit_query(channel, agent.serial(), f);
    Json arr = Json::array();
    std::string human;
    for (const auto& e : events) {
        arr.push_back(e.to_json());
        human += format_rfc3339(e.wall_time) + " " +
                 std::string(ledger::audit_event_type_name(e.event_type)) +
                 " actor=" + std::to_string(e.actor) + " tx=" + e.tx_id.hex().substr(0, 12) +
                 "\n";
    }
    if (human.empty()) human = "no audit events\n";
    emit(o, arr, human);
}

void cmd_bench_run(Opts& o) {
    bench::WorkloadSpec spec;
    spec.workload = bench::workload_from_string(o.workload);
    spec.tx_count = o.tx;
    spec.worker_count = o.workers;
    spec.batch_size = o.batch;
    spec.target_send_rate = o.rate;
    auto report = bench::run_benchmark(spec);
    if (!o.out_file.empty()) {
        std::ofstream f(o.out_file, std::ios::binary | std::ios::trunc);
        if (!f) fail(ErrorCode::IoError, "cannot write " + o.out_file);
        f << bench::emit_report(report, bench::ReportFormat::Json);
    }
    emit(o, report.to_json(), bench::emit_report(report, bench::ReportFormat::Human));
}

void cmd_bench_sweep(Opts& o) {
    auto doc = read_json_file(fs::path(o.config_file));
    if (!doc.is_array())
        fail(ErrorCode::MalformedInput, "sweep config must be a JSON array of workload specs");
    std::vector<bench::WorkloadSpec> specs;
    for (const auto& el : doc) specs.push_back(bench::WorkloadSpec::from_json(el));
    auto reports = bench::sweep(specs);
    Json arr = Json::array();
    std::string human;
    for (const auto& r : reports) {
        arr.push_back(r.to_json());
        human += bench::emit_report(r, bench::ReportFormat::Human) + "\n";
    }
    emit(o, arr, human);
}

void cmd_demo(Opts& o) {
    auto r = run_demo(effective_data_dir(o));
    emit(o,
         Json{{"alice_serial", r.alice_serial},
              {"bob_serial", r.bob_serial},
              {"channel", r.channel},
              {"envelope_id", r.envelope_id_hex},
              {"sentinel", r.sentinel},
              {"transcript", r.transcript}},
         r.transcript);
}

}  // namespace

// -------------------------------------------------------------------- demo --

DemoResult run_demo(const fs::path& data_dir) {
    std::error_code ec;
    if (fs::exists(data_dir, ec) && !fs::is_empty(data_dir, ec))
        fail(ErrorCode::DataDirNotEmpty, "demo wants a fresh directory; refusing to touch it");

    Store s{data_dir};
    s.ensure();
    DirLock lock(s.lock_file());

    // Everything below draws randomness from the process generator, so one
    // seed pins keys, uuids, session keys and wrap padding alike.
    rng::seed_deterministic(Bytes(32, 0x5A));
    struct RngRestore {
        ~RngRestore() { rng::use_secure(); }
    } restore;

    ManualClock clock("2024-06-01T09:00:00Z");
    std::ostringstream t;
    t << "tips demo: alice shares indicators with bob over channel threat-intel\n";

    auto ca = identity::CertificateAuthority::create_seeded("demo-root", Bytes(32, 'D'));
    t << "[1] ca demo-root ready, key " << ca.key_id().hex().substr(0, 12) << "\n";

    ledger::NetworkConfig cfg;
    cfg.data_dir = data_dir;
    cfg.clock = &clock;
    auto net = std::make_unique<ledger::Network>(cfg);
    net->add_org("org-alice", 2);
    net->add_org("org-bob", 2);
    identity::MspConfig msp;
    msp.trusted_cas[ca.key_id().hex()] = ca.public_key();
    msp.crl = ca.current_crl();
    net->set_msp(std::move(msp));
    net->create_channel("threat-intel", {"org-alice", "org-bob"},
                        ledger::EndorsementPolicy::MajorityOfOrgs);
    t << "[2] channel threat-intel created: org-alice + org-bob, majority endorsement\n";

    auto seed_of = [](const std::string& tag) {
        auto d = crypto::digest(to_bytes(tag));
        return Bytes(d.bytes.begin(), d.bytes.end());
    };
    // Ten-year validity: the demo clock sits in 2024 but the saved dir is
    // meant to stay usable under the real clock afterwards.
    auto issue_agent = [&](const std::string& name, const std::string& org) {
        auto kp = crypto::generate_keypair(seed_of("demo-cert-" + name));
        auto xkp = crypto::generate_keypair(seed_of("demo-exch-" + name));
        auto csr = identity::create_csr(kp, {name, org}, {{"role", "agent"}});
        write_json_file(s.csr_dir() / (name + ".json"), csr.to_json());
        auto cert = ca.issue(csr, std::chrono::seconds(3650LL * 86400), clock.now());
        write_json_file(s.certs_dir() / (std::to_string(cert.serial) + ".json"), cert.to_json());
        net->enroll(cert);
        save_keypair(s.keys_dir() / (name + ".key"), kp);
        save_keypair(s.keys_dir() / (name + ".exchange.key"), xkp);
        save_keypair(s.keys_dir() / (std::to_string(cert.serial) + ".key"), kp);
        save_keypair(s.keys_dir() / (std::to_string(cert.serial) + ".exchange.key"), xkp);
        return exchange::Agent{cert, kp, xkp};
    };
    auto alice = issue_agent("alice", "org-alice");
    clock.advance(std::chrono::seconds(1));
    auto bob = issue_agent("bob", "org-bob");
    write_json_file(s.ca_file(), ca.to_json(), /*secret=*/true);
    t << "[3] enrolled alice as serial " << alice.serial() << " (org-alice), bob as serial "
      << bob.serial() << " (org-bob)\n";

    clock.advance(std::chrono::seconds(1));
    exchange::publish_public_key(*net, bob, "threat-intel");
    t << "[4] bob published exchange key " << bob.exchange_key->key_id.hex().substr(0, 12)
      << "\n";

    const std::string sentinel = "TLP-RED-CANARY-93c1f0d6e5b2";
    clock.advance(std::chrono::seconds(1));
    auto bundle = exchange::make_bundle(
        "alice",
        {exchange::make_indicator("[file:hashes.'SHA-256' = '" + sentinel + "']", clock.now(),
                                  {"malicious-activity"}),
         exchange::make_indicator("[ipv4-addr:value = '203.0.113.66']", clock.now(),
                                  {"malicious-activity"})});
    policy::AccessPolicy access;
    access.allowed_locations = {"GB"};
    clock.advance(std::chrono::seconds(1));
    auto env = exchange::send_bundle(*net, alice, "threat-intel", bob.serial(), bundle, access);
    t << "[5] alice sealed " << bundle.objects.size() << " indicators into envelope "
      << env.envelope_id.hex() << "\n";
    t << "    access policy: location in {GB}\n";

    clock.advance(std::chrono::seconds(1));
    auto got = exchange::receive_bundle(*net, bob, "threat-intel", env.envelope_id, "GB");
    if (got.canonical_bytes() != bundle.canonical_bytes())
        fail(ErrorCode::IntegrityMismatch, "demo roundtrip produced different bundle bytes");
    t << "[6] bob attested location GB and opened the envelope: bundle " << got.bundle_id
      << " intact\n";

    t << "[7] audit trail:\n";
    for (const auto& e : net->audit_query("threat-intel", alice.serial(), {})) {
        t << "    " << format_rfc3339(e.wall_time) << " "
          << ledger::audit_event_type_name(e.event_type) << " actor=" << e.actor << " tx="
          << e.tx_id.hex().substr(0, 12) << "\n";
    }

    const auto& ch = net->channel("threat-intel");
    auto bad = ch.verify_chain();
    t << "[8] chain verification: "
      << (bad ? "FAILED at height " + std::to_string(*bad)
              : "ok, " + std::to_string(ch.blocks().size()) + " blocks")
      << "\n";
    if (bad) fail(ErrorCode::BrokenChain, "demo chain failed verification");

    net->save();
    CliConfig conf;
    conf.active_identity = alice.serial();
    conf.default_channel = "threat-intel";
    save_config(s, conf);
    t << "demo complete: state saved for further tips commands\n";

    DemoResult r;
    r.transcript = t.str();
    r.sentinel = sentinel;
    r.envelope_id_hex = env.envelope_id.hex();
    r.alice_serial = alice.serial();
    r.bob_serial = bob.serial();
    r.channel = "threat-intel";
    return r;
}

// ---------------------------------------------------------------- dispatch --

int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    Opts o;
    o.out = &out;
    o.err = &err;

    CLI::App app{"trusted threat-intel sharing over a simulated permissioned ledger"};
    app.name("tips");
    app.require_subcommand(0, 1);
    app.add_option("--data-dir", o.data_dir, "state directory (env TIPS_DATA_DIR wins)")
        ->capture_default_str();
    app.add_option("--output", o.output, "output format")
        ->check(CLI::IsMember({"human", "json"}))
        ->capture_default_str();
    app.add_option("--as", o.as_serial, "acting identity serial (default: configured)");

    auto* ca = app.add_subcommand("ca", "certificate authority administration");
    ca->require_subcommand(1);
    auto* ca_init = ca->add_subcommand("init", "create the CA for this data dir");
    ca_init->add_option("--name", o.name, "CA display name")->required();
    ca_init->callback([&] { cmd_ca_init(o); });
    auto* ca_issue = ca->add_subcommand("issue", "issue a certificate from a CSR file");
    ca_issue->add_option("--csr", o.csr_file, "CSR JSON file")->required();
    ca_issue->add_option("--out", o.out_file, "certificate output path");
    ca_issue->add_option("--validity-days", o.validity_days, "validity window in days")
        ->capture_default_str();
    ca_issue->callback([&] { cmd_ca_issue(o); });
    auto* ca_revoke = ca->add_subcommand("revoke", "revoke an issued serial");
    ca_revoke->add_option("--serial", o.serial, "certificate serial")->required();
    ca_revoke->callback([&] { cmd_ca_revoke(o); });

    auto* enroll = app.add_subcommand("enroll", "enroll an issued certificate");
    enroll->add_option("--cert", o.cert_file, "certificate JSON file")->required();
    enroll->callback([&] { cmd_enroll(o); });

    auto* channel = app.add_subcommand("channel", "channel management");
    channel->require_subcommand(1);
    auto* ch_create = channel->add_subcommand("create", "create a channel");
    ch_create->add_option("--channel", o.channel, "channel id")->required();
    ch_create->add_option("--orgs", o.orgs_csv, "member organisations, comma-separated")
        ->required();
    ch_create->add_option("--policy", o.policy_name, "endorsement policy: majority|all|any")
        ->capture_default_str();
    ch_create->add_option("--mode", o.mode_name, "long-term|session")->capture_default_str();
    ch_create->callback([&] { cmd_channel_create(o); });
    auto* ch_list = channel->add_subcommand("list", "list channels");
    ch_list->callback([&] { cmd_channel_list(o); });

    auto* agent = app.add_subcommand("agent", "agent key operations");
    agent->require_subcommand(1);
    auto* keygen = agent->add_subcommand("keygen", "generate cert + exchange keys and a CSR");
    keygen->add_option("--name", o.name, "agent name")->required();
    keygen->add_option("--org", o.org, "organisation")->capture_default_str();
    keygen->add_option("--role", o.role, "certificate role attribute")->capture_default_str();
    keygen->add_option("--csr-out", o.out_file, "CSR output path");
    keygen->callback([&] { cmd_agent_keygen(o); });
    auto* pubkey = agent->add_subcommand("publish-key", "publish the exchange key on a channel");
    pubkey->add_option("--channel", o.channel, "channel id");
    pubkey->callback([&] { cmd_agent_publish_key(o); });
    auto* attest = agent->add_subcommand("attest", "produce a signed attribute attestation");
    attest->add_option("--location", o.location, "ISO 3166 location code")->required();
    attest->callback([&] { cmd_agent_attest(o); });

    auto* send = app.add_subcommand("send", "seal a bundle for a recipient and post it");
    send->add_option("--channel", o.channel, "channel id");
    send->add_option("--to", o.to, "recipient certificate serial")->required();
    send->add_option("--bundle", o.bundle_file, "bundle JSON file")->required();
    send->add_option("--policy", o.policy_file, "access policy JSON file");
    send->callback([&] { cmd_send(o); });

    auto* recv = app.add_subcommand("recv", "receive and open an envelope");
    recv->add_option("--channel", o.channel, "channel id");
    recv->add_option("--envelope", o.envelope_hex, "envelope id (hex)")->required();
    recv->add_option("--location", o.location, "attested location")->capture_default_str();
    recv->add_option("--out", o.out_file, "write the bundle to a file");
    recv->callback([&] { cmd_recv(o); });

    auto* inbox = app.add_subcommand("inbox", "list envelopes addressed to you");
    inbox->add_option("--channel", o.channel, "channel id");
    inbox->add_flag("--unread", o.unread_only, "unread envelopes only");
    inbox->add_option("--from", o.from_serial, "filter by sender serial");
    inbox->callback([&] { cmd_inbox(o); });

    auto* object = app.add_subcommand("object", "world-state object operations");
    object->require_subcommand(1);
    auto* put = object->add_subcommand("put", "store a payload under a key");
    put->add_option("--channel", o.channel, "channel id");
    put->add_option("--key", o.key, "object key")->required();
    put->add_option("--file", o.in_file, "payload file");
    put->add_option("--value", o.value, "payload string");
    put->callback([&] { cmd_object_put(o); });
    auto* get = object->add_subcommand("get", "fetch a payload");
    get->add_option("--channel", o.channel, "channel id");
    get->add_option("--key", o.key, "object key")->required();
    get->add_option("--out", o.out_file, "write the payload to a file");
    get->callback([&] { cmd_object_get(o); });
    auto* lineage = object->add_subcommand("lineage", "show an object's version history");
    lineage->add_option("--channel", o.channel, "channel id");
    lineage->add_option("--key", o.key, "object key")->required();
    lineage->callback([&] { cmd_object_lineage(o); });
    auto* erase = object->add_subcommand("erase", "destroy a payload, leaving a tombstone");
    erase->add_option("--channel", o.channel, "channel id");
    erase->add_option("--key", o.key, "object key")->required();
    erase->callback([&] { cmd_object_erase(o); });

    auto* audit = app.add_subcommand("audit", "query the committed audit trail");
    audit->add_option("--channel", o.channel, "channel id");
    audit->add_option("--actor", o.actor, "filter by actor serial");
    audit->add_option("--type", o.type_name, "filter by event type name");
    audit->callback([&] { cmd_audit(o); });

    auto* bench = app.add_subcommand("bench", "benchmark harness");
    bench->require_subcommand(1);
    auto* brun = bench->add_subcommand("run", "run one workload");
    brun->add_option("--workload", o.workload, "read|batch|roundtrip")->capture_default_str();
    brun->add_option("--tx", o.tx, "transaction count")->capture_default_str();
    brun->add_option("--workers", o.workers, "concurrent clients")->capture_default_str();
    brun->add_option("--rate", o.rate, "open-loop target send rate (tx/s)");
    brun->add_option("--batch-size", o.batch, "assets per batch read")->capture_default_str();
    brun->add_option("--out", o.out_file, "write the JSON report to a file");
    brun->callback([&] { cmd_bench_run(o); });
    auto* bsweep = bench->add_subcommand("sweep", "run a list of workload specs");
    bsweep->add_option("--config", o.config_file, "JSON array of workload specs")->required();
    bsweep->callback([&] { cmd_bench_sweep(o); });

    auto* demo = app.add_subcommand("demo", "scripted alice→bob walkthrough, fixed seeds");
    demo->callback([&] { cmd_demo(o); });

    // Let global options (--data-dir, --output, --as) appear anywhere on the
    // command line: unmatched tokens climb from a subcommand to its parents.
    std::function<void(CLI::App*)> enable_fallthrough = [&](CLI::App* a) {
        a->fallthrough(true);
        for (auto* sub : a->get_subcommands(nullptr)) enable_fallthrough(sub);
    };
    enable_fallthrough(&app);

    try {
        // parse(vector) consumes tokens back-to-front.
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::CallForHelp&) {
        const CLI::App* a = &app;
        while (!a->get_subcommands().empty()) a = a->get_subcommands().front();
        out << a->help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "ERROR UNKNOWN_COMMAND: " << e.what() << "\n";
        return 2;
    } catch (const TipsError& e) {
        err << "ERROR " << e.code_name() << ": " << e.what() << "\n";
        return error_exit_code(e.code());
    } catch (const std::exception& e) {
        err << "ERROR IO_ERROR: " << e.what() << "\n";
        return 1;
    }

    if (app.get_subcommands().empty()) {
        err << "ERROR UNKNOWN_COMMAND: missing command (see --help)\n";
        return 2;
    }
    return 0;
}

}  // namespace tips::cli
