#include "tips/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <system_error>
#include <thread>
#include <utility>

#include "tips/contract.hpp"
#include "tips/encoding.hpp"
#include "tips/errors.hpp"
#include "tips/exchange.hpp"
#include "tips/identity.hpp"
#include "tips/ledger.hpp"
#include "tips/rng.hpp"

namespace tips::bench {

namespace fs = std::filesystem;
using SteadyClock = std::chrono::steady_clock;
using namespace std::chrono_literals;

std::string to_string(Workload w) {
    switch (w) {
        case Workload::ReadChecksum: return "read";
        case Workload::GetAssetsFromBatch: return "batch";
        case Workload::SendReceiveRoundtrip: return "roundtrip";
    }
    fail(ErrorCode::MalformedInput, "unknown workload value");
}

Workload workload_from_string(const std::string& name) {
    if (name == "read") return Workload::ReadChecksum;
    if (name == "batch") return Workload::GetAssetsFromBatch;
    if (name == "roundtrip") return Workload::SendReceiveRoundtrip;
    fail(ErrorCode::MalformedInput, "unknown workload: " + name);
}

void WorkloadSpec::check_valid() const {
    if (tx_count < 1) fail(ErrorCode::SetupFailure, "tx_count must be at least 1");
    if (worker_count < 1) fail(ErrorCode::SetupFailure, "worker_count must be at least 1");
    if (workload == Workload::GetAssetsFromBatch && batch_size < 1)
        fail(ErrorCode::SetupFailure, "batch_size must be at least 1");
    if (target_send_rate && *target_send_rate <= 0.0)
        fail(ErrorCode::SetupFailure, "target_send_rate must be positive");
    if (orderer_batch_size && *orderer_batch_size == 0)
        fail(ErrorCode::SetupFailure, "orderer batch size must be at least 1");
    if (orderer_batch_timeout && orderer_batch_timeout->count() <= 0)
        fail(ErrorCode::SetupFailure, "orderer batch timeout must be positive");
}

Json WorkloadSpec::to_json() const {
    Json j{{"workload", to_string(workload)},
           {"tx_count", tx_count},
           {"worker_count", worker_count},
           {"batch_size", batch_size}};
    if (target_send_rate) j["target_send_rate"] = *target_send_rate;
    if (orderer_batch_size) j["orderer_batch_size"] = *orderer_batch_size;
    if (orderer_batch_timeout) j["orderer_batch_timeout_ms"] = orderer_batch_timeout->count();
    if (data_dir) j["data_dir"] = data_dir->string();
    return j;
}

WorkloadSpec WorkloadSpec::from_json(const Json& j) {
    try {
        WorkloadSpec s;
        s.workload = workload_from_string(j.at("workload").get<std::string>());
        s.tx_count = j.at("tx_count").get<std::uint64_t>();
        s.worker_count = j.at("worker_count").get<std::uint32_t>();
        s.batch_size = j.at("batch_size").get<std::uint32_t>();
        if (j.contains("target_send_rate"))
            s.target_send_rate = j.at("target_send_rate").get<double>();
        if (j.contains("orderer_batch_size"))
            s.orderer_batch_size = j.at("orderer_batch_size").get<std::size_t>();
        if (j.contains("orderer_batch_timeout_ms"))
            s.orderer_batch_timeout =
                std::chrono::milliseconds(j.at("orderer_batch_timeout_ms").get<std::int64_t>());
        if (j.contains("data_dir")) s.data_dir = fs::path(j.at("data_dir").get<std::string>());
        return s;
    } catch (const Json::exception& e) {
        fail(ErrorCode::MalformedInput, std::string("bad workload spec: ") + e.what());
    }
}

Json MetricsReport::to_json() const {
    Json j{{"config", config.to_json()},
           {"send_rate", send_rate},
           {"throughput", throughput},
           {"latency_min", latency_min},
           {"latency_avg", latency_avg},
           {"latency_max", latency_max},
           {"failed", failed_tx},
           {"duration", duration},
           {"committed", committed()},
           {"latencies", latencies},
           {"notes", notes}};
    if (error) j["error"] = *error;
    return j;
}

MetricsReport MetricsReport::from_json(const Json& j) {
    try {
        MetricsReport r;
        r.config = WorkloadSpec::from_json(j.at("config"));
        r.send_rate = j.at("send_rate").get<double>();
        r.throughput = j.at("throughput").get<double>();
        r.latency_min = j.at("latency_min").get<double>();
        r.latency_avg = j.at("latency_avg").get<double>();
        r.latency_max = j.at("latency_max").get<double>();
        r.failed_tx = j.at("failed").get<std::uint64_t>();
        r.duration = j.at("duration").get<double>();
        r.latencies = j.at("latencies").get<std::vector<double>>();
        r.notes = j.at("notes").get<std::string>();
        if (j.contains("error")) r.error = j.at("error").get<std::string>();
        return r;
    } catch (const Json::exception& e) {
        fail(ErrorCode::MalformedInput, std::string("bad metrics report: ") + e.what());
    }
}

namespace {

// Shortest representation that parses back to the same double.
std::string num(double v) { return Json(v).dump(); }

std::string human_table(const MetricsReport& r) {
    std::string out = "benchmark report (" + to_string(r.config.workload) + ")\n";
    auto row = [&](const char* name, const std::string& value) {
        char line[192];
        std::snprintf(line, sizeof(line), "  %-12s %s\n", name, value.c_str());
        out += line;
    };
    auto secs = [](double v) {
        char b[48];
        std::snprintf(b, sizeof(b), "%.4f s", v);
        return std::string(b);
    };
    auto rate = [](double v) {
        char b[48];
        std::snprintf(b, sizeof(b), "%.2f tx/s", v);
        return std::string(b);
    };
    row("tx_count", std::to_string(r.config.tx_count));
    row("workers", std::to_string(r.config.worker_count));
    row("send_rate", rate(r.send_rate));
    row("throughput", rate(r.throughput));
    row("latency_min", secs(r.latency_min));
    row("latency_avg", secs(r.latency_avg));
    row("latency_max", secs(r.latency_max));
    row("failed", std::to_string(r.failed_tx));
    row("duration", secs(r.duration));
    if (!r.notes.empty()) row("notes", r.notes);
    if (r.error) row("error", *r.error);
    return out;
}

}  // namespace

std::string emit_report(const MetricsReport& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::Json: return report.to_json().dump(2) + "\n";
        case ReportFormat::Csv: {
            std::string out =
                "send_rate,throughput,latency_min,latency_avg,latency_max,failed,duration\n";
            out += num(report.send_rate) + "," + num(report.throughput) + "," +
                   num(report.latency_min) + "," + num(report.latency_avg) + "," +
                   num(report.latency_max) + "," + std::to_string(report.failed_tx) + "," +
                   num(report.duration) + "\n";
            return out;
        }
        case ReportFormat::Human: return human_table(report);
    }
    fail(ErrorCode::MalformedInput, "unknown report format");
}

namespace {

constexpr const char* kChannel = "bench";

struct TxRecord {
    SteadyClock::time_point start{};
    SteadyClock::time_point submitted{};
    SteadyClock::time_point done{};
    bool ok = false;
};

double seconds_between(SteadyClock::time_point a, SteadyClock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
}

// Scratch network directory, removed on exit when we created it ourselves.
struct ScratchDir {
    fs::path path;
    bool owned = false;
    ~ScratchDir() {
        if (owned) {
            std::error_code ec;
            fs::remove_all(path, ec);
        }
    }
};

exchange::Agent enroll_agent(ledger::Network& net, identity::CertificateAuthority& ca,
                             const std::string& name, const std::string& org,
                             bool with_exchange_key) {
    auto kp = crypto::generate_keypair();
    auto csr = identity::create_csr(kp, {name, org}, {{"role", "agent"}});
    exchange::Agent a{ca.issue(csr, identity::kDefaultValidity, net.now()), kp, std::nullopt};
    net.enroll(a.certificate);
    if (with_exchange_key) a.exchange_key = crypto::generate_keypair();
    return a;
}

// Endorse with both orgs and hand to the orderer without waiting.
crypto::Digest submit_put(ledger::Network& net, const exchange::Agent& client,
                          const std::string& key, const Bytes& payload) {
    auto p = ledger::build_proposal(
        kChannel, "put_object", Json{{"key", key}, {"payload", base64_encode(payload)}},
        client.serial(), client.cert_key.private_key, net.now());
    auto e1 = net.endorse(kChannel, p, "org1");
    auto e2 = net.endorse(kChannel, p, "org2");
    net.submit(kChannel, p, {std::move(e1.endorsement), std::move(e2.endorsement)});
    return p.tx_id;
}

}  // namespace

MetricsReport run_benchmark(const WorkloadSpec& spec) {
    spec.check_valid();

    ScratchDir scratch;
    if (spec.data_dir) {
        scratch.path = *spec.data_dir;
    } else {
        scratch.path = fs::temp_directory_path() / ("tips_bench_" + hex_encode(rng::bytes(8)));
        scratch.owned = true;
    }

    const bool batching = spec.orderer_batch_size.has_value() ||
                          spec.orderer_batch_timeout.has_value();
    ledger::NetworkConfig cfg;
    cfg.data_dir = scratch.path;
    cfg.immediate_commit = !batching;
    if (spec.orderer_batch_size) cfg.batch_size = *spec.orderer_batch_size;
    if (spec.orderer_batch_timeout) cfg.batch_timeout = *spec.orderer_batch_timeout;

    ledger::Network net(cfg);
    net.add_org("org1", 2);
    net.add_org("org2", 2);
    auto ca = identity::CertificateAuthority::create_seeded("bench-root", rng::bytes(32));
    identity::MspConfig msp;
    msp.trusted_cas[ca.key_id().hex()] = ca.public_key();
    msp.crl = ca.current_crl();
    net.set_msp(msp);
    net.create_channel(kChannel, {"org1", "org2"}, ledger::EndorsementPolicy::MajorityOfOrgs);
    if (batching) net.start_pump();

    exchange::Agent alice = enroll_agent(net, ca, "bench-alice", "org1", false);
    exchange::Agent bob = enroll_agent(net, ca, "bench-bob", "org2", true);

    // Workload fixtures: read pools are seeded up front, roundtrip bundles
    // are pre-built so generation cost stays out of the measured window.
    std::vector<std::string> pool_keys;
    std::vector<exchange::ThreatBundle> bundles;
    switch (spec.workload) {
        case Workload::ReadChecksum: {
            auto n = static_cast<std::size_t>(std::min<std::uint64_t>(spec.tx_count, 100));
            crypto::Digest last{};
            for (std::size_t i = 0; i < n; ++i) {
                std::string key = "asset-" + std::to_string(i);
                Bytes payload =
                    to_bytes("asset record " + std::to_string(i) + " " + std::string(100, 'x'));
                last = submit_put(net, alice, key, payload);
                pool_keys.push_back(std::move(key));
            }
            net.flush(kChannel);
            if (!net.wait_for(last, 10s)) fail(ErrorCode::SetupFailure, "seeding did not commit");
            break;
        }
        case Workload::GetAssetsFromBatch: {
            constexpr std::size_t kPool = 10;
            crypto::Digest last{};
            for (std::size_t i = 0; i < kPool; ++i) {
                Json assets = Json::array();
                for (std::uint32_t k = 0; k < spec.batch_size; ++k)
                    assets.push_back(Json{{"id", k},
                                          {"value", "asset-" + std::to_string(i) + "-" +
                                                        std::to_string(k) + "-" +
                                                        std::string(64, 'v')}});
                std::string key = "batch-" + std::to_string(i);
                last = submit_put(net, alice, key, to_bytes(canonical_dump(assets)));
                pool_keys.push_back(std::move(key));
            }
            net.flush(kChannel);
            if (!net.wait_for(last, 10s)) fail(ErrorCode::SetupFailure, "seeding did not commit");
            break;
        }
        case Workload::SendReceiveRoundtrip: {
            exchange::publish_public_key(net, bob, kChannel);
            bundles.reserve(spec.tx_count);
            for (std::uint64_t i = 0; i < spec.tx_count; ++i)
                bundles.push_back(exchange::make_bundle(
                    "bench-alice", {exchange::make_indicator(
                                       "[x-bench:seq = '" + std::to_string(i) + "']",
                                       net.now(), {"benchmark"})}));
            break;
        }
    }

    const bool open_loop = spec.target_send_rate.has_value();
    const std::chrono::duration<double> period{open_loop ? 1.0 / *spec.target_send_rate : 0.0};

    // One read transaction through the full pipeline. The seq argument is a
    // client nonce: contract ops ignore it, but it keeps tx ids of repeated
    // reads of one key distinct within a timestamp tick.
    auto run_read = [&](std::uint64_t i, const std::string& op, TxRecord& rec) {
        const std::string& key = pool_keys[i % pool_keys.size()];
        auto p = ledger::build_proposal(kChannel, op, Json{{"key", key}, {"seq", i}},
                                        alice.serial(), alice.cert_key.private_key, net.now());
        auto e1 = net.endorse(kChannel, p, "org1");
        auto e2 = net.endorse(kChannel, p, "org2");
        Json simulated = e1.result;
        net.submit(kChannel, p, {std::move(e1.endorsement), std::move(e2.endorsement)});
        rec.submitted = SteadyClock::now();
        auto out = net.wait_for(p.tx_id, batching ? 30000ms : 0ms);
        if (!out || !out->valid) fail(ErrorCode::ContractError, "transaction did not commit");
        if (spec.workload == Workload::GetAssetsFromBatch) {
            auto payload = base64_decode(simulated.at("payload").get<std::string>());
            Json assets = Json::parse(payload.begin(), payload.end());
            if (!assets.is_array() || assets.size() != spec.batch_size)
                fail(ErrorCode::IntegrityMismatch, "batch read returned the wrong asset count");
        }
    };

    std::vector<TxRecord> recs(spec.tx_count);
    std::atomic<std::uint64_t> next{0};
    const auto run_start = SteadyClock::now();

    auto worker = [&] {
        for (;;) {
            auto i = next.fetch_add(1);
            if (i >= spec.tx_count) return;
            if (open_loop)
                std::this_thread::sleep_until(run_start + period * static_cast<double>(i));
            TxRecord& rec = recs[i];
            rec.start = SteadyClock::now();
            try {
                switch (spec.workload) {
                    case Workload::ReadChecksum: run_read(i, "get_checksum", rec); break;
                    case Workload::GetAssetsFromBatch: run_read(i, "get_object", rec); break;
                    case Workload::SendReceiveRoundtrip: {
                        auto env = exchange::send_bundle(net, alice, kChannel, bob.serial(),
                                                         bundles[i], {});
                        rec.submitted = SteadyClock::now();
                        exchange::receive_bundle(net, bob, kChannel, env.envelope_id, "GB");
                        break;
                    }
                }
                rec.ok = true;
            } catch (const TipsError&) {
                rec.ok = false;
            }
            rec.done = SteadyClock::now();
            if (rec.submitted.time_since_epoch().count() == 0) rec.submitted = rec.done;
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(spec.worker_count);
    for (std::uint32_t w = 0; w < spec.worker_count; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (batching) net.stop_pump();

    MetricsReport report;
    report.config = spec;
    auto submit_end = run_start;
    auto run_end = run_start;
    for (const auto& rec : recs) {
        submit_end = std::max(submit_end, rec.submitted);
        run_end = std::max(run_end, rec.done);
        if (rec.ok) report.latencies.push_back(seconds_between(rec.start, rec.done));
    }
    report.failed_tx = spec.tx_count - report.committed();
    report.duration = std::max(seconds_between(run_start, run_end), 1e-9);
    double window = std::max(seconds_between(run_start, submit_end), 1e-9);
    report.send_rate = static_cast<double>(spec.tx_count) / window;
    report.throughput = static_cast<double>(report.committed()) / report.duration;
    if (!report.latencies.empty()) {
        report.latency_min = *std::min_element(report.latencies.begin(), report.latencies.end());
        report.latency_max = *std::max_element(report.latencies.begin(), report.latencies.end());
        report.latency_avg =
            std::accumulate(report.latencies.begin(), report.latencies.end(), 0.0) /
            static_cast<double>(report.latencies.size());
    }
    return report;
}

std::vector<MetricsReport> sweep(const std::vector<WorkloadSpec>& specs) {
    if (specs.empty()) fail(ErrorCode::EmptySweep, "sweep needs at least one workload spec");
    std::vector<MetricsReport> out;
    out.reserve(specs.size());
    for (const auto& spec : specs) {
        try {
            out.push_back(run_benchmark(spec));
        } catch (const TipsError& e) {
            MetricsReport failed;
            failed.config = spec;
            failed.error = std::string(error_code_name(e.code())) + ": " + e.what();
            out.push_back(std::move(failed));
        }
    }
    return out;
}

MetricsReport reference_report() {
    MetricsReport r;
    r.config.workload = Workload::GetAssetsFromBatch;
    r.throughput = 91.6;
    r.latency_min = 0.01;
    r.latency_avg = 0.20;
    r.latency_max = 0.65;
    r.notes =
        "reference numbers from an external measurement of this topology on a "
        "production consensus stack; load model and worker count unknown";
    return r;
}

}  // namespace tips::bench
