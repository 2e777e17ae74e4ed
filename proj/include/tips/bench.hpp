#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tips/canonical.hpp"

namespace tips::bench {

// Workloads driven against a fresh two-org network:
//  - ReadChecksum: committed read transactions fetching an object checksum.
//  - GetAssetsFromBatch: committed reads of a stored asset batch (payload
//    size scales with batch_size, exercising the off-chain path).
//  - SendReceiveRoundtrip: full envelope exchange; latency spans from the
//    send call to the successful receive.
enum class Workload { ReadChecksum, GetAssetsFromBatch, SendReceiveRoundtrip };

std::string to_string(Workload w);
Workload workload_from_string(const std::string& name);  // "read"|"batch"|"roundtrip"

struct WorkloadSpec {
    Workload workload = Workload::ReadChecksum;
    std::uint64_t tx_count = 1;
    std::uint32_t worker_count = 1;
    // Open-loop fixed-rate arrivals when set (tx i is scheduled at start +
    // i/rate); closed-loop (one in-flight tx per worker) otherwise.
    std::optional<double> target_send_rate;
    std::uint32_t batch_size = 10;  // assets per batch object

    // Orderer overrides: setting either routes commits through the batching
    // pipeline with these parameters instead of immediate per-tx commit.
    std::optional<std::size_t> orderer_batch_size;
    std::optional<std::chrono::milliseconds> orderer_batch_timeout;

    // Scratch location for the run's network; a fresh temp directory (removed
    // afterwards) when unset.
    std::optional<std::filesystem::path> data_dir;

    void check_valid() const;  // throws SETUP_FAILURE

    Json to_json() const;
    static WorkloadSpec from_json(const Json& j);
};

struct MetricsReport {
    WorkloadSpec config;
    double send_rate = 0.0;    // tx/s over the submission window
    double throughput = 0.0;   // committed tx/s over the whole run
    double latency_min = 0.0;  // seconds
    double latency_avg = 0.0;
    double latency_max = 0.0;
    std::uint64_t failed_tx = 0;
    double duration = 0.0;  // seconds, run start to last completion

    // Raw per-transaction latency log (seconds, transaction order, committed
    // transactions only). The aggregate fields above are derived from it.
    std::vector<double> latencies;

    std::string notes;                 // annotations (reference fixtures etc.)
    std::optional<std::string> error;  // set when a sweep entry failed

    std::uint64_t committed() const { return static_cast<std::uint64_t>(latencies.size()); }

    Json to_json() const;  // key-sorted; parses back to an identical report
    static MetricsReport from_json(const Json& j);
};

// Executes the spec against a fresh 2-org x 2-peer single-channel network.
// Per-transaction latency runs from submission to commit visibility; for
// roundtrips it extends to the successful receive. Per-tx failures are
// counted, not fatal.
MetricsReport run_benchmark(const WorkloadSpec& spec);

enum class ReportFormat { Human, Json, Csv };

// Stable field names: send_rate, throughput, latency_min, latency_avg,
// latency_max, failed, duration. CSV is a header row plus one data row.
std::string emit_report(const MetricsReport& report, ReportFormat format);

// Sequential runs on fresh networks; the result array aligns with the input.
// A failing spec yields a report with `error` set in its slot. Throws
// EMPTY_SWEEP on an empty list.
std::vector<MetricsReport> sweep(const std::vector<WorkloadSpec>& specs);

// Reference numbers from a prior measurement of this topology on external
// infrastructure (different hardware, consensus stack, and an unknown load
// model). Useful as a report-format fixture; never a pass/fail target.
MetricsReport reference_report();

}  // namespace tips::bench
