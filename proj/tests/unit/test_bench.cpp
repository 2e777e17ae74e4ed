#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "tips/bench.hpp"
#include "tips/errors.hpp"

using namespace tips;
using namespace std::chrono_literals;
using bench::MetricsReport;
using bench::ReportFormat;
using bench::Workload;
using bench::WorkloadSpec;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const TipsError& e) {
        return e.code();
    }
    return static_cast<ErrorCode>(-1);  // no error raised
}

// The independent oracle: every aggregate must be recomputable from the raw
// per-transaction log, bit-for-bit (same accumulation order as the harness).
void check_against_raw_log(const MetricsReport& r) {
    REQUIRE_FALSE(r.latencies.empty());
    double mn = *std::min_element(r.latencies.begin(), r.latencies.end());
    double mx = *std::max_element(r.latencies.begin(), r.latencies.end());
    double avg = std::accumulate(r.latencies.begin(), r.latencies.end(), 0.0) /
                 static_cast<double>(r.latencies.size());
    CHECK(r.latency_min == mn);
    CHECK(r.latency_max == mx);
    CHECK(r.latency_avg == avg);
    CHECK(r.throughput == static_cast<double>(r.latencies.size()) / r.duration);

    CHECK(r.latency_min <= r.latency_avg);
    CHECK(r.latency_avg <= r.latency_max);
    CHECK(r.committed() + r.failed_tx == r.config.tx_count);
    // throughput x duration returns the committed count (rounding slack 1)
    CHECK(std::abs(r.throughput * r.duration - static_cast<double>(r.committed())) <= 1.0);
}

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("workload names round trip") {
    for (auto w : {Workload::ReadChecksum, Workload::GetAssetsFromBatch,
                   Workload::SendReceiveRoundtrip})
        CHECK(bench::workload_from_string(bench::to_string(w)) == w);
    CHECK(bench::to_string(Workload::ReadChecksum) == "read");
    CHECK(bench::to_string(Workload::GetAssetsFromBatch) == "batch");
    CHECK(bench::to_string(Workload::SendReceiveRoundtrip) == "roundtrip");
    CHECK(code_of([] { bench::workload_from_string("write"); }) == ErrorCode::MalformedInput);
}

TEST_CASE("spec validation and json round trip") {
    WorkloadSpec ok;
    ok.check_valid();  // defaults are runnable

    WorkloadSpec s = ok;
    s.tx_count = 0;
    CHECK(code_of([&] { s.check_valid(); }) == ErrorCode::SetupFailure);
    s = ok;
    s.worker_count = 0;
    CHECK(code_of([&] { s.check_valid(); }) == ErrorCode::SetupFailure);
    s = ok;
    s.workload = Workload::GetAssetsFromBatch;
    s.batch_size = 0;
    CHECK(code_of([&] { s.check_valid(); }) == ErrorCode::SetupFailure);
    s = ok;
    s.target_send_rate = 0.0;
    CHECK(code_of([&] { s.check_valid(); }) == ErrorCode::SetupFailure);
    s = ok;
    s.orderer_batch_size = 0;
    CHECK(code_of([&] { s.check_valid(); }) == ErrorCode::SetupFailure);
    s = ok;
    s.orderer_batch_timeout = 0ms;
    CHECK(code_of([&] { s.check_valid(); }) == ErrorCode::SetupFailure);

    SUBCASE("all fields survive serialization") {
        WorkloadSpec full;
        full.workload = Workload::SendReceiveRoundtrip;
        full.tx_count = 250;
        full.worker_count = 8;
        full.target_send_rate = 42.5;
        full.batch_size = 25;
        full.orderer_batch_size = 16;
        full.orderer_batch_timeout = 75ms;
        full.data_dir = "/tmp/somewhere";
        auto back = WorkloadSpec::from_json(full.to_json());
        CHECK(back.workload == full.workload);
        CHECK(back.tx_count == full.tx_count);
        CHECK(back.worker_count == full.worker_count);
        CHECK(back.target_send_rate == full.target_send_rate);
        CHECK(back.batch_size == full.batch_size);
        CHECK(back.orderer_batch_size == full.orderer_batch_size);
        CHECK(back.orderer_batch_timeout == full.orderer_batch_timeout);
        CHECK(back.data_dir == full.data_dir);

        auto sparse = WorkloadSpec::from_json(WorkloadSpec{}.to_json());
        CHECK_FALSE(sparse.target_send_rate.has_value());
        CHECK_FALSE(sparse.orderer_batch_size.has_value());
        CHECK_FALSE(sparse.orderer_batch_timeout.has_value());
        CHECK_FALSE(sparse.data_dir.has_value());
    }

    SUBCASE("malformed spec documents are rejected") {
        CHECK(code_of([] { WorkloadSpec::from_json(Json{{"workload", "read"}}); }) ==
              ErrorCode::MalformedInput);
        CHECK(code_of([] {
                  WorkloadSpec::from_json(Json{{"workload", "write"},
                                               {"tx_count", 1},
                                               {"worker_count", 1},
                                               {"batch_size", 1}});
              }) == ErrorCode::MalformedInput);
    }
}

TEST_CASE("single read transaction is the degenerate report") {
    WorkloadSpec spec;
    spec.workload = Workload::ReadChecksum;
    spec.tx_count = 1;
    spec.worker_count = 1;
    auto r = bench::run_benchmark(spec);

    CHECK(r.committed() == 1);
    CHECK(r.failed_tx == 0);
    REQUIRE(r.latencies.size() == 1);
    CHECK(r.latency_min == r.latencies[0]);
    CHECK(r.latency_avg == r.latencies[0]);
    CHECK(r.latency_max == r.latencies[0]);
    CHECK(r.latencies[0] > 0.0);
    CHECK(r.duration > 0.0);
    CHECK(r.config.tx_count == 1);
    check_against_raw_log(r);
}

TEST_CASE("batch read run commits everything and the stats recompute exactly") {
    WorkloadSpec spec;
    spec.workload = Workload::GetAssetsFromBatch;
    spec.batch_size = 10;
    spec.tx_count = 1000;
    spec.worker_count = 4;
    auto r = bench::run_benchmark(spec);

    CHECK(r.failed_tx == 0);
    CHECK(r.committed() == 1000);
    CHECK(r.latencies.size() == 1000);
    check_against_raw_log(r);
    CHECK(r.send_rate > 0.0);
}

TEST_CASE("roundtrip workload spans send to successful receive") {
    WorkloadSpec spec;
    spec.workload = Workload::SendReceiveRoundtrip;
    spec.tx_count = 8;
    spec.worker_count = 2;
    auto r = bench::run_benchmark(spec);

    CHECK(r.failed_tx == 0);
    CHECK(r.committed() == 8);
    check_against_raw_log(r);
    // a roundtrip includes two committed transactions plus decryption; it is
    // not instantaneous
    CHECK(r.latency_min > 0.0);
}

TEST_CASE("open loop pacing tracks the offered rate below saturation") {
    WorkloadSpec spec;
    spec.workload = Workload::ReadChecksum;
    spec.tx_count = 50;
    spec.worker_count = 4;
    spec.target_send_rate = 100.0;
    auto r = bench::run_benchmark(spec);

    CHECK(r.failed_tx == 0);
    check_against_raw_log(r);
    // both the submission rate and the committed rate sit on the offered rate
    CHECK(r.send_rate == doctest::Approx(100.0).epsilon(0.10));
    CHECK(r.throughput == doctest::Approx(100.0).epsilon(0.10));
}

TEST_CASE("sweep aligns results with specs and isolates failures") {
    CHECK(code_of([] { bench::sweep({}); }) == ErrorCode::EmptySweep);

    WorkloadSpec tiny;
    tiny.tx_count = 2;
    WorkloadSpec broken;
    broken.tx_count = 0;
    WorkloadSpec tiny_batch;
    tiny_batch.workload = Workload::GetAssetsFromBatch;
    tiny_batch.tx_count = 2;
    tiny_batch.batch_size = 3;

    auto reports = bench::sweep({tiny, broken, tiny_batch});
    REQUIRE(reports.size() == 3);

    CHECK_FALSE(reports[0].error.has_value());
    CHECK(reports[0].committed() == 2);

    REQUIRE(reports[1].error.has_value());
    CHECK(reports[1].error->find("SETUP_FAILURE") != std::string::npos);
    CHECK(reports[1].committed() == 0);
    CHECK(reports[1].config.tx_count == 0);  // config echo survives the failure

    CHECK_FALSE(reports[2].error.has_value());
    CHECK(reports[2].committed() == 2);
    CHECK(reports[2].config.workload == Workload::GetAssetsFromBatch);
}

TEST_CASE("saturated batching throughput follows the cut-rate model") {
    // With the queue never starved, the orderer commits at most
    // batch_size / batch_timeout transactions per second.
    auto model_spec = [](std::chrono::milliseconds timeout, std::uint64_t txs) {
        WorkloadSpec s;
        s.workload = Workload::ReadChecksum;
        s.tx_count = txs;
        s.worker_count = 8;  // in flight >= 2x orderer batch: saturating
        s.orderer_batch_size = 4;
        s.orderer_batch_timeout = timeout;
        return s;
    };
    auto reports = bench::sweep({model_spec(20ms, 150), model_spec(50ms, 100)});
    REQUIRE(reports.size() == 2);

    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        REQUIRE_FALSE(r.error.has_value());
        CHECK(r.failed_tx == 0);
        check_against_raw_log(r);
        double timeout_s =
            std::chrono::duration<double>(*r.config.orderer_batch_timeout).count();
        double model = static_cast<double>(*r.config.orderer_batch_size) / timeout_s;
        INFO("timeout ", timeout_s, "s: throughput ", r.throughput, " vs model ", model);
        CHECK(r.throughput == doctest::Approx(model).epsilon(0.15));
    }
}

TEST_CASE("reference fixture renders in every format") {
    auto r = bench::reference_report();
    CHECK(r.throughput == 91.6);
    CHECK(r.latency_min == 0.01);
    CHECK(r.latency_avg == 0.20);
    CHECK(r.latency_max == 0.65);
    CHECK(r.notes.find("load model") != std::string::npos);  // provenance caveat

    auto human = bench::emit_report(r, ReportFormat::Human);
    for (const char* field : {"send_rate", "throughput", "latency_min", "latency_avg",
                              "latency_max", "failed", "duration"})
        CHECK(human.find(field) != std::string::npos);
    CHECK(human.find("91.60") != std::string::npos);
    CHECK(human.find("0.6500") != std::string::npos);

    auto csv = bench::emit_report(r, ReportFormat::Csv);
    auto newline = csv.find('\n');
    REQUIRE(newline != std::string::npos);
    CHECK(csv.substr(0, newline) ==
          "send_rate,throughput,latency_min,latency_avg,latency_max,failed,duration");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);  // header + one data row
    CHECK(csv.find("91.6") != std::string::npos);

    auto parsed = MetricsReport::from_json(Json::parse(bench::emit_report(r, ReportFormat::Json)));
    CHECK(parsed.throughput == r.throughput);
    CHECK(parsed.notes == r.notes);
}

TEST_CASE("json report emit parses back to an identical report") {
    MetricsReport r;
    r.config.workload = Workload::SendReceiveRoundtrip;
    r.config.tx_count = 3;
    r.config.orderer_batch_timeout = 25ms;
    r.send_rate = 12.3456789012345;
    r.throughput = 11.999999999999998;
    r.latency_min = 0.001;
    r.latency_avg = 0.0123456789;
    r.latency_max = 0.9999999999;
    r.failed_tx = 1;
    r.duration = 0.25;
    r.latencies = {0.001, 0.0123456789};
    r.notes = "synthetic";
    r.error = "CONTRACT_ERROR: example";

    auto emitted = bench::emit_report(r, ReportFormat::Json);
    auto j = Json::parse(emitted);
    REQUIRE(j.is_object());
    // key-sorted emission
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    CHECK(std::is_sorted(keys.begin(), keys.end()));

    auto back = MetricsReport::from_json(j);
    CHECK(back.config.workload == r.config.workload);
    CHECK(back.config.tx_count == r.config.tx_count);
    CHECK(back.config.orderer_batch_timeout == r.config.orderer_batch_timeout);
    CHECK(back.send_rate == r.send_rate);
    CHECK(back.throughput == r.throughput);
    CHECK(back.latency_min == r.latency_min);
    CHECK(back.latency_avg == r.latency_avg);
    CHECK(back.latency_max == r.latency_max);
    CHECK(back.failed_tx == r.failed_tx);
    CHECK(back.duration == r.duration);
    CHECK(back.latencies == r.latencies);
    CHECK(back.notes == r.notes);
    CHECK(back.error == r.error);

    // an empty-run report (zero committed) emits without trouble
    MetricsReport empty;
    CHECK(bench::emit_report(empty, ReportFormat::Csv).size() > 0);
    CHECK(bench::emit_report(empty, ReportFormat::Human).size() > 0);
}

}  // TEST_SUITE
