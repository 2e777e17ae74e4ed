#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

namespace tips {

// All protocol timestamps are UTC with whole-second resolution.
using UtcTime = std::chrono::sys_seconds;

// "2026-01-05T12:00:00Z"
std::string format_rfc3339(UtcTime t);

// Accepts exactly the format produced by format_rfc3339; throws
// TipsError{MalformedInput} otherwise.
UtcTime parse_rfc3339(std::string_view text);

// Injectable time source so ledger blocks, certificates and policy checks can
// be driven deterministically in tests and in the scripted demo.
class Clock {
public:
    virtual ~Clock() = default;
    virtual UtcTime now() const = 0;
};

class SystemClock final : public Clock {
public:
    UtcTime now() const override {
        return std::chrono::time_point_cast<std::chrono::seconds>(
            std::chrono::system_clock::now());
    }
};

class ManualClock final : public Clock {
public:
    explicit ManualClock(UtcTime start) : now_(start) {}
    explicit ManualClock(std::string_view rfc3339) : now_(parse_rfc3339(rfc3339)) {}

    UtcTime now() const override { return now_; }
    void advance(std::chrono::seconds d) { now_ += d; }
    void set(UtcTime t) { now_ = t; }

private:
    UtcTime now_;
};

}  // namespace tips
