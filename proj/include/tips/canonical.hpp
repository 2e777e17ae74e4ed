#pragma once

#include <json.hpp>

#include <string>

namespace tips {

// nlohmann::json stores object members in a std::map, so serialization is
// already key-sorted. Canonical form = sorted keys + compact separators, and
// every structure that gets hashed or signed goes through this one function.
// Hashed/signed structures never contain floating point members, so the
// float-formatting question does not arise.
using Json = nlohmann::json;

inline std::string canonical_dump(const Json& j) { return j.dump(); }

}  // namespace tips
