#pragma once

#include <json.hpp>

namespace pflab {
// Ordered keys keep serialized documents in declaration order, which makes
// byte-for-byte comparisons of outputs meaningful.
using Json = nlohmann::ordered_json;
}  // namespace pflab
