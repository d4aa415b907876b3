#pragma once

namespace dynaslice {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace dynaslice
