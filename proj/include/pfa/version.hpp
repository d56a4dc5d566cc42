#pragma once

namespace pfa {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace pfa
