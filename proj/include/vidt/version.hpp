#pragma once

namespace vidt {

inline constexpr const char* kCodeVersion = "0.1.0";

}  // namespace vidt
