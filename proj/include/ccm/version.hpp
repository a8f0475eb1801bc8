#pragma once

namespace ccm {

inline constexpr const char* kVersion = "ccm 1.0.0";

}  // namespace ccm
