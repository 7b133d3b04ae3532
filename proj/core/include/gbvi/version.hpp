#pragma once

namespace gbvi {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace gbvi
