#pragma once

namespace ht {

inline constexpr const char* kToolName = "hydrotype";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace ht
