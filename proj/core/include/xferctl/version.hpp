#pragma once

namespace xferctl {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace xferctl
