#pragma once

namespace dualalp {

inline constexpr const char* kVersion = "0.1.0";

}
