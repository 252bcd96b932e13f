#pragma once

#include <string_view>

namespace tslider {

inline constexpr std::string_view kVersion = "0.1.0";

}  // namespace tslider
