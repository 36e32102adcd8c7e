#pragma once

#include <string_view>

namespace nlskit {

std::string_view version();

}  // namespace nlskit
