#include "nlskit/version.hpp"

namespace nlskit {

std::string_view version() { return NLSKIT_VERSION_STRING; }

}  // namespace nlskit
