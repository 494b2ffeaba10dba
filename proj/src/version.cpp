#include "edgi/version.hpp"

namespace edgi {

const char* build_id() { return "edgi-0.1.0"; }

}  // namespace edgi
