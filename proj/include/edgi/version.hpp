#pragma once

namespace edgi {

// Build identifier stamped into run manifests.
const char* build_id();

}  // namespace edgi
