#pragma once

#include <string>

#include "craniofit/geometry.hpp"

namespace craniofit {

// Wavefront-style text: "v x y z" and "f i j k" with 1-based indices.
// Other record types are ignored on read; polygon faces are rejected.
void write_obj(const mesh& m, const std::string& path);
mesh read_obj(const std::string& path, const std::string& topology_id = "");

}  // namespace craniofit
