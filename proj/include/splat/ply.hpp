#pragma once

#include <string>

#include "splat/gaussian.hpp"

namespace splat {

/// Binary little-endian PLY, one vertex per Gaussian: x,y,z, scale_0..2
/// (log-space), rot_0..3 (raw quaternion), opacity (logit), red,green,blue —
/// all float32. The scene bound radius rides along in a header comment.
void export_ply(const GaussianScene& scene, const std::string& path);
GaussianScene import_ply(const std::string& path);

} // namespace splat
