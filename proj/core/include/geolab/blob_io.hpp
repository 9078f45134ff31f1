#pragma once

#include <iosfwd>
#include <string>

#include "geolab/tensor.hpp"

namespace geolab {

// Tensor blob format, little-endian throughout:
//   8-byte magic "GLTENS01", 4-byte rank (u32), rank x 8-byte extents (u64),
//   then numel x 8-byte IEEE-754 doubles.
void save_tensor(std::ostream& os, const Tensor& t);
void save_tensor(const std::string& path, const Tensor& t);
TensorPtr load_tensor(std::istream& is);
TensorPtr load_tensor(const std::string& path);

}  // namespace geolab
