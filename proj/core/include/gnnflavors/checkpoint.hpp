#pragma once

#include <string>
#include <vector>

#include "gnnflavors/tensor.hpp"

namespace gnnflavors::tg {

// Parameter checkpoints: a flat list of (name, shape, row-major values) in
// JSON. Values are written as C99 hex-float literals so 64-bit reals
// round-trip exactly. Every tensor must carry a unique non-empty name.
void save_checkpoint(const std::string& path, const std::vector<TensorPtr>& params);

// Loads values into `params`, matched by name; shapes must agree.
void load_checkpoint(const std::string& path, const std::vector<TensorPtr>& params);

std::string encode_hex_double(double v);
double decode_hex_double(const std::string& s);

}  // namespace gnnflavors::tg
