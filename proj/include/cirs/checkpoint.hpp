#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cirs/params.hpp"

namespace cirs::nn {

using StoreRefs = std::vector<std::pair<std::string, ParamStore*>>;

// Binary, versioned, bit-exact round trip of named parameter stores.
void save_checkpoint(const std::string& path, const StoreRefs& stores);

// Loads into existing stores; store names, parameter names, and shapes must
// match what was saved or this throws.
void load_checkpoint(const std::string& path, const StoreRefs& stores);

}  // namespace cirs::nn
