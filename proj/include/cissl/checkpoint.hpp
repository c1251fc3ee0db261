#pragma once

#include <string>

#include "cissl/nn.hpp"

namespace cissl::nn {

// Self-describing checkpoint container:
//   bytes 0..7   magic "CISSLCK1"
//   u32          format version (currently 1)
//   u64 + bytes  config snapshot, JSON (backbone, heads, init seed, step)
//   u64          parameter count
//   per param    u16 name length + name, u8 flags, u8 rank, u32 dims,
//                u64 payload bytes, float32 data
// All integers and floats little-endian. Round-trips are bit-exact.
void save_checkpoint(const ModelBundle& bundle, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

}  // namespace cissl::nn
