#ifndef FITPATH_CHECKPOINT_HPP
#define FITPATH_CHECKPOINT_HPP

#include <string>

#include "fitpath/model.hpp"

namespace fitpath {

// Self-describing binary container: "FITC" magic, u32 format version, JSON
// header (layer specs, tensor index, metadata), raw little-endian f64
// payloads, CRC32 trailer. Round-trips are bit-exact on parameters and specs.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace fitpath

#endif
