#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "facelivt/model.hpp"

namespace facelivt {

// Variant description files are INI-style: a [model] section with global
// keys and one [stageN] section per stage. Keys:
//
//   [model]   variant, stem_dim, heads, mhla_expansion, mlp_expansion,
//             embed_dim, kernel_size, input_size
//   [stageN]  dim, blocks, mixer (repmix | mhsa | mhla), resolution
//
// Missing [model] keys take the ModelConfig defaults; every stage key is required.

ModelConfig parse_config(std::istream& in);
ModelConfig load_config_file(const std::filesystem::path& path);
std::string format_config(const ModelConfig& config);

}  // namespace facelivt
