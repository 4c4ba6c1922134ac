#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "facelivt/model.hpp"

namespace facelivt::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kVerificationFailed = 2,
    kIoFormat = 3,
};

/// Runs one command line. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Accepts a raw little-endian float32 CHW tensor, raw interleaved 8-bit RGB,
/// or a binary PPM (P6). 8-bit values map to [-1, 1] by v / 127.5 - 1.
Tensor load_image(const std::filesystem::path& path, std::size_t size);

std::vector<float> read_embedding(const std::filesystem::path& path);
void write_embedding(const std::filesystem::path& path, std::span<const float> embedding);

}  // namespace facelivt::cli
