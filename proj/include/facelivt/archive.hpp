#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "facelivt/model.hpp"

namespace facelivt {

/// Malformed archive, image or embedding payload.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ArchiveEntry {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    bool operator==(const ArchiveEntry&) const = default;
};

/// Flat named-tensor container with a fixed little-endian layout:
///
///   magic "FLVTWTS1" | u32 entry count | entries...
///   entry: u32 name length | name bytes | u32 rank | u32 dims[rank] | f32 payload
///
/// Entries keep insertion order, so equal content serializes to equal bytes.
class WeightArchive {
public:
    static constexpr std::string_view kMagic = "FLVTWTS1";

    void add(std::string name, std::vector<std::uint32_t> dims, std::vector<float> values);
    const ArchiveEntry* find(std::string_view name) const;
    /// Throws FormatError when absent.
    const ArchiveEntry& get(std::string_view name) const;
    const std::vector<ArchiveEntry>& entries() const { return entries_; }

    std::vector<std::uint8_t> serialize() const;
    static WeightArchive deserialize(std::span<const std::uint8_t> bytes);

    void save(const std::filesystem::path& path) const;
    static WeightArchive load(const std::filesystem::path& path);

    bool operator==(const WeightArchive&) const = default;

private:
    std::vector<ArchiveEntry> entries_;
};

WeightArchive to_archive(const Model& model);
Model from_archive(const WeightArchive& archive);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace facelivt
