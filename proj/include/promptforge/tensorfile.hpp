#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace promptforge {

// Binary container: "ACVP", u32 version, u32 entry count, then per entry
// u32 name length, UTF-8 name, u32 rank, rank x u32 dims, f32 payload.
// Everything little-endian.
inline constexpr std::uint32_t kTensorFileVersion = 1;

struct TensorEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t element_count() const;
};

void tensorfile_write(const std::filesystem::path& path, const std::vector<TensorEntry>& entries);
std::vector<TensorEntry> tensorfile_read(const std::filesystem::path& path);

std::vector<std::uint8_t> tensorfile_encode(const std::vector<TensorEntry>& entries);
std::vector<TensorEntry> tensorfile_decode(const std::vector<std::uint8_t>& bytes);

const TensorEntry& find_entry(const std::vector<TensorEntry>& entries, const std::string& name);
const TensorEntry* find_entry_or_null(const std::vector<TensorEntry>& entries, const std::string& name);

}  // namespace promptforge
