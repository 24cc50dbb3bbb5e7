#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ssankit/tensor.hpp"

namespace ssankit {

// Flat key -> tensor archive.
//
// Layout (little-endian):
//   magic "SSANKIT\0" | u32 version | u32 entry count
//   per entry: u32 key length | key bytes | u32 rank | u64 dims[rank] | f64 values[prod(dims)]
// Entries are written in lexicographic key order, so equal contents give equal bytes.
using TensorArchive = std::map<std::string, Tensor>;

inline constexpr std::uint32_t kArchiveVersion = 1;

std::vector<char> serialize_archive(const TensorArchive& archive);
TensorArchive deserialize_archive(const std::vector<char>& bytes);

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

// 64-bit FNV-1a, used for cache keys and provenance hashes.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

} // namespace ssankit
