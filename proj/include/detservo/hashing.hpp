#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace detservo {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Lowercase hex SHA-256 of a file's contents. Throws std::runtime_error if unreadable.
std::string sha256_file(const std::filesystem::path& path);

/// First eight digest bytes of SHA-256, little-endian.
std::uint64_t hash64(std::string_view bytes);

/// splitmix64 mix, used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace detservo
