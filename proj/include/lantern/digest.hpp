#pragma once

#include <string>

namespace lantern {

// Lowercase hex SHA-256.
std::string sha256_hex(const std::string& bytes);
std::string file_sha256_hex(const std::string& path);

}  // namespace lantern
