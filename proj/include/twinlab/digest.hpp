#pragma once
#include <cstdint>
#include <string>

namespace twinlab::digest {

/* SHA-256 (FIPS 180-4), lowercase hex output. */
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& data);
std::string sha256_file(const std::string& path);

} // namespace twinlab::digest
