#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace toolret {

std::string sha256_hex(std::string_view data);
std::string sha256_file_hex(const std::string& path);

// 64-bit FNV-1a, used to derive per-item RNG seeds from string ids.
std::uint64_t fnv1a64(std::string_view data);

}  // namespace toolret
