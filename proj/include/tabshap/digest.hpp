#pragma once

#include <string>
#include <string_view>

namespace tabshap {

// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(std::string_view bytes);

// Cache key for a backend query: SHA-256 over the exact prompt bytes, a NUL
// separator and the decimal k.
std::string prompt_digest(std::string_view prompt, int k);

}  // namespace tabshap
