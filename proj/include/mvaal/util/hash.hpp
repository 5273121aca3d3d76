#pragma once

#include <string>
#include <string_view>

namespace mvaal {

std::string sha256_hex(std::string_view bytes);
// SHA-256 of "blob <len>\0" followed by the payload, as git does for objects.
std::string blob_hash(std::string_view payload);

}  // namespace mvaal
