#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace st5 {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);
// Throws ContractError on malformed input.
std::string base64_decode(std::string_view text);

}  // namespace st5
