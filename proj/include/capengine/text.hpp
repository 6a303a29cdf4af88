// SPDX-License-Identifier: Apache-2.0
//
// Small string and digest helpers shared across modules.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capengine {

std::string_view trim(std::string_view text);
std::string to_lower_ascii(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::vector<std::string> split_lines(std::string_view text);
bool starts_with_ci(std::string_view text, std::string_view prefix);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws InvalidArgument on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace capengine
