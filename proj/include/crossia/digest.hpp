#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "crossia/image.hpp"

namespace crossia {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
// Digest of dimensions plus pixel bytes; independent of the file encoding.
std::string image_digest(const RgbImage& image);

}  // namespace crossia
