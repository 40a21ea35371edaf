#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hdm/image.hpp"

namespace hdm::image_io {

// 8-bit value v maps to v / 127.5 - 1.
float normalize_u8(std::uint8_t v);
// Clamps to [-1, 1] and rounds to the nearest 8-bit level.
std::uint8_t export_u8(float v);

// Decodes any PNG as 8-bit RGB, normalized to [-1, 1]. Throws kInvalidImage.
Image read_png(const std::filesystem::path& path);
Image decode_png(const std::vector<std::uint8_t>& bytes);

// Writes a 1- or 3-channel image as 8-bit PNG. Throws kIo.
void write_png(const std::filesystem::path& path, const Image& image);
std::vector<std::uint8_t> encode_png(const Image& image);

}  // namespace hdm::image_io
