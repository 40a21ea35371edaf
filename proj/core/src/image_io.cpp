#include "hdm/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "hdm/error.hpp"

namespace hdm::image_io {

float normalize_u8(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

std::uint8_t export_u8(float v) {
  const float c = std::clamp(v, -1.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround((c + 1.0f) * 127.5f));
}

namespace {

Image from_interleaved(const std::vector<std::uint8_t>& px, int h, int w) {
  Image img(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = normalize_u8(px[(static_cast<std::size_t>(y) * w + x) * 3 + c]);
    }
  }
  return img;
}

Image finish_read(png_image& png, const std::string& what) {
  png.format = PNG_FORMAT_RGB;
  require(png.width > 0 && png.height > 0, ErrorKind::kInvalidImage, what + ": zero-pixel image");
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, px.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorKind::kInvalidImage, what + ": " + msg);
  }
  return from_interleaved(px, static_cast<int>(png.height), static_cast<int>(png.width));
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorKind::kInvalidImage, path.string() + ": " + msg);
  }
  return finish_read(png, path.string());
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorKind::kInvalidImage, "in-memory PNG: " + msg);
  }
  return finish_read(png, "in-memory PNG");
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  require(image.channels == 1 || image.channels == 3, ErrorKind::kInvalidImage, "PNG export needs 1 or 3 channels");
  require(image.height > 0 && image.width > 0, ErrorKind::kInvalidImage, "cannot export an empty image");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(image.height) * image.width * image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        px[(static_cast<std::size_t>(y) * image.width + x) * image.channels + c] = export_u8(image.at(c, y, x));
      }
    }
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, px.data(), 0, nullptr)) {
    fail(ErrorKind::kIo, std::string("PNG size query failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, px.data(), 0, nullptr)) {
    fail(ErrorKind::kIo, std::string("PNG encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_png(image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorKind::kIo, "write failed for " + path.string());
}

}  // namespace hdm::image_io
