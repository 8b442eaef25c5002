#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "ear/error.hpp"
#include "ear/image.hpp"

namespace ear {

namespace {

struct PngImageGuard {
  png_image image;
  PngImageGuard() {
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImageGuard() { png_image_free(&image); }
  PngImageGuard(const PngImageGuard&) = delete;
  PngImageGuard& operator=(const PngImageGuard&) = delete;
};

std::uint8_t to_byte(float v) {
  const float clamped = std::isfinite(v) ? std::min(std::max(v, 0.0f), 1.0f) : 0.0f;
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

void write_png(const std::filesystem::path& path, int height, int width, int channels,
               const std::vector<std::uint8_t>& bytes) {
  PngImageGuard guard;
  guard.image.width = static_cast<png_uint_32>(width);
  guard.image.height = static_cast<png_uint_32>(height);
  guard.image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&guard.image, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + guard.image.message);
}

}  // namespace

Image decode_png(std::span<const unsigned char> bytes) {
  PngImageGuard guard;
  if (!png_image_begin_read_from_memory(&guard.image, bytes.data(), bytes.size()))
    throw FormatError(std::string("invalid PNG: ") + guard.image.message);
  const png_uint_32 fmt = guard.image.format;
  if (fmt & PNG_FORMAT_FLAG_LINEAR) throw FormatError("unsupported PNG bit depth (16-bit)");
  if (fmt & PNG_FORMAT_FLAG_ALPHA) throw FormatError("unsupported PNG format (alpha channel)");
  const int channels = (fmt & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  guard.image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int height = static_cast<int>(guard.image.height);
  const int width = static_cast<int>(guard.image.width);
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(guard.image));
  if (!png_image_finish_read(&guard.image, nullptr, buffer.data(), 0, nullptr))
    throw FormatError(std::string("corrupt PNG: ") + guard.image.message);
  std::vector<float> data(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) data[i] = buffer[i] / 255.0f;
  return Image(height, width, channels, std::move(data));
}

Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_image(const Image& img, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) bytes[i] = to_byte(img.data()[i]);
  write_png(path, img.height(), img.width(), img.channels(), bytes);
}

void save_image(const GrayImage& img, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) bytes[i] = to_byte(img.data()[i]);
  write_png(path, img.height(), img.width(), 1, bytes);
}

}  // namespace ear
