#include "ear/saliency.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "ear/error.hpp"

namespace ear {

namespace {

constexpr char kAttnMagic[8] = {'E', 'A', 'R', 'A', 'T', 'T', 'N', '1'};

std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

}  // namespace

void validate_attention(const AttentionMap& map) {
  if (map.height <= 0 || map.width <= 0) throw DimensionError("attention map is empty");
  if (map.scores.size() != static_cast<std::size_t>(map.height) * map.width)
    throw DimensionError("attention score count does not match dimensions");
  for (float v : map.scores)
    if (!std::isfinite(v) || v < 0.0f) throw ValueError("attention scores must be finite and >= 0");
}

SaliencyMask::SaliencyMask(int height, int width, std::uint8_t fill)
    : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {
  if (height <= 0 || width <= 0) throw DimensionError("mask dimensions must be positive");
}

SaliencyMask SaliencyMask::complement() const {
  SaliencyMask out = *this;
  for (auto& b : out.bits_) b = b ? 0 : 1;
  return out;
}

std::size_t SaliencyMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

GrayImage SaliencyMask::as_gray() const {
  GrayImage out(height_, width_);
  for (std::size_t i = 0; i < bits_.size(); ++i) out.data()[i] = bits_[i] ? 1.0f : 0.0f;
  return out;
}

AttentionMap parse_attention(std::span<const unsigned char> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kAttnMagic, 8) != 0)
    throw FormatError("not an EARATTN1 file (bad magic)");
  AttentionMap map;
  const std::uint32_t h = read_u32le(bytes.data() + 8);
  const std::uint32_t w = read_u32le(bytes.data() + 12);
  if (h == 0 || w == 0) throw FormatError("EARATTN1 header has a zero dimension");
  const std::uint64_t count = static_cast<std::uint64_t>(h) * w;
  if (bytes.size() - 16 != count * 4)
    throw FormatError("EARATTN1 payload length does not match header");
  map.height = static_cast<int>(h);
  map.width = static_cast<int>(w);
  map.scores.resize(count);
  for (std::uint64_t i = 0; i < count; ++i)
    map.scores[i] = std::bit_cast<float>(read_u32le(bytes.data() + 16 + 4 * i));
  validate_attention(map);
  return map;
}

AttentionMap read_attention(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open attention file " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  try {
    return parse_attention(bytes);
  } catch (const ValueError& e) {
    throw ValueError(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> encode_attention(const AttentionMap& map) {
  validate_attention(map);
  std::vector<unsigned char> out(kAttnMagic, kAttnMagic + 8);
  out.reserve(16 + 4 * map.scores.size());
  put_u32le(out, static_cast<std::uint32_t>(map.height));
  put_u32le(out, static_cast<std::uint32_t>(map.width));
  for (float v : map.scores) put_u32le(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

void write_attention(const AttentionMap& map, const std::filesystem::path& path) {
  const auto bytes = encode_attention(map);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write attention file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

double q3_threshold(const AttentionMap& map) {
  if (map.scores.empty()) throw DimensionError("attention map is empty");
  const double n = static_cast<double>(map.scores.size());
  double sum = 0.0;
  for (float v : map.scores) sum += v;
  const double mean = sum / n;
  double sq = 0.0;
  for (float v : map.scores) sq += (v - mean) * (v - mean);
  return mean + kUpperQuartileZ * std::sqrt(sq / n);
}

SaliencyMask binarize_grid(const AttentionMap& map) {
  validate_attention(map);
  SaliencyMask grid(map.height, map.width);
  const auto [lo, hi] = std::minmax_element(map.scores.begin(), map.scores.end());
  // A constant map has sigma = 0 and no cell strictly above the mean.
  if (*lo == *hi) return grid;
  const double t = q3_threshold(map);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) grid.at(y, x) = map.at(y, x) > t ? 1 : 0;
  return grid;
}

SaliencyMask binarize_q3(const AttentionMap& map, int target_height, int target_width) {
  if (target_height < 1 || target_width < 1) throw ValueError("target dimensions must be >= 1");
  const SaliencyMask grid = binarize_grid(map);
  SaliencyMask out(target_height, target_width);
  for (int y = 0; y < target_height; ++y) {
    const int sy = static_cast<int>(static_cast<long long>(y) * grid.height() / target_height);
    for (int x = 0; x < target_width; ++x) {
      const int sx = static_cast<int>(static_cast<long long>(x) * grid.width() / target_width);
      out.at(y, x) = grid.at(sy, sx);
    }
  }
  return out;
}

AttentionMap fallback_saliency(const Image& img) {
  const GrayImage gray = to_gray(img);
  const GrayImage pooled = avg_pool(gaussian_blur(prewitt_magnitude(gray), 2.0f), 8);
  AttentionMap map{pooled.height(), pooled.width(),
                   std::vector<float>(pooled.data().begin(), pooled.data().end())};
  const auto [lo, hi] = std::minmax_element(map.scores.begin(), map.scores.end());
  const float min = *lo, max = *hi;
  if (max == min) {
    std::fill(map.scores.begin(), map.scores.end(), 0.0f);
    return map;
  }
  for (float& v : map.scores) v = (v - min) / (max - min);
  return map;
}

}  // namespace ear
