#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "ear/image.hpp"
#include "ear/saliency.hpp"

namespace ear::test {

inline Image random_image(int h, int w, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(h, w, c);
  for (float& v : img.data()) v = u(rng);
  return img;
}

inline GrayImage random_gray(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  GrayImage img(h, w);
  for (float& v : img.data()) v = u(rng);
  return img;
}

inline SaliencyMask random_mask(int h, int w, std::mt19937_64& rng) {
  SaliencyMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = static_cast<std::uint8_t>(rng() & 1u);
  return m;
}

/// Owning copy of the pixel values, safe to iterate over a temporary image.
inline std::vector<float> values(const GrayImage& g) { return {g.data().begin(), g.data().end()}; }
inline std::vector<float> values(const Image& g) { return {g.data().begin(), g.data().end()}; }

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ear_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace ear::test
