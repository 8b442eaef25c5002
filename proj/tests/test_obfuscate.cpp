#include <doctest.h>

#include <random>

#include "ear/error.hpp"
#include "ear/obfuscate.hpp"
#include "support/helpers.hpp"

using namespace ear;

namespace {

// Per-channel mean of pooled cell (cy, cx), in double.
double pooled_mean(const Image& img, int cy, int cx, int c, int m) {
  const int y0 = cy * m, x0 = cx * m;
  double s = 0.0;
  int n = 0;
  for (int yy = y0; yy < std::min(img.height(), y0 + m); ++yy)
    for (int xx = x0; xx < std::min(img.width(), x0 + m); ++xx) {
      s += img.at(yy, xx, c);
      ++n;
    }
  return s / n;
}

// Value of the mosaic at (y, x): the pooled grid has ceil(H/m) x ceil(W/m) cells and the
// nearest-neighbour upscale reads cell (y * ph / H, x * pw / W).
double mosaic_oracle(const Image& img, int y, int x, int c, int m) {
  const int ph = (img.height() + m - 1) / m, pw = (img.width() + m - 1) / m;
  return pooled_mean(img, y * ph / img.height(), x * pw / img.width(), c, m);
}

// For sizes divisible by m the cell is simply the m x m patch holding the pixel.
double patch_mean(const Image& img, int y, int x, int c, int m) { return pooled_mean(img, y / m, x / m, c, m); }

}  // namespace

TEST_CASE("MosaicScale accepts only the power-of-two ladder") {
  for (int m : {2, 4, 8, 16, 32, 64}) CHECK(MosaicScale{m}.value() == m);
  for (int m : {-2, 0, 1, 3, 6, 12, 128}) CHECK_THROWS_AS(MosaicScale{m}, ValueError);
}

TEST_CASE("mosaic examples") {
  std::mt19937_64 rng(1);
  SUBCASE("one patch covers the image") {
    const Image img = test::random_image(5, 7, 3, rng);
    const Image out = mosaic(img, MosaicScale{8});
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x) s += img.at(y, x, c);
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x) CHECK(out.at(y, x, c) == doctest::Approx(s / 35).epsilon(1e-6));
    }
  }
  SUBCASE("checkerboard averages to one half") {
    Image board(4, 4, 1);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) board.at(y, x, 0) = static_cast<float>((x + y) % 2);
    for (float v : test::values(mosaic(board, MosaicScale{2}))) CHECK(v == 0.5f);
  }
  SUBCASE("patch-constant image is unchanged") {
    Image halves(4, 4, 1);
    for (int y = 0; y < 4; ++y)
      for (int x = 2; x < 4; ++x) halves.at(y, x, 0) = 1.0f;
    CHECK(mosaic(halves, MosaicScale{2}) == halves);
  }
  SUBCASE("divisible sizes give the mean of each pixel's own patch") {
    const Image img = test::random_image(16, 24, 3, rng);
    for (int m : {2, 4, 8}) {
      const Image out = mosaic(img, MosaicScale{m});
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 24; ++x)
          for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == doctest::Approx(patch_mean(img, y, x, c, m)).epsilon(1e-6));
    }
  }
  SUBCASE("matches the pool-then-upscale oracle") {
    for (int t = 0; t < 20; ++t) {
      const int h = 3 + static_cast<int>(rng() % 20), w = 3 + static_cast<int>(rng() % 20);
      const Image img = test::random_image(h, w, 3, rng);
      const int m = MosaicScale::kLadder[rng() % 3];
      const Image out = mosaic(img, MosaicScale{m});
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == doctest::Approx(mosaic_oracle(img, y, x, c, m)).epsilon(1e-6));
    }
  }
}

TEST_CASE("mosaic is idempotent when m divides the size") {
  std::mt19937_64 rng(2);
  for (int m : {2, 4, 8}) {
    const Image once = mosaic(test::random_image(16, 16, 3, rng), MosaicScale{m});
    const Image twice = mosaic(once, MosaicScale{m});
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice.data()[i] == doctest::Approx(once.data()[i]).epsilon(1e-6));
  }
}

TEST_CASE("compose_hint identities") {
  std::mt19937_64 rng(3);
  const Image img = test::random_image(12, 10, 3, rng);
  const MosaicScale m{4};
  CHECK(compose_hint(img, m, SaliencyMask(12, 10, 0)) == img);
  CHECK(compose_hint(img, m, SaliencyMask(12, 10, 1)) == mosaic(img, m));

  SaliencyMask one(12, 10, 0);
  one.at(5, 6) = 1;
  const Image out = compose_hint(img, m, one);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 10; ++x)
      for (int c = 0; c < 3; ++c) {
        if (y == 5 && x == 6)
          CHECK(out.at(y, x, c) == doctest::Approx(mosaic_oracle(img, y, x, c, 4)).epsilon(1e-6));
        else
          CHECK(out.at(y, x, c) == img.at(y, x, c));
      }
  CHECK_THROWS_AS(compose_hint(img, m, SaliencyMask(12, 11, 0)), DimensionError);
}

TEST_CASE("partition identity and range preservation") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const int h = 4 + static_cast<int>(rng() % 29), w = 4 + static_cast<int>(rng() % 29);
    const int c = (rng() % 2) ? 3 : 1;
    const Image img = test::random_image(h, w, c, rng);
    const MosaicScale m{MosaicScale::kLadder[rng() % 6]};
    const SaliencyMask s = test::random_mask(h, w, rng);
    const Image a = compose_hint(img, m, s), b = compose_hint(img, m, s.complement()), mos = mosaic(img, m);
    for (std::size_t i = 0; i < img.size(); ++i) {
      CHECK(std::abs(a.data()[i] + b.data()[i] - mos.data()[i] - img.data()[i]) <= 1e-6);
      CHECK((a.data()[i] >= 0.0f && a.data()[i] <= 1.0f));
    }
  }
}

TEST_CASE("compose_blank zeroes masked pixels only") {
  std::mt19937_64 rng(5);
  const Image img = test::random_image(6, 6, 3, rng);
  const SaliencyMask s = test::random_mask(6, 6, rng);
  const Image out = compose_blank(img, s);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == (s.at(y, x) ? 0.0f : img.at(y, x, c)));
  CHECK(compose_blank(img, SaliencyMask(6, 6, 0)) == img);
}
