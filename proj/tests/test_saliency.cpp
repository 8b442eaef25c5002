#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "ear/error.hpp"
#include "ear/saliency.hpp"
#include "support/helpers.hpp"

using namespace ear;

namespace {

// Hand-rolled EARATTN1 encoder used as the reference for the reader.
std::vector<unsigned char> earattn_bytes(std::uint32_t h, std::uint32_t w, const std::vector<float>& v) {
  std::vector<unsigned char> out = {'E', 'A', 'R', 'A', 'T', 'T', 'N', '1'};
  auto put32 = [&](std::uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(x >> (8 * i)));
  };
  put32(h);
  put32(w);
  for (float f : v) put32(std::bit_cast<std::uint32_t>(f));
  return out;
}

double threshold_oracle(const std::vector<float>& v) {
  long double s = 0, ss = 0;
  for (float x : v) s += x;
  const long double mu = s / v.size();
  for (float x : v) ss += (x - mu) * (x - mu);
  return static_cast<double>(mu + 0.674L * std::sqrt(ss / v.size()));
}

AttentionMap random_map(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  AttentionMap m{h, w, std::vector<float>(static_cast<std::size_t>(h) * w)};
  for (float& v : m.scores) v = u(rng);
  return m;
}

}  // namespace

TEST_CASE("EARATTN1 parse of a hand-built file") {
  const auto bytes = earattn_bytes(2, 2, {0, 0, 0, 1});
  const AttentionMap m = parse_attention(bytes);
  CHECK(m.height == 2);
  CHECK(m.width == 2);
  CHECK(m.scores == std::vector<float>{0, 0, 0, 1});
  CHECK(encode_attention(m) == bytes);
}

TEST_CASE("EARATTN1 file round trip is bit exact") {
  test::TempDir dir("attn");
  std::mt19937_64 rng(1);
  const AttentionMap m = random_map(3, 5, rng);
  write_attention(m, dir.path() / "a.earattn");
  const AttentionMap back = read_attention(dir.path() / "a.earattn");
  CHECK(back.height == 3);
  CHECK(back.width == 5);
  CHECK(back.scores == m.scores);
  CHECK_THROWS_AS(read_attention(dir.path() / "missing.earattn"), IoError);
}

TEST_CASE("EARATTN1 rejects malformed input") {
  auto bytes = earattn_bytes(2, 2, {0, 0, 0, 1});
  SUBCASE("bad magic") {
    bytes[7] = '2';
    CHECK_THROWS_AS(parse_attention(bytes), FormatError);
  }
  SUBCASE("truncated payload") {
    bytes.pop_back();
    CHECK_THROWS_AS(parse_attention(bytes), FormatError);
  }
  SUBCASE("trailing bytes") {
    bytes.push_back(0);
    CHECK_THROWS_AS(parse_attention(bytes), FormatError);
  }
  SUBCASE("short header") {
    bytes.resize(10);
    CHECK_THROWS_AS(parse_attention(bytes), FormatError);
  }
  SUBCASE("NaN score") {
    CHECK_THROWS_AS(parse_attention(earattn_bytes(1, 2, {0.5f, std::nanf("")})), ValueError);
  }
  SUBCASE("negative score") {
    CHECK_THROWS_AS(parse_attention(earattn_bytes(1, 2, {0.5f, -0.1f})), ValueError);
  }
}

TEST_CASE("q3 threshold of the 2x2 example") {
  const AttentionMap m{2, 2, {0, 0, 0, 1}};
  CHECK(q3_threshold(m) == doctest::Approx(0.541851).epsilon(1e-6));
  CHECK(q3_threshold(m) == doctest::Approx(threshold_oracle(m.scores)).epsilon(1e-12));
  const SaliencyMask grid = binarize_q3(m, 2, 2);
  CHECK(grid.at(0, 0) == 0);
  CHECK(grid.at(0, 1) == 0);
  CHECK(grid.at(1, 0) == 0);
  CHECK(grid.at(1, 1) == 1);
  const SaliencyMask up = binarize_q3(m, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(up.at(y, x) == ((y >= 2 && x >= 2) ? 1 : 0));
}

TEST_CASE("constant maps select nothing") {
  for (float c : {0.0f, 0.3f, 1.0f, 123.456f}) {
    const SaliencyMask s = binarize_q3(AttentionMap{3, 4, std::vector<float>(12, c)}, 24, 32);
    CHECK(s.count() == 0u);
  }
}

TEST_CASE("binarize_q3 matches the threshold oracle on random maps") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const int h = 1 + static_cast<int>(rng() % 9), w = 1 + static_cast<int>(rng() % 9);
    const AttentionMap m = random_map(h, w, rng);
    const double th = threshold_oracle(m.scores);
    const SaliencyMask s = binarize_q3(m, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) CHECK(s.at(y, x) == (m.at(y, x) > th ? 1 : 0));
  }
}

TEST_CASE("binarize_q3 is bit stable and affine invariant") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> scale(0.1f, 10.0f), shift(0.0f, 5.0f);
  for (int t = 0; t < 100; ++t) {
    const AttentionMap m = random_map(8, 8, rng);
    const SaliencyMask s = binarize_q3(m, 64, 64);
    CHECK(binarize_q3(m, 64, 64) == s);
    AttentionMap a = m;
    const float k = scale(rng), b = shift(rng);
    for (float& v : a.scores) v = k * v + b;
    CHECK(binarize_q3(a, 64, 64) == s);
  }
}

TEST_CASE("selected fraction obeys the one-sided Chebyshev bound") {
  const double bound = 1.0 / (1.0 + 0.674 * 0.674);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> levels(0, 3);
  for (int t = 0; t < 500; ++t) {
    const int h = 1 + static_cast<int>(rng() % 6), w = 1 + static_cast<int>(rng() % 6);
    AttentionMap m{h, w, std::vector<float>(static_cast<std::size_t>(h) * w)};
    for (float& v : m.scores) v = static_cast<float>(levels(rng));
    const double frac = static_cast<double>(binarize_q3(m, h, w).count()) / (h * w);
    CHECK(frac <= bound);
  }
  // Two of three cells clear the threshold here, so one half is not an upper bound.
  const SaliencyMask s = binarize_q3(AttentionMap{1, 3, {0, 1, 1}}, 1, 3);
  CHECK(s.count() == 2u);
}

TEST_CASE("complement law") {
  std::mt19937_64 rng(5);
  const SaliencyMask s = test::random_mask(7, 9, rng);
  const SaliencyMask c = s.complement();
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 9; ++x) CHECK(s.at(y, x) + c.at(y, x) == 1);
  CHECK(s.count() + c.count() == 63u);
}

TEST_CASE("fallback saliency") {
  SUBCASE("constant image gives zeros") {
    const AttentionMap m = fallback_saliency(Image(32, 32, 3, 0.6f));
    CHECK(m.height == 4);
    CHECK(m.width == 4);
    for (float v : m.scores) CHECK(v == 0.0f);
  }
  SUBCASE("vertical step peaks on the edge band") {
    Image step(32, 32, 1);
    for (int y = 0; y < 32; ++y)
      for (int x = 16; x < 32; ++x) step.at(y, x, 0) = 1.0f;
    const AttentionMap m = fallback_saliency(step);
    REQUIRE(m.width == 4);
    // The edge sits between columns 15 and 16, i.e. on the border of cells 1 and 2.
    for (int y = 0; y < m.height; ++y) {
      CHECK(m.at(y, 1) == doctest::Approx(1.0f));
      CHECK(m.at(y, 2) == doctest::Approx(1.0f));
      CHECK(m.at(y, 0) < 0.5f);
      CHECK(m.at(y, 3) < 0.5f);
    }
    const SaliencyMask s = binarize_q3(m, 32, 32);
    for (int y = 0; y < 32; ++y) {
      CHECK(s.at(y, 15) == 1);
      CHECK(s.at(y, 16) == 1);
      CHECK(s.at(y, 0) == 0);
    }
  }
  SUBCASE("range is exactly [0,1] for non-constant input") {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 10; ++t) {
      const AttentionMap m = fallback_saliency(test::random_image(40, 48, 3, rng));
      CHECK(m.height == 5);
      CHECK(m.width == 6);
      CHECK(*std::min_element(m.scores.begin(), m.scores.end()) == 0.0f);
      CHECK(*std::max_element(m.scores.begin(), m.scores.end()) == 1.0f);
    }
  }
}

TEST_CASE("binarize_q3 argument errors") {
  CHECK_THROWS(binarize_q3(AttentionMap{0, 0, {}}, 4, 4));
  CHECK_THROWS(binarize_q3(AttentionMap{1, 1, {1.0f}}, 0, 4));
}

TEST_CASE("read_attention keeps the error category") {
  test::TempDir dir("attn_err");
  const auto write = [&](const std::string& name, const std::vector<unsigned char>& bytes) {
    std::ofstream(dir.path() / name, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                             static_cast<std::streamsize>(bytes.size()));
    return dir.path() / name;
  };
  CHECK_THROWS_AS(read_attention(write("nan.earattn", earattn_bytes(1, 1, {std::nanf("")}))), ValueError);
  auto bad = earattn_bytes(1, 1, {0.5f});
  bad[0] = 'X';
  CHECK_THROWS_AS(read_attention(write("magic.earattn", bad)), FormatError);
}
