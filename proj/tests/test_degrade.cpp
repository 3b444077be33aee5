#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "rlq/degrade.hpp"
#include "rlq/image.hpp"
#include "rlq/rng.hpp"

using namespace rlq;

namespace {

Image constant_image(int h, int w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  return img;
}

// Reference bilinear resampler, written independently of the production code:
// gathers the four neighbors through explicit weight products per channel.
Image reference_resize(const Image& src, int oh, int ow) {
  Image dst(oh, ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double srcy = (y + 0.5) * src.height / static_cast<double>(oh) - 0.5;
      double srcx = (x + 0.5) * src.width / static_cast<double>(ow) - 0.5;
      if (srcy < 0) srcy = 0;
      if (srcx < 0) srcx = 0;
      if (srcy > src.height - 1) srcy = src.height - 1;
      if (srcx > src.width - 1) srcx = src.width - 1;
      const int iy = static_cast<int>(srcy), ix = static_cast<int>(srcx);
      const int iy2 = iy + 1 < src.height ? iy + 1 : iy;
      const int ix2 = ix + 1 < src.width ? ix + 1 : ix;
      const double ay = srcy - iy, ax = srcx - ix;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - ay) * (1 - ax) * src.at(iy, ix, c) +
                         (1 - ay) * ax * src.at(iy, ix2, c) +
                         ay * (1 - ax) * src.at(iy2, ix, c) +
                         ay * ax * src.at(iy2, ix2, c);
        dst.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return dst;
}

}  // namespace

TEST_CASE("pixelate identity at native resolution") {
  Rng rng(5);
  Image img(64, 64);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  CHECK(pixelate(img, 64) == img);
}

TEST_CASE("pixelate keeps constant images constant") {
  const Image img = constant_image(64, 32, 12, 200, 77);
  for (int target : {16, 23, 40, 64}) {
    CHECK(pixelate(img, target) == img);
  }
}

TEST_CASE("pixelate matches the reference bilinear down/up chain") {
  Image board(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const std::uint8_t v = ((y / 2 + x / 2) % 2) ? 255 : 0;
      for (int c = 0; c < 3; ++c) board.at(y, x, c) = v;
    }
  const Image got = pixelate(board, 16);
  const Image want = reference_resize(reference_resize(board, 16, 16), 64, 64);
  CHECK(got == want);
}

TEST_CASE("pixelate rejects out-of-range targets") {
  const Image img = constant_image(64, 32, 0, 0, 0);
  CHECK_THROWS_AS(pixelate(img, 15), std::invalid_argument);
  CHECK_THROWS_AS(pixelate(img, 65), std::invalid_argument);
}

TEST_CASE("oof_blur preserves constants and shape") {
  const Image img = constant_image(64, 32, 99, 14, 250);
  CHECK(oof_blur(img, 5, 1.0) == img);
  const Image big = oof_blur(img, 21, 3.5);
  CHECK(big.height == 64);
  CHECK(big.width == 32);
}

TEST_CASE("oof_blur stamp equals closed-form Gaussian outer product") {
  // normalized 1-D Gaussian for kernel 5, sigma 1.0
  const double g[5] = {0.05448868, 0.24420134, 0.40261996, 0.24420134, 0.05448868};
  Image img(17, 17);
  for (int c = 0; c < 3; ++c) img.at(8, 8, c) = 255;
  const Image out = oof_blur(img, 5, 1.0);
  for (int y = 0; y < 17; ++y) {
    for (int x = 0; x < 17; ++x) {
      std::uint8_t want = 0;
      if (std::abs(y - 8) <= 2 && std::abs(x - 8) <= 2) {
        want = static_cast<std::uint8_t>(std::lround(255.0 * g[y - 6] * g[x - 6]));
      }
      for (int c = 0; c < 3; ++c) {
        CAPTURE(y);
        CAPTURE(x);
        CHECK(out.at(y, x, c) == want);
      }
    }
  }
}

TEST_CASE("oof_blur rejects even kernels") {
  const Image img = constant_image(32, 16, 0, 0, 0);
  CHECK_THROWS_AS(oof_blur(img, 6, 1.0), std::invalid_argument);
}

TEST_CASE("motion_blur delta kernel is the identity") {
  Rng rng(9);
  Image img(32, 16);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  for (double angle : {0.0, 37.0, 90.0, 180.0}) {
    CHECK(motion_blur(img, 1, angle) == img);
  }
}

TEST_CASE("motion_blur horizontal kernel leaves rows intact, spreads columns") {
  Image img(64, 64);
  for (int x = 0; x < 64; ++x)
    for (int c = 0; c < 3; ++c) img.at(20, x, c) = 255;
  const Image horiz = motion_blur(img, 9, 0.0);
  CHECK(horiz == img);

  Image vline(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int c = 0; c < 3; ++c) vline.at(y, 31, c) = 255;
  const Image spread = motion_blur(vline, 9, 0.0);
  const auto expected = static_cast<std::uint8_t>(std::lround(255.0 / 9.0));
  for (int x = 0; x < 64; ++x) {
    const std::uint8_t want = std::abs(x - 31) <= 4 ? expected : 0;
    CHECK(spread.at(30, x, 0) == want);
  }
}

TEST_CASE("motion_blur angle 90 equals angle 0 on the transposed image") {
  Rng rng(21);
  Image img(64, 32);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));

  Image transposed(32, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) transposed.at(x, y, c) = img.at(y, x, c);

  const Image a = motion_blur(img, 9, 90.0);
  const Image bT = motion_blur(transposed, 9, 0.0);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(static_cast<int>(a.at(y, x, c)) -
                       static_cast<int>(bT.at(x, y, c))) <= 1);
      }
}

TEST_CASE("motion_blur rejects out-of-range length") {
  const Image img = constant_image(32, 16, 0, 0, 0);
  CHECK_THROWS_AS(motion_blur(img, 7, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(motion_blur(img, 21, 0.0), std::invalid_argument);
}

TEST_CASE("apply_policy probability gates") {
  const Image img = constant_image(64, 32, 5, 6, 7);
  ArtifactPolicy p;
  p.apply_probability = 0.0;
  Rng rng(1);
  auto [same, d0] = apply_policy(img, p, rng);
  CHECK(same == img);
  CHECK(d0.kind == Artifact::kNone);

  p.apply_probability = 1.0;
  p.enabled = {Artifact::kPixelation};
  for (int i = 0; i < 20; ++i) {
    auto [_, d] = apply_policy(img, p, rng);
    CHECK(d.kind == Artifact::kPixelation);
    CHECK(d.pixel_target >= 16);
    CHECK(d.pixel_target <= 64);
  }
}

TEST_CASE("apply_policy applied fraction concentrates around one half") {
  const Image img = constant_image(16, 8, 1, 2, 3);
  ArtifactPolicy p;
  p.apply_probability = 0.5;
  p.enabled = {Artifact::kPixelation};  // constant image: cheap no-op content
  Rng rng(12345);
  int applied = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto [_, d] = apply_policy(img, p, rng);
    if (d.kind != Artifact::kNone) ++applied;
  }
  const double frac = static_cast<double>(applied) / draws;
  CHECK(frac >= 0.47);
  CHECK(frac <= 0.53);
}

TEST_CASE("degradations are deterministic given the seed") {
  Rng imgrng(77);
  Image img(64, 32);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(imgrng.uniform_int(0, 255));
  ArtifactPolicy p;
  p.apply_probability = 1.0;

  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) {
    auto [ia, da] = apply_policy(img, p, a);
    auto [ib, db] = apply_policy(img, p, b);
    CHECK(ia == ib);
    CHECK(da == db);
  }
}

TEST_CASE("artifact descriptor JSON round trip") {
  ArtifactDescriptor d;
  d.kind = Artifact::kMotionBlur;
  d.length = 12;
  d.angle_deg = 33.25;
  CHECK(ArtifactDescriptor::from_json(d.to_json()) == d);

  ArtifactPolicy p;
  p.enabled = {Artifact::kOofBlur, Artifact::kMotionBlur};
  p.apply_probability = 0.25;
  p.rng_seed = 99;
  const ArtifactPolicy q = ArtifactPolicy::from_json(p.to_json());
  CHECK(q.enabled == p.enabled);
  CHECK(q.apply_probability == p.apply_probability);
  CHECK(q.rng_seed == p.rng_seed);

  CHECK_THROWS_AS(ArtifactPolicy::from_json("{\"bogus_key\": 1}"),
                  std::invalid_argument);
}

TEST_CASE("png write/read round trip") {
  Rng rng(3);
  Image img(40, 24);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  const auto path = std::filesystem::temp_directory_path() / "rlq_png_test.png";
  write_png(path.string(), img);
  CHECK(read_png(path.string()) == img);
  std::filesystem::remove(path);
}
