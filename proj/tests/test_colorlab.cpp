#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "metalgan/colorlab.hpp"

using namespace metalgan;
using namespace metalgan::colorlab;

TEST_CASE("white and black anchors") {
  double L, a, b;
  srgb_to_lab(255, 255, 255, L, a, b);
  CHECK(L == doctest::Approx(100.0).epsilon(1e-6));
  CHECK(std::fabs(a) < 0.01);
  CHECK(std::fabs(b) < 0.01);

  srgb_to_lab(0, 0, 0, L, a, b);
  CHECK(std::fabs(L) < 1e-12);
  CHECK(std::fabs(a) < 1e-12);
  CHECK(std::fabs(b) < 1e-12);
}

// Expected values frozen from an independent reference implementation
// (scikit-image rgb2lab, D65). Small matrix-precision differences between
// published sRGB matrices keep this at the 0.02 level.
TEST_CASE("frozen reference fixtures") {
  struct Fixture {
    int r, g, b;
    double L, a, bb;
  };
  const Fixture fx[] = {
      {128, 128, 128, 53.585013, -0.001473, 0.002791},
      {255, 0, 0, 53.240588, 80.092308, 67.202751},
      {0, 128, 255, 54.714539, 18.773464, -70.913764},
      {37, 201, 92, 71.512036, -63.034297, 42.836552},
  };
  for (const auto& f : fx) {
    double L, a, b;
    srgb_to_lab(f.r, f.g, f.b, L, a, b);
    CHECK(std::fabs(L - f.L) < 0.02);
    CHECK(std::fabs(a - f.a) < 0.02);
    CHECK(std::fabs(b - f.bb) < 0.02);
  }
}

TEST_CASE("mid gray is achromatic") {
  double L, a, b;
  srgb_to_lab(128, 128, 128, L, a, b);
  // a and b vanish exactly up to matrix row-sum rounding
  CHECK(std::fabs(a) < 0.01);
  CHECK(std::fabs(b) < 0.01);
}

TEST_CASE("16^3 lattice round trip within one 8-bit step per channel") {
  for (int r = 0; r < 256; r += 17)
    for (int g = 0; g < 256; g += 17)
      for (int b = 0; b < 256; b += 17) {
        double L, a, bb, r2, g2, b2;
        srgb_to_lab(r, g, b, L, a, bb);
        lab_to_srgb(L, a, bb, r2, g2, b2);
        CHECK(std::fabs(r2 - r) <= 1.0);
        CHECK(std::fabs(g2 - g) <= 1.0);
        CHECK(std::fabs(b2 - b) <= 1.0);
      }
}

static ImageRGB random_rgb(int h, int w, unsigned seed) {
  ImageRGB img = make_rgb(h, w, "rand");
  unsigned s = seed;
  for (auto& px : img.pixels) {
    s = s * 1664525u + 1013904223u;
    px = static_cast<std::uint8_t>(s >> 24);
  }
  return img;
}

TEST_CASE("image-level conversion matches the pixel-level path") {
  ImageRGB img = random_rgb(8, 8, 5);
  ImageLab lab = rgb_to_lab(img);
  REQUIRE(lab.height == 8);
  REQUIRE(lab.width == 8);
  CHECK_FALSE(lab.normalized);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double L, a, b;
      srgb_to_lab(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), L, a, b);
      const std::size_t i = static_cast<std::size_t>(y) * 8 + x;
      CHECK(lab.L[i] == doctest::Approx(L).epsilon(1e-12));
      CHECK(lab.ab[2 * i] == doctest::Approx(a).epsilon(1e-12));
      CHECK(lab.ab[2 * i + 1] == doctest::Approx(b).epsilon(1e-12));
    }
}

TEST_CASE("image round trip is exact at 8 bits") {
  ImageRGB img = random_rgb(16, 12, 9);
  ImageRGB back = lab_to_rgb(rgb_to_lab(img));
  REQUIRE(back.height == img.height);
  REQUIRE(back.width == img.width);
  int max_err = 0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    max_err = std::max(max_err, std::abs(int(img.pixels[i]) - int(back.pixels[i])));
  CHECK(max_err <= 1);
}

TEST_CASE("normalize endpoints and inverse") {
  ImageLab lab;
  lab.height = 1;
  lab.width = 2;
  lab.L = {0.0, 100.0};
  lab.ab = {-128.0, 127.0, 50.0, -0.5};

  ImageLab n = normalize(lab);
  CHECK(n.normalized);
  CHECK(n.L[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(n.L[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(n.ab[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(n.ab[1] == doctest::Approx(1.0).epsilon(1e-15));

  ImageLab back = denormalize(n);
  CHECK_FALSE(back.normalized);
  for (std::size_t i = 0; i < lab.L.size(); ++i)
    CHECK(std::fabs(back.L[i] - lab.L[i]) < 1e-12);
  for (std::size_t i = 0; i < lab.ab.size(); ++i)
    CHECK(std::fabs(back.ab[i] - lab.ab[i]) < 1e-12);

  // L = 50, a = b = -0.5 sits at the normalized origin for L only
  ImageLab mid;
  mid.height = mid.width = 1;
  mid.L = {50.0};
  mid.ab = {-0.5, -0.5};
  ImageLab nm = normalize(mid);
  CHECK(std::fabs(nm.L[0]) < 1e-15);
  CHECK(std::fabs(nm.ab[0]) < 1e-15);
  CHECK(std::fabs(nm.ab[1]) < 1e-15);
}

TEST_CASE("state guards") {
  ImageLab lab;
  lab.height = lab.width = 1;
  lab.L = {50.0};
  lab.ab = {0.0, 0.0};
  ImageLab n = normalize(lab);
  CHECK_THROWS(normalize(n));          // double normalize
  CHECK_THROWS(denormalize(lab));      // not normalized
  CHECK_THROWS(lab_to_rgb(n));         // normalized input rejected
}

TEST_CASE("compose_output keeps L bit-identical and takes chroma from the output") {
  ImageRGB img = random_rgb(8, 8, 21);
  ImageLab n = normalize(rgb_to_lab(img));

  ImageLab chroma = n;
  for (auto& v : chroma.ab) v = -v * 0.5;

  ImageLab out = compose_output(n, chroma);
  CHECK(out.normalized);
  for (std::size_t i = 0; i < n.L.size(); ++i) CHECK(out.L[i] == n.L[i]);
  for (std::size_t i = 0; i < n.ab.size(); ++i) CHECK(out.ab[i] == chroma.ab[i]);

  // identity recomposition round-trips to the original pixels
  ImageRGB back = lab_to_rgb(denormalize(compose_output(n, n)));
  int max_err = 0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    max_err = std::max(max_err, std::abs(int(img.pixels[i]) - int(back.pixels[i])));
  CHECK(max_err <= 1);
}

TEST_CASE("compose_output guards") {
  ImageRGB img = random_rgb(8, 8, 3);
  ImageLab raw = rgb_to_lab(img);
  ImageLab n = normalize(raw);
  CHECK_THROWS(compose_output(raw, n));  // unnormalized lightness side
  CHECK_THROWS(compose_output(n, raw));  // unnormalized chroma side

  ImageRGB small = random_rgb(8, 16, 3);
  ImageLab n2 = normalize(rgb_to_lab(small));
  CHECK_THROWS(compose_output(n, n2));   // shape mismatch
}

TEST_CASE("batch helpers lay planes out as (B,C,H,W)") {
  ImageRGB a = random_rgb(8, 8, 1), b = random_rgb(8, 8, 2);
  ImageLab na = normalize(rgb_to_lab(a)), nb = normalize(rgb_to_lab(b));
  Tensor l = l_plane_batch({&na, &nb});
  Tensor ab = ab_plane_batch({&na, &nb});
  REQUIRE(l.shape() == std::vector<int>{2, 1, 8, 8});
  REQUIRE(ab.shape() == std::vector<int>{2, 2, 8, 8});
  CHECK(l.at(0, 0, 3, 5) == na.L[3 * 8 + 5]);
  CHECK(l.at(1, 0, 7, 0) == nb.L[7 * 8]);
  CHECK(ab.at(0, 0, 2, 2) == na.ab[2 * (2 * 8 + 2)]);
  CHECK(ab.at(1, 1, 2, 2) == nb.ab[2 * (2 * 8 + 2) + 1]);
}

TEST_CASE("rgb validation") {
  CHECK_THROWS(make_rgb(4, 8));   // below minimum size
  CHECK_THROWS(make_rgb(8, 0));
  ImageRGB img = make_rgb(8, 8);
  img.pixels.pop_back();
  CHECK_THROWS(validate(img));
}
