#include "metalgan/colorlab.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metalgan::colorlab {

namespace {

// D65 reference white in the 0..1 XYZ scale.
constexpr double kXn = 0.95047;
constexpr double kYn = 1.00000;
constexpr double kZn = 1.08883;

constexpr double kEps = 216.0 / 24389.0;   // (6/29)^3
constexpr double kKappa = 24389.0 / 27.0;  // (29/3)^3

double srgb_decompand(double u) {
  return (u <= 0.04045) ? u / 12.92 : std::pow((u + 0.055) / 1.055, 2.4);
}

double srgb_compand(double u) {
  return (u <= 0.0031308) ? 12.92 * u : 1.055 * std::pow(u, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
  return (t > kEps) ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0;
}

double lab_f_inv(double t) {
  const double t3 = t * t * t;
  return (t3 > kEps) ? t3 : (116.0 * t - 16.0) / kKappa;
}

}  // namespace

ImageRGB make_rgb(int height, int width, const std::string& id) {
  if (height < 8 || width < 8)
    throw std::invalid_argument("ImageRGB: minimum resolution is 8x8");
  ImageRGB img;
  img.height = height;
  img.width = width;
  img.pixels.assign(static_cast<std::size_t>(height) * width * 3, 0);
  img.id = id;
  return img;
}

void validate(const ImageRGB& img) {
  if (img.height < 8 || img.width < 8)
    throw std::invalid_argument("ImageRGB: minimum resolution is 8x8");
  if (img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * 3)
    throw std::invalid_argument("ImageRGB: pixel buffer size mismatch");
}

void srgb_to_lab(double r8, double g8, double b8, double& L, double& a, double& b) {
  const double r = srgb_decompand(r8 / 255.0);
  const double g = srgb_decompand(g8 / 255.0);
  const double bl = srgb_decompand(b8 / 255.0);

  const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * bl;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * bl;
  const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * bl;

  const double fx = lab_f(x / kXn);
  const double fy = lab_f(y / kYn);
  const double fz = lab_f(z / kZn);

  L = 116.0 * fy - 16.0;
  a = 500.0 * (fx - fy);
  b = 200.0 * (fy - fz);
}

void lab_to_srgb(double L, double a, double b, double& r8, double& g8, double& b8) {
  const double fy = (L + 16.0) / 116.0;
  const double fx = fy + a / 500.0;
  const double fz = fy - b / 200.0;

  const double x = kXn * lab_f_inv(fx);
  const double y = kYn * ((L > kKappa * kEps) ? fy * fy * fy : L / kKappa);
  const double z = kZn * lab_f_inv(fz);

  const double r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
  const double g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
  const double bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;

  r8 = 255.0 * srgb_compand(std::clamp(r, 0.0, 1.0));
  g8 = 255.0 * srgb_compand(std::clamp(g, 0.0, 1.0));
  b8 = 255.0 * srgb_compand(std::clamp(bl, 0.0, 1.0));
}

ImageLab rgb_to_lab(const ImageRGB& img) {
  validate(img);
  ImageLab out;
  out.height = img.height;
  out.width = img.width;
  out.id = img.id;
  out.L.resize(out.plane_size());
  out.ab.resize(out.plane_size() * 2);
  for (std::size_t i = 0; i < out.plane_size(); ++i) {
    double L, a, b;
    srgb_to_lab(img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2], L, a, b);
    out.L[i] = L;
    out.ab[2 * i] = a;
    out.ab[2 * i + 1] = b;
  }
  return out;
}

ImageRGB lab_to_rgb(const ImageLab& img) {
  if (img.normalized)
    throw std::invalid_argument("lab_to_rgb: input must be unnormalized");
  ImageRGB out = make_rgb(img.height, img.width, img.id);
  for (std::size_t i = 0; i < img.plane_size(); ++i) {
    double r, g, b;
    lab_to_srgb(img.L[i], img.ab[2 * i], img.ab[2 * i + 1], r, g, b);
    out.pixels[3 * i] = static_cast<std::uint8_t>(std::clamp(std::lround(r), 0l, 255l));
    out.pixels[3 * i + 1] = static_cast<std::uint8_t>(std::clamp(std::lround(g), 0l, 255l));
    out.pixels[3 * i + 2] = static_cast<std::uint8_t>(std::clamp(std::lround(b), 0l, 255l));
  }
  return out;
}

ImageLab normalize(const ImageLab& img) {
  if (img.normalized)
    throw std::invalid_argument("normalize: input already normalized");
  ImageLab out = img;
  for (double& v : out.L) v = v / 50.0 - 1.0;
  for (double& v : out.ab) v = (v + 128.0) / 127.5 - 1.0;
  out.normalized = true;
  return out;
}

ImageLab denormalize(const ImageLab& img) {
  if (!img.normalized)
    throw std::invalid_argument("denormalize: input is not normalized");
  ImageLab out = img;
  for (double& v : out.L) v = (v + 1.0) * 50.0;
  for (double& v : out.ab) v = (v + 1.0) * 127.5 - 128.0;
  out.normalized = false;
  return out;
}

ImageLab compose_output(const ImageLab& lightness_src, const ImageLab& chroma_src) {
  if (lightness_src.height != chroma_src.height || lightness_src.width != chroma_src.width)
    throw std::invalid_argument("compose_output: shape mismatch");
  if (!lightness_src.normalized || !chroma_src.normalized)
    throw std::invalid_argument("compose_output: both inputs must be normalized");
  ImageLab out;
  out.height = lightness_src.height;
  out.width = lightness_src.width;
  out.id = lightness_src.id;
  out.L = lightness_src.L;
  out.ab = chroma_src.ab;
  out.normalized = true;
  return out;
}

Tensor l_plane_batch(const std::vector<const ImageLab*>& imgs) {
  if (imgs.empty()) throw std::invalid_argument("l_plane_batch: empty batch");
  const int H = imgs[0]->height, W = imgs[0]->width;
  Tensor t({static_cast<int>(imgs.size()), 1, H, W});
  for (std::size_t b = 0; b < imgs.size(); ++b) {
    const ImageLab& im = *imgs[b];
    if (im.height != H || im.width != W)
      throw std::invalid_argument("l_plane_batch: ragged batch");
    std::copy(im.L.begin(), im.L.end(),
              t.data() + b * static_cast<std::size_t>(H) * W);
  }
  return t;
}

Tensor ab_plane_batch(const std::vector<const ImageLab*>& imgs) {
  if (imgs.empty()) throw std::invalid_argument("ab_plane_batch: empty batch");
  const int H = imgs[0]->height, W = imgs[0]->width;
  Tensor t({static_cast<int>(imgs.size()), 2, H, W});
  for (std::size_t b = 0; b < imgs.size(); ++b) {
    const ImageLab& im = *imgs[b];
    if (im.height != H || im.width != W)
      throw std::invalid_argument("ab_plane_batch: ragged batch");
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * W + x;
        t.at(static_cast<int>(b), 0, y, x) = im.ab[2 * i];
        t.at(static_cast<int>(b), 1, y, x) = im.ab[2 * i + 1];
      }
  }
  return t;
}

}  // namespace metalgan::colorlab
