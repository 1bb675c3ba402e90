#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metalgan/tensor.hpp"

namespace metalgan::colorlab {

// 8-bit RGB image, interleaved H*W*3.
struct ImageRGB {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // r,g,b per pixel
  std::string id;

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// Lab decomposition: L plane plus two chroma planes. Raw ranges are
// L in [0,100], a/b in [-128,127]; normalized maps both into [-1,1].
struct ImageLab {
  int height = 0;
  int width = 0;
  std::vector<double> L;   // H*W
  std::vector<double> ab;  // H*W*2, interleaved a,b
  bool normalized = false;
  std::string id;

  std::size_t plane_size() const {
    return static_cast<std::size_t>(height) * width;
  }
};

ImageRGB make_rgb(int height, int width, const std::string& id = {});
void validate(const ImageRGB& img);

// sRGB (D65) -> CIE Lab, unnormalized output.
ImageLab rgb_to_lab(const ImageRGB& img);

// Inverse conversion; rejects normalized input, clips out-of-gamut to [0,255].
ImageRGB lab_to_rgb(const ImageLab& img);

// Affine [0,100] -> [-1,1] on L and [-128,127] -> [-1,1] on ab.
ImageLab normalize(const ImageLab& img);
ImageLab denormalize(const ImageLab& img);

// Reassemble an ImageLab from an input L plane and generated ab planes.
// Both sides must be normalized and share H x W.
ImageLab compose_output(const ImageLab& lightness_src, const ImageLab& chroma_src);

// Pixel-level double precision conversions (used by tests and oracles too).
void srgb_to_lab(double r8, double g8, double b8, double& L, double& a, double& b);
void lab_to_srgb(double L, double a, double b, double& r8, double& g8, double& b8);

// Batch helpers for the training path: L plane as (B,1,H,W), ab as (B,2,H,W).
Tensor l_plane_batch(const std::vector<const ImageLab*>& imgs);
Tensor ab_plane_batch(const std::vector<const ImageLab*>& imgs);

}  // namespace metalgan::colorlab
