// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "naturalize/tensor.hpp"

namespace naturalize {

// 8-bit image, planar channel-major layout ([C][H][W]), C is 1 or 3.
struct PixelImage {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  PixelImage() = default;
  PixelImage(int c, int h, int w) : channels(c), height(h), width(w) {
    data.assign(static_cast<std::size_t>(c) * h * w, 0);
  }
  std::uint8_t& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::uint8_t at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

// Decoders pick the format from the file contents (PNG signature or P5/P6
// header). Grayscale sources are replicated to three channels.
PixelImage read_image(const std::string& path);
void write_png(const PixelImage& img, const std::string& path);
void write_ppm(const PixelImage& img, const std::string& path);

PixelImage read_png(const std::string& path);
PixelImage read_pnm(const std::string& path);  // binary PPM (P6) / PGM (P5)

PixelImage resize_bilinear(const PixelImage& img, int out_h, int out_w);

// Pixel domain [0,255] maps to [-1,1] via x/127.5 - 1.
inline float normalize_pixel(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

// Inverse mapping with the transformation clamp: raw values are restricted
// to [-1.8, 1.8], then y = clip(round((x+1)*127.5), 0, 255), round half up.
std::uint8_t denormalize_clamped(float raw);

// Stacks images into a [N,3,S,S] tensor of normalized values.
TensorPtrF batch_from_images(const std::vector<const PixelImage*>& images);
// Extracts sample n of a [N,3,S,S] (or a [3,S,S]) tensor through the clamp
// and denormalization above.
PixelImage image_from_tensor(const Tensor<float>& t, int n = 0);

// FNV-1a 64-bit, used for manifests and determinism checks.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t hash_file(const std::string& path);

}  // namespace naturalize
