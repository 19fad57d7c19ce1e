// SPDX-License-Identifier: Apache-2.0
#include "naturalize/features.hpp"

#include <cmath>

#include "naturalize/errors.hpp"

namespace naturalize {

std::vector<int> luma_plane(const PixelImage& img) {
  std::vector<int> luma(static_cast<std::size_t>(img.height) * img.width);
  if (img.channels == 1) {
    for (std::size_t i = 0; i < luma.size(); ++i) luma[i] = img.data[i];
    return luma;
  }
  if (img.channels != 3)
    throw DimensionError("luma conversion needs 1 or 3 channels, got " +
                         std::to_string(img.channels));
  const std::size_t plane = luma.size();
  for (std::size_t i = 0; i < plane; ++i) {
    const double y = 0.299 * img.data[i] + 0.587 * img.data[plane + i] + 0.114 * img.data[2 * plane + i];
    luma[i] = static_cast<int>(std::floor(y + 0.5));
  }
  return luma;
}

DiffHistogram diff_histogram(const std::vector<int>& luma, int height, int width,
                             DiffDirection dir) {
  int dy = 0, dx = 0;
  switch (dir) {
    case DiffDirection::Horizontal: dy = 0; dx = 1; break;
    case DiffDirection::Vertical: dy = 1; dx = 0; break;
    case DiffDirection::Diagonal: dy = 1; dx = 1; break;
    case DiffDirection::AntiDiagonal: dy = 1; dx = -1; break;
  }
  const int y_end = height - dy;
  const int x_begin = dx < 0 ? -dx : 0;
  const int x_end = dx > 0 ? width - dx : width;
  if (y_end <= 0 || x_end <= x_begin)
    throw DimensionError("image too small for differential features (need at least 2x2)");

  DiffHistogram h;
  std::array<std::int64_t, 511> counts{};
  const std::int64_t total = static_cast<std::int64_t>(y_end) * (x_end - x_begin);
  double m1 = 0.0;
  for (int y = 0; y < y_end; ++y) {
    const int* row = luma.data() + static_cast<std::size_t>(y) * width;
    const int* next = luma.data() + static_cast<std::size_t>(y + dy) * width;
    for (int x = x_begin; x < x_end; ++x) {
      const int d = next[x + dx] - row[x];
      ++counts[d + 255];
      m1 += d;
    }
  }
  m1 /= static_cast<double>(total);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (int b = 0; b < 511; ++b) {
    if (!counts[b]) continue;
    const double d = (b - 255) - m1;
    const double c = static_cast<double>(counts[b]);
    m2 += c * d * d;
    m3 += c * d * d * d;
    m4 += c * d * d * d * d;
  }
  m2 /= static_cast<double>(total);
  m3 /= static_cast<double>(total);
  m4 /= static_cast<double>(total);
  for (int b = 0; b < 511; ++b)
    h.bins[b] = static_cast<double>(counts[b]) / static_cast<double>(total);
  h.mean = m1;
  h.variance = m2;
  const double sigma = std::sqrt(m2);
  h.skewness = sigma > 0.0 ? m3 / (sigma * sigma * sigma) : 0.0;
  h.kurtosis = m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
  return h;
}

FeatureVector extract_features(const PixelImage& img) {
  if (img.height < 2 || img.width < 2)
    throw DimensionError("image too small for differential features (need at least 2x2)");
  const auto luma = luma_plane(img);
  FeatureVector f{};
  int k = 0;
  for (auto dir : {DiffDirection::Horizontal, DiffDirection::Vertical, DiffDirection::Diagonal,
                   DiffDirection::AntiDiagonal}) {
    const auto h = diff_histogram(luma, img.height, img.width, dir);
    for (int b = -kHistHalfWidth; b <= kHistHalfWidth; ++b) f[k++] = h.bins[b + 255];
    f[k++] = h.mean;
    f[k++] = h.variance;
    f[k++] = h.skewness;
    f[k++] = h.kurtosis;
  }
  return f;
}

}  // namespace naturalize
