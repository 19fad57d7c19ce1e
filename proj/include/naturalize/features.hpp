// SPDX-License-Identifier: Apache-2.0
//
// Statistical features from histograms of differential images. For each of
// four directions the luma difference image is histogrammed over integer
// bins [-255,255]; the feature vector concatenates the central bins
// [-12..+12] (normalized by sample count) and four moments of the full
// difference distribution, per direction: 4 x (25 + 4) = 116 values.

#pragma once

#include <array>
#include <vector>

#include "naturalize/image_io.hpp"

namespace naturalize {

inline constexpr int kHistHalfWidth = 12;
inline constexpr int kFeatureDim = 4 * (2 * kHistHalfWidth + 1 + 4);  // 116

using FeatureVector = std::array<double, kFeatureDim>;

enum class DiffDirection { Horizontal = 0, Vertical = 1, Diagonal = 2, AntiDiagonal = 3 };

// Luma plane by 0.299R + 0.587G + 0.114B, rounded; grayscale passes through.
std::vector<int> luma_plane(const PixelImage& img);

// Normalized histogram over [-255,255] plus population moments of the
// difference distribution for one direction. Exposed for tests.
struct DiffHistogram {
  std::array<double, 511> bins{};  // index d+255
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double kurtosis = 0.0;
};

DiffHistogram diff_histogram(const std::vector<int>& luma, int height, int width,
                             DiffDirection dir);

FeatureVector extract_features(const PixelImage& img);

}  // namespace naturalize
