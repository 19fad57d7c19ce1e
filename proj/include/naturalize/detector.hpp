// SPDX-License-Identifier: Apache-2.0
//
// Black-box spoofing detector over differential-histogram features. Two
// classifier variants share the feature recipe: a small MLP (training
// discriminator) and FLDA with logistic score calibration (evaluation
// detector). Both expose score-only interfaces; no gradient channel exists.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "naturalize/features.hpp"
#include "naturalize/image_io.hpp"

namespace naturalize {

// The only surface training code may depend on: an image in, a naturalness
// probability out. Nothing here exposes gradients.
class BlackBoxScorer {
 public:
  virtual ~BlackBoxScorer() = default;
  virtual double score(const PixelImage& img) const = 0;
};

enum class DetectorVariant : std::uint8_t { Mlp = 0, Flda = 1 };

DetectorVariant detector_variant_from_string(const std::string& s);
std::string to_string(DetectorVariant v);

class DetectorModel : public BlackBoxScorer {
 public:
  DetectorModel() = default;

  // MLP: 116->32->1, ELU hidden, sigmoid output, BCE + Adam, early stopping
  // on a validation split (patience 10, max 200 epochs).
  // FLDA: closed-form scatter solution, unit-norm projection, threshold at
  // the projected class-mean midpoint, logistic calibration for scores.
  static DetectorModel train(DetectorVariant variant,
                             const std::vector<const PixelImage*>& natural,
                             const std::vector<const PixelImage*>& cg, std::uint64_t seed);

  // Same training on already-extracted feature vectors.
  static DetectorModel train_features(DetectorVariant variant,
                                      const std::vector<FeatureVector>& natural,
                                      const std::vector<FeatureVector>& cg, std::uint64_t seed);

  // P(natural) in [0,1]; label convention natural=1, cg=0.
  double score(const PixelImage& img) const override;
  double score_features(const FeatureVector& f) const;

  // natural iff score >= threshold (ties go to natural)
  bool classify_natural(const PixelImage& img) const;

  void save(const std::string& path) const;
  static DetectorModel load(const std::string& path);

  DetectorVariant variant() const { return variant_; }
  bool trained() const { return trained_; }
  double threshold() const { return threshold_; }
  void set_threshold(double t) { threshold_ = t; }
  const std::vector<float>& flda_projection() const { return w_flda_; }

 private:
  DetectorVariant variant_ = DetectorVariant::Mlp;
  bool trained_ = false;
  double threshold_ = 0.5;

  // feature standardization (identity for FLDA)
  std::vector<float> feat_mean_, feat_std_;

  // MLP weights
  std::vector<float> w1_, b1_, w2_;  // w1: [32 x 116], b1: [32], w2: [32]
  float b2_ = 0.0f;

  // FLDA projection + calibration sigma(a*(w.x - t) + b)
  std::vector<float> w_flda_;
  double flda_t_ = 0.0;
  double calib_a_ = 1.0;
  double calib_b_ = 0.0;

  void train_mlp(const std::vector<FeatureVector>& x, const std::vector<int>& y, std::uint64_t seed);
  void train_flda(const std::vector<FeatureVector>& x, const std::vector<int>& y);
};

}  // namespace naturalize
