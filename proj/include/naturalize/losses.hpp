// SPDX-License-Identifier: Apache-2.0
//
// Perceptual (feature-map MSE) loss over a fixed convolutional feature
// extractor, BCE adversarial loss on black-box detector scores, their
// weighted combination, and the scaled-gradient approximation that lets a
// non-differentiable detector steer training.

#pragma once

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "naturalize/hnet.hpp"
#include "naturalize/rng.hpp"
#include "naturalize/tensor.hpp"

namespace naturalize {

struct LossWeights {
  double alpha = 5e-3;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0) && alpha != 0.0)
      throw ContractError("loss weight alpha must lie in (0,1), got " + std::to_string(alpha));
  }
};

// Fixed (never-trained) feature extractor: four conv3x3-ELU stages with a
// 2x2 average pool after each, channels 3 -> 16 -> 32 -> 64 -> 64, so every
// stage halves the resolution. Weights come from a seeded init or an
// imported weight file and are excluded from every optimizer.
template <class T>
struct PerceptualNet {
  std::vector<Conv2dLayer<T>> convs;

  PerceptualNet() {
    const int plan[5] = {3, 16, 32, 64, 64};
    for (int i = 0; i < 4; ++i) {
      convs.emplace_back(plan[i], plan[i + 1], 3, 1, 1);
      convs.back().w->requires_grad = false;
      convs.back().b->requires_grad = false;
    }
  }

  static PerceptualNet seeded(std::uint64_t seed) {
    PerceptualNet net;
    RandomStream rng(derive_seed(seed, "perceptual-init"));
    for (auto& c : net.convs) {
      c.init(rng);
      c.w->requires_grad = false;
      c.b->requires_grad = false;
    }
    return net;
  }

  TensorPtr<T> features(Tape<T>* tape, const TensorPtr<T>& image) const {
    auto h = image;
    for (const auto& c : convs) h = avg_pool2<T>(tape, elu<T>(tape, c.forward(tape, h)));
    return h;
  }

  std::vector<TensorPtr<T>> weight_tensors() const {
    std::vector<TensorPtr<T>> out;
    for (const auto& c : convs) {
      out.push_back(c.w);
      out.push_back(c.b);
    }
    return out;
  }
};

using PerceptualNetF = PerceptualNet<float>;

// L_VGG-style loss: MSE between final-stage feature maps of the two images.
template <class T>
TensorPtr<T> perceptual_loss(Tape<T>* tape, const PerceptualNet<T>& net,
                             const TensorPtr<T>& i1, const TensorPtr<T>& i2) {
  if (i1->shape != i2->shape)
    throw DimensionError("perceptual_loss image shape mismatch: " + i1->shape_str() + " vs " +
                         i2->shape_str());
  return mse_loss<T>(tape, net.features(tape, i1), net.features(tape, i2));
}

inline constexpr double kScoreClampLo = 1e-7;
inline constexpr double kScoreClampHi = 1.0 - 1e-7;

// BCE between a detector score and the destination label (natural=1, cg=0).
// The score comes from a black box and carries no gradient.
inline double adversarial_loss(double score, int target_label) {
  if (target_label != 0 && target_label != 1)
    throw ContractError("adversarial_loss target must be 0 (cg) or 1 (natural)");
  const double s = std::min(std::max(score, kScoreClampLo), kScoreClampHi);
  const double t = static_cast<double>(target_label);
  return -(t * std::log(s) + (1.0 - t) * std::log(1.0 - s));
}

// L_Tol = (1 - alpha) * L_VGG + alpha * L_Adv
inline double total_loss(double l_vgg, double l_adv, const LossWeights& w) {
  return (1.0 - w.alpha) * l_vgg + w.alpha * l_adv;
}

inline constexpr double kVggLossFloor = 1e-8;

struct ScaledGradientInfo {
  double scale = 1.0;
  bool skipped = false;  // true when l_vgg was below the floor
};

// grad_LTol ~= ((1-alpha)*L_VGG + alpha*L_Adv) / L_VGG * grad_LVGG.
// Scales the grad buffers of `grads` in place. When L_VGG is below the
// floor the adversarial scaling is skipped and the gradient returned
// unscaled, with a warning.
template <class T>
ScaledGradientInfo blackbox_scaled_gradient(double l_vgg, double l_adv,
                                            const std::vector<TensorPtr<T>>& grads,
                                            const LossWeights& w) {
  ScaledGradientInfo info;
  if (l_vgg < kVggLossFloor) {
    info.skipped = true;
    std::cerr << "[naturalize] warning: perceptual loss " << l_vgg
              << " below floor; adversarial scaling skipped this step\n";
    return info;
  }
  info.scale = ((1.0 - w.alpha) * l_vgg + w.alpha * l_adv) / l_vgg;
  const T s = static_cast<T>(info.scale);
  for (const auto& g : grads) {
    if (g->grad.empty()) continue;
    for (auto& v : g->grad) v *= s;
  }
  return info;
}

// Optional import/export of perceptual conv weights, magic "PNET".
void save_perceptual(const PerceptualNetF& net, const std::string& path);
PerceptualNetF load_perceptual(const std::string& path);

}  // namespace naturalize
