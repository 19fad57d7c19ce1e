// SPDX-License-Identifier: Apache-2.0
//
// The four sequential optimization steps driving H-Net against a frozen
// black-box detector, run once each per iteration on fresh mini-batches:
//   1. natural autoencoder (scaled total loss, targets natural)
//   2. CG autoencoder (perceptual loss only, no detector call)
//   3. transformer on natural latents (latent MSE, transformer only)
//   4. CG transformation path (scaled total loss, adversarial target natural)

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "naturalize/corpus.hpp"
#include "naturalize/detector.hpp"
#include "naturalize/hnet.hpp"
#include "naturalize/losses.hpp"

namespace naturalize {

struct TrainConfig {
  double alpha = 5e-3;
  double learning_rate = 1e-4;
  int batch_size = 8;
  int iterations_per_epoch = 100;
  int epochs = 1;
  std::uint64_t seed = 0;
  int input_size = 64;
  std::string natural_dir;
  std::string cg_dir;
  std::string detector_checkpoint;
  std::string perceptual_weights;  // optional; seeded init when empty
  std::string out_dir = ".";
  int checkpoint_every = 0;  // iterations; 0 = final checkpoint only
  std::string resume;        // .hnet checkpoint with a sibling .hnts state file
  bool zero_wall_time = false;  // log wall_ms as 0 for hash-stable logs

  int total_iterations() const { return iterations_per_epoch * epochs; }
  void validate() const;
};

struct StepMetrics {
  int step = 0;
  std::optional<double> l_vgg;
  std::optional<double> l_adv;
  std::optional<double> l_tol;
  std::optional<double> l_latent;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  double eq2_scale = 1.0;
  bool eq2_skipped = false;
};

// Deterministic per-class batch stream: a seeded shuffle per epoch, wrapping
// around with a reshuffle when the corpus is exhausted mid-batch.
class ClassSampler {
 public:
  ClassSampler() = default;
  ClassSampler(std::size_t corpus_size, std::uint64_t seed, const std::string& tag);
  std::vector<int> next(int batch_size);
  std::uint64_t epoch() const { return epoch_; }
  std::size_t position() const { return pos_; }
  void restore(std::uint64_t epoch, std::size_t pos);

 private:
  void reshuffle();
  std::size_t n_ = 0;
  std::uint64_t seed_ = 0;
  std::string tag_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
  std::uint64_t epoch_ = 0;
};

class Trainer {
 public:
  Trainer(HNetF& net, const ImageCorpus& natural, const ImageCorpus& cg,
          const BlackBoxScorer& detector, const PerceptualNetF& perceptual, TrainConfig cfg);

  StepMetrics step1_natural_autoencoder(const TensorPtrF& batch_natural);
  StepMetrics step2_cg_autoencoder(const TensorPtrF& batch_cg);
  StepMetrics step3_transformer(const TensorPtrF& batch_natural);
  StepMetrics step4_transform_path(const TensorPtrF& batch_cg);

  // One full iteration: steps 1-4 on fresh mini-batches.
  std::vector<StepMetrics> iterate();

  // Full loop with metrics log and checkpoint cadence; returns the number of
  // iterations executed in this call.
  int run();

  TensorPtrF make_batch(Label cls, const std::vector<int>& indices) const;
  std::uint64_t iteration() const { return iteration_; }
  std::size_t detector_calls() const { return detector_calls_; }

  void save_state(const std::string& path) const;
  void load_state(const std::string& path);

 private:
  double batch_adversarial_loss(const Tensor<float>& output, int target_label);
  void write_metrics_line(std::uint64_t iteration, const StepMetrics& m);
  void save_checkpoint_pair(const std::string& stem) const;

  HNetF& net_;
  const ImageCorpus& natural_;
  const ImageCorpus& cg_;
  const BlackBoxScorer& detector_;
  const PerceptualNetF& perceptual_;
  TrainConfig cfg_;
  LossWeights weights_;

  std::vector<TensorPtrF> params1_, params2_, params3_, params4_;
  AdamState<float> opt1_, opt2_, opt3_, opt4_;
  ClassSampler sampler_natural_, sampler_cg_;
  std::uint64_t iteration_ = 0;
  std::size_t detector_calls_ = 0;
  std::string metrics_path_;
};

// Loads corpora, detector and perceptual weights from the config paths,
// builds or resumes the model, runs the loop, and writes the final
// checkpoint. Returns the trained net.
HNetF train_loop(const TrainConfig& cfg);

}  // namespace naturalize
