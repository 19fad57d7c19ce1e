// SPDX-License-Identifier: Apache-2.0
//
// Transformation endpoint and the scenario runner: train detectors, train
// (or reuse) an H-Net, evaluate the spoofing detector on the evaluation
// corpus before and after transforming its CG half, and emit reports.

#pragma once

#include <cstdint>
#include <string>

#include "naturalize/corpus.hpp"
#include "naturalize/hnet.hpp"
#include "naturalize/metrics.hpp"
#include "naturalize/training.hpp"

namespace naturalize {

// normalize -> enc_cg -> transformer -> dec_natural -> clamp [-1.8,1.8]
// -> denormalize to [0,255] (round half up). Eval-mode batch norm.
PixelImage transform_image(const HNetF& net, const PixelImage& img);

struct CorpusSource {
  std::string dir;            // when set, load from disk
  std::uint64_t synth_seed = 0;
  int count = 0;

  ImageCorpus realize(SynthKind kind, int size) const;
};

struct ScenarioCorpusPair {
  CorpusSource natural, cg;
};

struct ScenarioConfig {
  std::string tag = "1";
  int size = 64;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  ScenarioCorpusPair hnet_corpus, detector_corpus, eval_corpus;
  TrainConfig train;
  std::string eval_variant = "flda";
  std::string train_variant = "mlp";
  std::string hnet_checkpoint;  // reuse instead of training when set
};

ScenarioConfig scenario_config_from_json(const std::string& json_text);
ScenarioConfig scenario_config_from_file(const std::string& path);

struct ScenarioResult {
  MetricsReport before;
  MetricsReport after;
  std::string summary_path;
  std::string summary_json;
  std::string hnet_checkpoint_path;
  std::string eval_detector_path;
  std::string train_detector_path;
};

ScenarioResult run_scenario(const ScenarioConfig& cfg);

}  // namespace naturalize
