// SPDX-License-Identifier: Apache-2.0
//
// Confusion counts and the two headline metrics. CG (or transformed-CG)
// images are the positive class: accuracy = (n_TP + n_TN) / N and
// detection_rate = n_TP / (n_TP + n_FN).

#pragma once

#include <map>
#include <string>
#include <vector>

#include "naturalize/corpus.hpp"
#include "naturalize/detector.hpp"
#include "naturalize/errors.hpp"

namespace naturalize {

class UndefinedMetricError : public Error {
 public:
  explicit UndefinedMetricError(const std::string& what)
      : Error(ErrorCode::InvalidArgument, what) {}
};

struct ConfusionCounts {
  std::size_t n_tp = 0;  // cg classified cg
  std::size_t n_tn = 0;  // natural classified natural
  std::size_t n_fp = 0;  // natural classified cg
  std::size_t n_fn = 0;  // cg classified natural
  std::size_t total() const { return n_tp + n_tn + n_fp + n_fn; }
};

double accuracy(const ConfusionCounts& c);
double detection_rate(const ConfusionCounts& c);

struct PerImageScore {
  std::string id;
  Label label = Label::Cg;
  double score = 0.0;        // P(natural)
  bool decided_natural = false;
};

struct MetricsReport {
  std::string scenario;
  std::string phase;  // "before" | "after"
  ConfusionCounts counts;
  double accuracy = 0.0;
  double detection_rate = 0.0;
  std::vector<PerImageScore> per_image;
  std::map<std::string, std::string> metadata;
};

// Scores every item with the detector and assembles the report.
MetricsReport evaluate_corpus(const DetectorModel& detector,
                              const std::vector<CorpusItem>& items,
                              const std::string& scenario, const std::string& phase);

void write_report_json(const MetricsReport& r, const std::string& path);
void write_report_csv(const MetricsReport& r, const std::string& path);
std::string report_to_json(const MetricsReport& r);

}  // namespace naturalize
