// SPDX-License-Identifier: Apache-2.0
#include "naturalize/metrics.hpp"

#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace naturalize {

double accuracy(const ConfusionCounts& c) {
  const std::size_t n = c.total();
  if (n == 0) throw UndefinedMetricError("accuracy undefined: no evaluated images");
  return static_cast<double>(c.n_tp + c.n_tn) / static_cast<double>(n);
}

double detection_rate(const ConfusionCounts& c) {
  const std::size_t pos = c.n_tp + c.n_fn;
  if (pos == 0) throw UndefinedMetricError("detection rate undefined: no positive (cg) images");
  return static_cast<double>(c.n_tp) / static_cast<double>(pos);
}

MetricsReport evaluate_corpus(const DetectorModel& detector,
                              const std::vector<CorpusItem>& items,
                              const std::string& scenario, const std::string& phase) {
  MetricsReport r;
  r.scenario = scenario;
  r.phase = phase;
  for (const auto& item : items) {
    PerImageScore s;
    s.id = item.id;
    s.label = item.label;
    s.score = detector.score(item.image);
    s.decided_natural = s.score >= detector.threshold();
    if (item.label == Label::Cg) {
      if (s.decided_natural)
        ++r.counts.n_fn;
      else
        ++r.counts.n_tp;
    } else {
      if (s.decided_natural)
        ++r.counts.n_tn;
      else
        ++r.counts.n_fp;
    }
    r.per_image.push_back(std::move(s));
  }
  r.accuracy = accuracy(r.counts);
  r.detection_rate = detection_rate(r.counts);
  return r;
}

namespace {

json report_json(const MetricsReport& r) {
  json per = json::array();
  for (const auto& s : r.per_image)
    per.push_back({{"id", s.id},
                   {"label", to_string(s.label)},
                   {"score", s.score},
                   {"decision", s.decided_natural ? "natural" : "cg"}});
  json meta = json::object();
  for (const auto& [k, v] : r.metadata) meta[k] = v;
  return json{{"scenario", r.scenario},
              {"phase", r.phase},
              {"n_tp", r.counts.n_tp},
              {"n_tn", r.counts.n_tn},
              {"n_fp", r.counts.n_fp},
              {"n_fn", r.counts.n_fn},
              {"accuracy", r.accuracy},
              {"detection_rate", r.detection_rate},
              {"metadata", meta},
              {"per_image", per}};
}

}  // namespace

std::string report_to_json(const MetricsReport& r) { return report_json(r).dump(2); }

void write_report_json(const MetricsReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path);
  out << report_to_json(r) << "\n";
}

void write_report_csv(const MetricsReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path);
  out << "n_tp,n_tn,n_fp,n_fn,accuracy,detection_rate,scenario,phase\n";
  out << r.counts.n_tp << ',' << r.counts.n_tn << ',' << r.counts.n_fp << ',' << r.counts.n_fn
      << ',' << r.accuracy << ',' << r.detection_rate << ',' << r.scenario << ',' << r.phase
      << "\n";
}

}  // namespace naturalize
