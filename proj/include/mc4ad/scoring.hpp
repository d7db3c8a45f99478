#pragma once

// Corrective-force anomaly scores, cloud restoration and the two-stage
// quality-control pipeline (fast pruned screening, full-model rescoring).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mc4ad/network.hpp"

namespace mc4ad {

struct ScoreResult {
  std::vector<double> point_scores;  // ||F_C,i||
  double object_score = 0.0;         // max of point scores
  ForcePrediction<double> prediction;
};

template <class T>
ScoreResult score_prediction(const ForcePrediction<T>& pred) {
  ScoreResult r;
  r.prediction.external = pred.external.template cast<double>();
  r.prediction.internal = pred.internal.template cast<double>();
  r.prediction.resultant = pred.resultant.template cast<double>();
  const Eigen::Index n = r.prediction.resultant.rows();
  r.point_scores.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    r.point_scores[static_cast<std::size_t>(i)] = r.prediction.resultant.row(i).norm();
  }
  r.object_score = r.point_scores.empty() ? 0.0 : *std::max_element(r.point_scores.begin(), r.point_scores.end());
  return r;
}

template <class T>
ScoreResult score(const Network<T>& net, const PointCloud& cloud) {
  return score_prediction(net.forward(cloud));
}

/// Applies the predicted resultant force as an additive correction.
template <class T>
PointCloud restore(const PointCloud& cloud, const ForcePrediction<T>& pred) {
  if (static_cast<std::size_t>(pred.resultant.rows()) != cloud.size() || pred.resultant.cols() != 3) {
    throw DataError("restore: prediction has " + std::to_string(pred.resultant.rows()) + " rows for " +
                    std::to_string(cloud.size()) + " points");
  }
  PointCloud out = cloud;
  out.points += pred.resultant.template cast<double>();
  return out;
}

using Scorer = std::function<ScoreResult(const PointCloud&)>;

struct HqcConfig {
  double b = 0.25;

  void validate() const {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("hqc.b must lie in (0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const HqcConfig& c) { j = nlohmann::json{{"b", c.b}}; }

inline void from_json(const nlohmann::json& j, HqcConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "b") c.b = value.get<double>();
    else throw ConfigError("unknown key hqc." + key);
  }
}

enum class HqcStage { bypassed_normal, rescored };

inline std::string to_string(HqcStage s) { return s == HqcStage::bypassed_normal ? "bypassed_normal" : "rescored"; }

struct HqcRecord {
  std::size_t sample_id = 0;
  double pruned_score = 0.0;
  HqcStage stage = HqcStage::rescored;
  double final_object_score = 0.0;
  std::optional<std::vector<double>> final_point_scores;  // present iff rescored
  std::vector<double> pruned_point_scores;                // kept for audit
};

struct HqcReport {
  double b = 0.25;
  std::vector<HqcRecord> records;  // ordered by sample id
  std::size_t bypass_count = 0;
  double stage1_seconds = 0.0;
  double stage2_seconds = 0.0;
  std::vector<std::string> warnings;

  double total_seconds() const { return stage1_seconds + stage2_seconds; }
  double effective_fps() const {
    return total_seconds() > 0.0 ? static_cast<double>(records.size()) / total_seconds() : 0.0;
  }
};

/// Indices of the floor(b*N) samples with the lowest scores, ties broken by index.
inline std::vector<std::size_t> lowest_ranked(const std::vector<double>& scores, double b) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return scores[a] < scores[c]; });
  const auto count = static_cast<std::size_t>(std::floor(b * static_cast<double>(scores.size())));
  order.resize(std::min(count, order.size()));
  return order;
}

/// Screens every sample with the fast scorer, bypasses the floor(b*N) lowest
/// as normal, and rescores the rest with the full scorer.
inline HqcReport hqc_run(const std::vector<PointCloud>& samples, const Scorer& pruned, const Scorer& full,
                         const HqcConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw DataError("hqc_run: no samples");
  HqcReport report;
  report.b = cfg.b;
  report.records.resize(samples.size());

  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  std::vector<double> pruned_scores(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ScoreResult r = pruned(samples[i]);
    auto& rec = report.records[i];
    rec.sample_id = i;
    rec.pruned_score = r.object_score;
    rec.pruned_point_scores = std::move(r.point_scores);
    pruned_scores[i] = rec.pruned_score;
  }
  const auto t1 = Clock::now();

  const auto bypassed = lowest_ranked(pruned_scores, cfg.b);
  if (bypassed.empty()) {
    report.warnings.push_back("b*N = " + std::to_string(cfg.b * static_cast<double>(samples.size())) +
                              " < 1: no sample bypassed, all rescored");
  }
  std::vector<bool> skip(samples.size(), false);
  for (std::size_t i : bypassed) skip[i] = true;
  report.bypass_count = bypassed.size();

  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& rec = report.records[i];
    if (skip[i]) {
      rec.stage = HqcStage::bypassed_normal;
      rec.final_object_score = rec.pruned_score;
      continue;
    }
    ScoreResult r = full(samples[i]);
    rec.stage = HqcStage::rescored;
    rec.final_object_score = r.object_score;
    rec.final_point_scores = std::move(r.point_scores);
  }
  const auto t2 = Clock::now();
  report.stage1_seconds = std::chrono::duration<double>(t1 - t0).count();
  report.stage2_seconds = std::chrono::duration<double>(t2 - t1).count();
  return report;
}

inline std::string hqc_csv(const HqcReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "sample_id,pruned_score,stage,final_score\n";
  for (const auto& r : report.records) {
    os << r.sample_id << ',' << r.pruned_score << ',' << to_string(r.stage) << ',' << r.final_object_score << '\n';
  }
  return os.str();
}

inline nlohmann::json hqc_summary(const HqcReport& report) {
  return nlohmann::json{{"b", report.b},
                        {"N", report.records.size()},
                        {"bypass_count", report.bypass_count},
                        {"stage1_seconds", report.stage1_seconds},
                        {"stage2_seconds", report.stage2_seconds},
                        {"total_seconds", report.total_seconds()},
                        {"effective_fps", report.effective_fps()},
                        {"warnings", report.warnings}};
}

}  // namespace mc4ad
