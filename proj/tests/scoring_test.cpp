#include <gtest/gtest.h>

#include <set>

#include "mc4ad/scoring.hpp"
#include "oracles.hpp"

using namespace mc4ad;
namespace t = mc4ad::testing;

namespace {

ForcePrediction<double> split_prediction(const Matrix<double>& resultant) {
  return make_prediction<double>(Matrix<double>(0.5 * resultant), Matrix<double>(0.5 * resultant));
}

// Scorer whose object score is a fixed value per sample, keyed by the first
// coordinate of the cloud.
Scorer table_scorer(std::vector<double> scores, int* calls = nullptr) {
  return [scores, calls](const PointCloud& c) {
    if (calls) ++*calls;
    ScoreResult r;
    const auto id = static_cast<std::size_t>(c.points(0, 0));
    r.point_scores = {scores[id]};
    r.object_score = scores[id];
    return r;
  };
}

std::vector<PointCloud> indexed_samples(std::size_t n) {
  std::vector<PointCloud> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(Points::Constant(1, 3, static_cast<double>(i)));
  return out;
}

}  // namespace

TEST(Score, ZeroForces) {
  const auto r = score_prediction(split_prediction(Matrix<double>::Zero(4, 3)));
  for (double s : r.point_scores) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(r.object_score, 0.0);
}

TEST(Score, ThreeFourFive) {
  Matrix<double> f(1, 3);
  f << 3, 4, 0;
  const auto r = score_prediction(make_prediction<double>(f, Matrix<double>::Zero(1, 3)));
  EXPECT_EQ(r.point_scores[0], 5.0);
  EXPECT_EQ(r.object_score, 5.0);
}

TEST(Score, ObjectScoreIsMaxRowNorm) {
  std::mt19937_64 rng(1);
  const Matrix<double> f = t::random_points(300, rng);
  const auto r = score_prediction(split_prediction(f));
  double ref = 0;
  for (Eigen::Index i = 0; i < f.rows(); ++i) ref = std::max(ref, f.row(i).norm());
  EXPECT_NEAR(r.object_score, ref, 1e-12);
}

TEST(Score, ScaleCovariance) {
  std::mt19937_64 rng(2);
  const Matrix<double> f = t::random_points(50, rng);
  const auto a = score_prediction(split_prediction(f));
  const auto b = score_prediction(split_prediction(Matrix<double>(2.5 * f)));
  for (std::size_t i = 0; i < a.point_scores.size(); ++i) EXPECT_NEAR(b.point_scores[i], 2.5 * a.point_scores[i], 1e-12);
  EXPECT_NEAR(b.object_score, 2.5 * a.object_score, 1e-12);
}

TEST(Restore, ZeroAndExactInverse) {
  std::mt19937_64 rng(3);
  const PointCloud clean(t::random_points(40, rng));
  EXPECT_EQ(restore(clean, split_prediction(Matrix<double>::Zero(40, 3))).points, clean.points);
  Points d = Points::Zero(40, 3);
  d.row(5) << 0.1, 0.0, 0.0;
  d.row(6) << 0.0, -0.05, 0.02;
  const PointCloud damaged(Points(clean.points + d));
  const auto restored = restore(damaged, make_prediction<double>(Matrix<double>(-d), Matrix<double>::Zero(40, 3)));
  EXPECT_LT((restored.points - clean.points).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(restore(damaged, split_prediction(Matrix<double>::Zero(3, 3))), DataError);
}

TEST(Hqc, EightSamplesQuarterBypassed) {
  const std::vector<double> pruned{0.5, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4};
  const std::vector<double> full{5, 1, 8, 2, 7, 3, 6, 4};
  int full_calls = 0;
  const auto report = hqc_run(indexed_samples(8), table_scorer(pruned), table_scorer(full, &full_calls), HqcConfig{});
  EXPECT_EQ(report.bypass_count, 2u);
  EXPECT_EQ(full_calls, 6);
  EXPECT_EQ(report.records[1].stage, HqcStage::bypassed_normal);
  EXPECT_EQ(report.records[3].stage, HqcStage::bypassed_normal);
  EXPECT_EQ(report.records[1].final_object_score, 0.1);
  EXPECT_FALSE(report.records[1].final_point_scores.has_value());
  EXPECT_EQ(report.records[0].final_object_score, 5.0);
  EXPECT_TRUE(report.warnings.empty());
}

TEST(Hqc, TooFewSamplesWarns) {
  const auto report = hqc_run(indexed_samples(2), table_scorer({0.1, 0.2}), table_scorer({1, 2}), HqcConfig{});
  EXPECT_EQ(report.bypass_count, 0u);
  EXPECT_EQ(report.warnings.size(), 1u);
}

TEST(Hqc, TiesBrokenBySampleId) {
  const std::vector<double> pruned{0.3, 0.1, 0.1, 0.1, 0.9, 0.9, 0.9, 0.9};
  const auto report = hqc_run(indexed_samples(8), table_scorer(pruned), table_scorer(pruned), HqcConfig{});
  EXPECT_EQ(report.records[1].stage, HqcStage::bypassed_normal);
  EXPECT_EQ(report.records[2].stage, HqcStage::bypassed_normal);
  EXPECT_EQ(report.records[3].stage, HqcStage::rescored);
}

TEST(Hqc, InvalidFractionRejected) {
  HqcConfig c;
  c.b = 1.0;
  EXPECT_THROW(hqc_run(indexed_samples(4), table_scorer({1, 2, 3, 4}), table_scorer({1, 2, 3, 4}), c), ConfigError);
}

TEST(HqcProperties, PartitionAndMonotonicity) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<std::size_t> size(1, 60);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = size(rng);
    std::vector<double> pruned(n);
    std::vector<double> full(n);
    for (std::size_t i = 0; i < n; ++i) {
      pruned[i] = std::round(u(rng) * 10) / 10;  // coarse values create ties
      full[i] = u(rng);
    }
    HqcConfig cfg;
    cfg.b = 0.05 + 0.9 * u(rng);
    const auto report = hqc_run(indexed_samples(n), table_scorer(pruned), table_scorer(full), cfg);
    const auto expected = static_cast<std::size_t>(std::floor(cfg.b * static_cast<double>(n)));
    EXPECT_EQ(report.bypass_count, expected);
    double max_bypassed = -1;
    double min_rescored = 2;
    std::size_t bypassed = 0;
    for (const auto& r : report.records) {
      if (r.stage == HqcStage::bypassed_normal) {
        ++bypassed;
        max_bypassed = std::max(max_bypassed, r.pruned_score);
        EXPECT_EQ(r.final_object_score, r.pruned_score);
      } else {
        min_rescored = std::min(min_rescored, r.pruned_score);
        EXPECT_EQ(r.final_object_score, full[r.sample_id]);
      }
    }
    EXPECT_EQ(bypassed, expected);
    EXPECT_LE(max_bypassed, min_rescored);
  }
}

TEST(Hqc, CsvAndSummary) {
  const auto report =
      hqc_run(indexed_samples(4), table_scorer({0.4, 0.3, 0.2, 0.1}), table_scorer({4, 3, 2, 1}), HqcConfig{});
  const std::string csv = hqc_csv(report);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sample_id,pruned_score,stage,final_score");
  EXPECT_NE(csv.find("3,0.10000000000000001,bypassed_normal"), std::string::npos);
  const auto j = hqc_summary(report);
  EXPECT_EQ(j["N"], 4);
  EXPECT_EQ(j["bypass_count"], 1);
  for (const char* key : {"b", "stage1_seconds", "stage2_seconds", "effective_fps"}) EXPECT_TRUE(j.contains(key)) << key;
}

TEST(Hqc, RescoredMatchesStandaloneNetwork) {
  NetworkConfig small;
  small.base_channels = 8;
  small.decoder_channels = {8, 8, 8, 8};
  small.voxel_size = 0.2;
  NetworkConfig pruned_cfg = small;
  pruned_cfg.variant = Variant::pruned;
  const auto full = Network<float>::build(small, 1);
  const auto pruned = Network<float>::build(pruned_cfg, 2);
  std::vector<PointCloud> samples;
  for (std::uint64_t i = 0; i < 12; ++i) samples.push_back(t::sphere_cloud(200, 50 + i));
  const Scorer vp = [&](const PointCloud& c) { return score(pruned, c); };
  const Scorer vo = [&](const PointCloud& c) { return score(full, c); };
  const auto report = hqc_run(samples, vp, vo, HqcConfig{});
  for (const auto& r : report.records) {
    if (r.stage != HqcStage::rescored) continue;
    const auto ref = score(full, samples[r.sample_id]);
    EXPECT_EQ(r.final_object_score, ref.object_score);
    EXPECT_EQ(*r.final_point_scores, ref.point_scores);
  }
}
