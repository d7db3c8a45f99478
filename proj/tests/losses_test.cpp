#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "mc4ad/losses.hpp"
#include "oracles.hpp"

using namespace mc4ad;
namespace t = mc4ad::testing;

namespace {

using Mat = Matrix<double>;

Mat row3(double x, double y, double z) {
  Mat m(1, 3);
  m << x, y, z;
  return m;
}

Mat random_field(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 1);
  Mat m(n, 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

constexpr double kEps = 1e-8;

}  // namespace

TEST(SymLoss, FixedPoints) {
  EXPECT_NEAR(sym_loss(make_prediction(row3(1, 0, 0), row3(1, 0, 0)), kEps), -1.0, 1e-7);
  EXPECT_NEAR(sym_loss(make_prediction(row3(-1, 0, 0), row3(1, 0, 0)), kEps), 2.0, 1e-7);
  EXPECT_NEAR(sym_loss(make_prediction(row3(0, 0, 0), row3(2, 0, 0)), kEps), 1.0, 1e-7);
}

TEST(DistLoss, Examples) {
  std::mt19937_64 rng(1);
  const Mat a = random_field(100, rng);
  EXPECT_EQ(dist_loss<double>(a, a), 0.0);
  EXPECT_EQ(dist_loss<double>(Mat::Zero(1, 3), row3(1, 0, 0)), 1.0);
  const Mat b = random_field(100, rng);
  double ref = 0;
  for (Eigen::Index i = 0; i < 100; ++i) ref += (b.row(i) - a.row(i)).norm();
  EXPECT_NEAR(dist_loss<double>(a, b), ref / 100, 1e-12);
}

TEST(DistLoss, ShapeMismatchRejected) {
  EXPECT_THROW(dist_loss<double>(Mat::Zero(2, 3), Mat::Zero(3, 3)), DataError);
}

TEST(DirLoss, Examples) {
  EXPECT_NEAR(dir_loss<double>(row3(1, 0, 0), row3(1, 0, 0), kEps), -1.0, 1e-7);
  EXPECT_NEAR(dir_loss<double>(row3(0, 1, 0), row3(1, 0, 0), kEps), 0.0, 1e-12);
  std::mt19937_64 rng(2);
  EXPECT_NEAR(dir_loss<double>(random_field(10, rng), Mat::Zero(10, 3), kEps), 0.0, 1e-12);
}

TEST(CombinedLoss, ZeroEverywhere) {
  const auto b = combined_loss<double>(make_prediction<double>(Mat::Zero(5, 3), Mat::Zero(5, 3)), Mat::Zero(5, 3), LossConfig{});
  EXPECT_EQ(b.dist, 0.0);
  EXPECT_NEAR(b.dir, 0.0, 1e-12);
  EXPECT_NEAR(b.sym, 0.0, 1e-12);
  EXPECT_NEAR(b.total, 0.0, 1e-12);
}

TEST(CombinedLoss, ExactSumOfTerms) {
  std::mt19937_64 rng(3);
  const auto pred = make_prediction(random_field(20, rng), random_field(20, rng));
  const Mat target = random_field(20, rng);
  const auto b = combined_loss<double>(pred, target, LossConfig{});
  EXPECT_EQ(b.total, b.dist + b.dir + b.sym);
  EXPECT_EQ(b.sym, sym_loss(pred, kEps));
  EXPECT_EQ(b.dist, dist_loss<double>(pred.resultant, target));
  EXPECT_EQ(b.dir, dir_loss<double>(pred.resultant, target, kEps));
}

TEST(SupervisionTarget, SignConvention) {
  Points d(1, 3);
  d << 0.1, -0.2, 0.3;
  LossConfig cfg;
  EXPECT_EQ(supervision_target<double>(d, cfg), Mat(-d));
  cfg.target_sign = TargetSign::damage;
  EXPECT_EQ(supervision_target<double>(d, cfg), Mat(d));
}

TEST(LossConfig, JsonRejectsUnknownSign) {
  LossConfig c;
  EXPECT_THROW(from_json(nlohmann::json{{"target_sign", "sideways"}}, c), ConfigError);
  EXPECT_THROW(from_json(nlohmann::json{{"weight", 2}}, c), ConfigError);
}

TEST(LossGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto ext = random_field(16, rng);
    auto inn = random_field(16, rng);
    const Mat target = random_field(16, rng);
    LossGrad<double> g;
    combined_loss<double>(make_prediction(ext, inn), target, LossConfig{}, &g);
    const auto f = [&] { return combined_loss<double>(make_prediction(ext, inn), target, LossConfig{}).total; };
    for (Eigen::Index k = 0; k < ext.size(); ++k) {
      EXPECT_LT(t::relative_error(g.external.data()[k], t::central_difference(f, ext.data() + k, 1e-6)), 1e-4);
      EXPECT_LT(t::relative_error(g.internal.data()[k], t::central_difference(f, inn.data() + k, 1e-6)), 1e-4);
    }
  }
}

TEST(LossProperties, RangesScalingPermutation) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat e = random_field(8, rng);
    const Mat i = random_field(8, rng);
    const Mat target = random_field(8, rng);
    for (Eigen::Index r = 0; r < 8; ++r) {
      const double v = sym_loss(make_prediction(Mat(e.row(r)), Mat(i.row(r))), kEps);
      EXPECT_GE(v, -1.0 - 1e-6);
      EXPECT_LE(v, std::sqrt(3.0) + 1.0 + 1e-6);
    }
    const double c = scale(rng);
    EXPECT_LT(std::abs(sym_loss(make_prediction(e, i), kEps) - sym_loss(make_prediction(Mat(c * e), Mat(c * i)), kEps)),
              1e-5);
    const Mat res = e + i;
    EXPECT_GE(dist_loss<double>(res, target), 0.0);
    const double dir = dir_loss<double>(res, target, kEps);
    EXPECT_GE(dir, -1.0 - 1e-6);
    EXPECT_LE(dir, 1.0 + 1e-6);

    std::vector<Eigen::Index> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat pe(8, 3), pi(8, 3), pt(8, 3);
    for (Eigen::Index r = 0; r < 8; ++r) {
      pe.row(r) = e.row(perm[static_cast<std::size_t>(r)]);
      pi.row(r) = i.row(perm[static_cast<std::size_t>(r)]);
      pt.row(r) = target.row(perm[static_cast<std::size_t>(r)]);
    }
    const auto a = combined_loss<double>(make_prediction(e, i), target, LossConfig{});
    const auto b = combined_loss<double>(make_prediction(pe, pi), pt, LossConfig{});
    EXPECT_NEAR(a.dist, b.dist, 1e-12);
    EXPECT_NEAR(a.dir, b.dir, 1e-12);
    EXPECT_NEAR(a.sym, b.sym, 1e-12);
  }
}
