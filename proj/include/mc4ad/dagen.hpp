#pragma once

// Diverse anomaly generation: localized, direction-perturbed and attenuated
// displacements applied to random KNN patches of a normal cloud.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "mc4ad/geometry.hpp"

namespace mc4ad {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool operator==(const Interval&) const = default;
};

struct DaGenParams {
  int patch_count = 64;                // G
  std::optional<int> patch_size;       // K; defaults to ceil(n / G)
  Interval gamma{0.06, 0.12};          // peak displacement magnitude
  Interval lambda{0.95, 1.0};          // weight of the normal over the random direction
  Interval sigma{0.0, 0.08};           // stretching
  double perturb_fraction = 0.10;      // share of the G patches actually displaced
  std::uint64_t rng_seed = 0;

  void validate() const {
    const auto inside = [](Interval r, double lo, double hi, bool open_lo, bool open_hi) {
      const bool lo_ok = open_lo ? r.lo > lo : r.lo >= lo;
      const bool hi_ok = open_hi ? r.hi < hi : r.hi <= hi;
      return r.lo <= r.hi && lo_ok && hi_ok;
    };
    if (patch_count < 1) throw ConfigError("dagen.patch_count must be >= 1");
    if (patch_size && *patch_size < 1) throw ConfigError("dagen.patch_size must be >= 1");
    if (!inside(gamma, 0.0, 1.0, true, true)) throw ConfigError("dagen.gamma_range must lie in (0, 1)");
    if (!inside(lambda, 0.0, 1.0, false, false)) throw ConfigError("dagen.lambda_range must lie in [0, 1]");
    if (!inside(sigma, 0.0, 1.0, false, true)) throw ConfigError("dagen.sigma_range must lie in [0, 1)");
    if (!(perturb_fraction > 0.0 && perturb_fraction <= 1.0)) {
      throw ConfigError("dagen.perturb_fraction must lie in (0, 1]");
    }
  }

  std::size_t resolved_patch_size(std::size_t n) const {
    if (patch_size) return static_cast<std::size_t>(*patch_size);
    return (n + static_cast<std::size_t>(patch_count) - 1) / static_cast<std::size_t>(patch_count);
  }

  std::size_t perturbed_patch_count() const {
    const auto k = static_cast<std::size_t>(std::lround(perturb_fraction * patch_count));
    return std::max<std::size_t>(k, 1);
  }
};

struct PatchPerturbation {
  PatchIndex patch;
  int beta = 1;
  double gamma = 0.0;
  double lambda = 1.0;
  double sigma = 0.0;
  Vec3 eta = Vec3::UnitX();
  std::vector<double> pi;  // per member, aligned with patch.members

  Vec3 direction() const { return beta * lambda * patch.seed_normal + (1.0 - lambda) * eta; }
};

struct PseudoAnomalySample {
  PointCloud perturbed;
  Points displacement;  // applied damage field, zero outside perturbed patches
  Labels mask;
  std::vector<PatchPerturbation> perturbations;
};

/// Attenuation per patch member: 1 at the seed falling linearly to 0 at the
/// member farthest from the seed within the seed's tangent plane.
inline std::vector<double> attenuation(const PatchIndex& patch, const PointCloud& cloud) {
  const Vec3 seed = cloud.point(static_cast<std::size_t>(patch.seed));
  const Vec3& nu = patch.seed_normal;
  std::vector<double> rho(patch.members.size());
  double rho_max = 0.0;
  for (std::size_t m = 0; m < patch.members.size(); ++m) {
    const Vec3 d = cloud.point(static_cast<std::size_t>(patch.members[m])) - seed;
    rho[m] = (d - d.dot(nu) * nu).norm();
    rho_max = std::max(rho_max, rho[m]);
  }
  std::vector<double> pi(rho.size(), 1.0);
  if (rho_max > 0.0) {
    for (std::size_t m = 0; m < rho.size(); ++m) pi[m] = 1.0 - rho[m] / rho_max;
  }
  for (std::size_t m = 0; m < rho.size(); ++m) {
    if (patch.members[m] == patch.seed) pi[m] = 1.0;
  }
  return pi;
}

/// Per-member displacement rows (member order) for one perturbed patch.
inline Points perturb_patch(const PatchPerturbation& p) {
  double pi_max = 0.0;
  for (double v : p.pi) pi_max = std::max(pi_max, v);
  const Vec3 dir = p.direction();
  Points rows(static_cast<Eigen::Index>(p.pi.size()), 3);
  for (std::size_t m = 0; m < p.pi.size(); ++m) {
    const double pi = pi_max > 0.0 ? p.pi[m] / pi_max : 0.0;
    const double scale = p.gamma * pi * (1.0 - p.sigma * std::abs(pi));
    rows.row(static_cast<Eigen::Index>(m)) = (scale * dir).transpose();
  }
  return rows;
}

namespace detail {

template <class Rng>
double uniform_in(Interval r, Rng& rng) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

template <class Rng>
Vec3 unit_vector(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Vec3 v(g(rng), g(rng), g(rng));
    const double norm = v.norm();
    if (norm > 1e-12) return v / norm;
  }
}

}  // namespace detail

/// Converts a normal cloud into a pseudo-anomalous one with exact per-point
/// supervision. Pure function of (cloud, params).
inline PseudoAnomalySample generate(const PointCloud& cloud, const DaGenParams& params) {
  params.validate();
  const std::size_t n = cloud.size();
  const std::size_t patch_size = params.resolved_patch_size(n);
  if (static_cast<std::size_t>(params.patch_count) > n) {
    throw ConfigError("dagen: G = " + std::to_string(params.patch_count) + " exceeds n = " + std::to_string(n));
  }
  if (patch_size > n) {
    throw ConfigError("dagen: K = " + std::to_string(patch_size) + " exceeds n = " + std::to_string(n));
  }

  const PointCloud* source = &cloud;
  PointCloud with_normals;
  if (!cloud.normals) {
    with_normals = estimate_normals(cloud).cloud;
    source = &with_normals;
  }

  std::mt19937_64 rng(params.rng_seed);
  const auto patches = sample_patches(*source, static_cast<std::size_t>(params.patch_count), patch_size, rng);
  auto chosen = sample_without_replacement(patches.size(), params.perturbed_patch_count(), rng);
  std::sort(chosen.begin(), chosen.end());

  PseudoAnomalySample sample;
  sample.displacement = Points::Zero(static_cast<Eigen::Index>(n), 3);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int idx : chosen) {
    PatchPerturbation p;
    p.patch = patches[static_cast<std::size_t>(idx)];
    p.beta = coin(rng) == 0 ? -1 : 1;
    p.gamma = detail::uniform_in(params.gamma, rng);
    p.lambda = detail::uniform_in(params.lambda, rng);
    p.sigma = detail::uniform_in(params.sigma, rng);
    p.eta = detail::unit_vector(rng);
    p.pi = attenuation(p.patch, *source);
    const Points rows = perturb_patch(p);
    for (std::size_t m = 0; m < p.patch.members.size(); ++m) {
      sample.displacement.row(p.patch.members[m]) += rows.row(static_cast<Eigen::Index>(m));
    }
    sample.perturbations.push_back(std::move(p));
  }

  sample.perturbed.points = cloud.points;
  sample.mask.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (sample.displacement.row(row).norm() > 0.0) {
      sample.mask[i] = 1;
      sample.perturbed.points.row(row) += sample.displacement.row(row);
    }
  }
  sample.perturbed.point_labels = sample.mask;
  return sample;
}

}  // namespace mc4ad
