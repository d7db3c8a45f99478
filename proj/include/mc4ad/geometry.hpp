#pragma once

// Point-cloud primitives shared by every stage: normalization, PCA normals,
// brute-force neighbor queries, patch sampling and sparse voxelization.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "mc4ad/error.hpp"

namespace mc4ad {

using Vec3 = Eigen::Vector3d;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Labels = std::vector<std::uint8_t>;

struct PointCloud {
  Points points;
  std::optional<Points> normals;
  std::optional<Labels> point_labels;

  PointCloud() = default;
  explicit PointCloud(Points pts) : points(std::move(pts)) {}

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  Vec3 point(std::size_t i) const { return points.row(static_cast<Eigen::Index>(i)).transpose(); }
};

inline void check_finite(const Points& points) {
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    if (!points.row(i).allFinite()) {
      throw DataError("non-finite coordinate at point index " + std::to_string(i));
    }
  }
}

/// Centers the cloud at the origin and scales it to unit maximum radius.
/// A cloud whose points all coincide is only centered.
inline PointCloud normalize_cloud(const PointCloud& cloud) {
  if (cloud.size() == 0) throw DataError("normalize_cloud: empty cloud");
  check_finite(cloud.points);
  PointCloud out = cloud;
  const Eigen::RowVector3d centroid = cloud.points.colwise().mean();
  out.points.rowwise() -= centroid;
  const double radius = out.points.rowwise().norm().maxCoeff();
  if (radius > 0.0) out.points /= radius;
  return out;
}

/// Indices of the k nearest points to `query`, ascending by (distance, index).
inline std::vector<int> knn(const Points& points, const Vec3& query, std::size_t k) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k > n) throw ConfigError("knn: k = " + std::to_string(k) + " exceeds n = " + std::to_string(n));
  std::vector<std::pair<double, int>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    dist[i] = {(points.row(static_cast<Eigen::Index>(i)).transpose() - query).squaredNorm(),
               static_cast<int>(i)};
  }
  if (k < n) std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  dist.resize(k);
  std::sort(dist.begin(), dist.end());
  std::vector<int> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = dist[i].second;
  return idx;
}

inline std::vector<int> knn(const Points& points, std::size_t query_index, std::size_t k) {
  return knn(points, Vec3(points.row(static_cast<Eigen::Index>(query_index)).transpose()), k);
}

struct NormalEstimate {
  PointCloud cloud;
  std::vector<std::size_t> degenerate;  // points whose neighborhood covariance has rank < 2
};

namespace detail {

// Resolves the sign of a normal whose dot product with the radial direction
// vanishes: prefer +z, then +y, then +x.
inline Vec3 orient_tie(Vec3 n) {
  for (int axis : {2, 1, 0}) {
    if (n[axis] > 0) return n;
    if (n[axis] < 0) return -n;
  }
  return n;
}

}  // namespace detail

/// k-NN PCA normals oriented away from the centroid.
inline NormalEstimate estimate_normals(const PointCloud& cloud, std::size_t k = 16) {
  const std::size_t n = cloud.size();
  if (k < 3) throw ConfigError("estimate_normals: k must be >= 3");
  if (k > n) {
    throw ConfigError("estimate_normals: k = " + std::to_string(k) + " exceeds n = " + std::to_string(n));
  }
  check_finite(cloud.points);

  NormalEstimate result{cloud, {}};
  Points normals(static_cast<Eigen::Index>(n), 3);
  const Vec3 centroid = cloud.points.colwise().mean().transpose();

  for (std::size_t i = 0; i < n; ++i) {
    const auto nbrs = knn(cloud.points, i, k);
    Vec3 mean = Vec3::Zero();
    for (int j : nbrs) mean += cloud.point(static_cast<std::size_t>(j));
    mean /= static_cast<double>(k);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (int j : nbrs) {
      const Vec3 d = cloud.point(static_cast<std::size_t>(j)) - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    const Vec3 ev = eig.eigenvalues();  // ascending
    Vec3 normal;
    if (ev[1] <= 1e-12 * std::max(ev[2], 1e-300)) {
      normal = Vec3::UnitZ();
      result.degenerate.push_back(i);
    } else {
      normal = eig.eigenvectors().col(0).normalized();
      const Vec3 radial = cloud.point(i) - centroid;
      const double dot = normal.dot(radial);
      if (std::abs(dot) <= 1e-9 * radial.norm()) {
        normal = detail::orient_tie(normal);
      } else if (dot < 0) {
        normal = -normal;
      }
    }
    normals.row(static_cast<Eigen::Index>(i)) = normal.transpose();
  }
  result.cloud.normals = std::move(normals);
  return result;
}

struct PatchIndex {
  int seed = 0;
  std::vector<int> members;  // ascending by distance to the seed; members[0] == seed
  Vec3 seed_normal = Vec3::UnitZ();
};

/// Draws `count` distinct indices from [0, n) by partial Fisher-Yates.
template <class Rng>
std::vector<int> sample_without_replacement(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

/// Random seeds plus K-nearest-neighbor growth. Patches may overlap.
template <class Rng>
std::vector<PatchIndex> sample_patches(const PointCloud& cloud, std::size_t patch_count,
                                       std::size_t patch_size, Rng& rng) {
  const std::size_t n = cloud.size();
  if (patch_count < 1) throw ConfigError("sample_patches: G must be >= 1");
  if (patch_size < 1) throw ConfigError("sample_patches: K must be >= 1");
  if (patch_count > n) {
    throw ConfigError("sample_patches: G = " + std::to_string(patch_count) + " exceeds n = " + std::to_string(n));
  }
  if (patch_size > n) {
    throw ConfigError("sample_patches: K = " + std::to_string(patch_size) + " exceeds n = " + std::to_string(n));
  }
  if (!cloud.normals) throw DataError("sample_patches: cloud has no normals");

  const auto seeds = sample_without_replacement(n, patch_count, rng);
  std::vector<PatchIndex> patches;
  patches.reserve(patch_count);
  for (int seed : seeds) {
    PatchIndex p;
    p.seed = seed;
    p.members = knn(cloud.points, static_cast<std::size_t>(seed), patch_size);
    // A coincident point with a lower index can outrank the seed itself.
    auto it = std::find(p.members.begin(), p.members.end(), seed);
    if (it == p.members.end()) {
      p.members.back() = seed;
      it = p.members.end() - 1;
    }
    std::rotate(p.members.begin(), it, it + 1);
    p.seed_normal = cloud.normals->row(seed).transpose();
    patches.push_back(std::move(p));
  }
  return patches;
}

using VoxelCoord = std::array<int, 3>;

struct VoxelGrid {
  double voxel_size = 0.03;
  std::vector<VoxelCoord> voxel_coords;         // lexicographic order
  std::vector<int> point_to_voxel;              // size n
  std::vector<std::vector<int>> voxel_to_points;  // ascending point indices

  std::size_t num_voxels() const { return voxel_coords.size(); }
  std::size_t num_points() const { return point_to_voxel.size(); }
};

inline VoxelCoord quantize(const Vec3& p, double voxel_size) {
  return {static_cast<int>(std::floor(p.x() / voxel_size)), static_cast<int>(std::floor(p.y() / voxel_size)),
          static_cast<int>(std::floor(p.z() / voxel_size))};
}

inline VoxelGrid voxelize(const PointCloud& cloud, double voxel_size = 0.03) {
  if (!(voxel_size > 0.0)) throw ConfigError("voxelize: voxel_size must be positive");
  const std::size_t n = cloud.size();
  std::vector<VoxelCoord> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = quantize(cloud.point(i), voxel_size);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return keys[a] < keys[b]; });

  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.point_to_voxel.resize(n);
  for (int i : order) {
    if (grid.voxel_coords.empty() || grid.voxel_coords.back() != keys[i]) {
      grid.voxel_coords.push_back(keys[i]);
      grid.voxel_to_points.emplace_back();
    }
    grid.point_to_voxel[i] = static_cast<int>(grid.voxel_coords.size()) - 1;
    grid.voxel_to_points.back().push_back(i);
  }
  return grid;
}

/// Broadcasts per-voxel feature rows back to the points of each voxel.
template <class Derived>
auto devoxelize(const VoxelGrid& grid, const Eigen::MatrixBase<Derived>& voxel_features) {
  using Scalar = typename Derived::Scalar;
  if (static_cast<std::size_t>(voxel_features.rows()) != grid.num_voxels()) {
    throw DataError("devoxelize: got " + std::to_string(voxel_features.rows()) + " feature rows for " +
                    std::to_string(grid.num_voxels()) + " voxels");
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(
      static_cast<Eigen::Index>(grid.num_points()), voxel_features.cols());
  for (std::size_t i = 0; i < grid.num_points(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = voxel_features.row(grid.point_to_voxel[i]);
  }
  return out;
}

/// Hash lookup from integer voxel coordinates to voxel index.
class VoxelLookup {
 public:
  explicit VoxelLookup(const VoxelGrid& grid) {
    index_.reserve(grid.num_voxels() * 2);
    for (std::size_t v = 0; v < grid.num_voxels(); ++v) index_.emplace(pack(grid.voxel_coords[v]), static_cast<int>(v));
  }

  int find(const VoxelCoord& c) const {
    const auto it = index_.find(pack(c));
    return it == index_.end() ? -1 : it->second;
  }

 private:
  static std::uint64_t pack(const VoxelCoord& c) {
    constexpr std::int64_t bias = 1 << 20;
    const auto part = [](int x) { return static_cast<std::uint64_t>(static_cast<std::int64_t>(x) + bias) & 0x1FFFFF; };
    return part(c[0]) | (part(c[1]) << 21) | (part(c[2]) << 42);
  }

  std::unordered_map<std::uint64_t, int> index_;
};

}  // namespace mc4ad
