#pragma once

// Submanifold sparse convolution at a single resolution: output voxels are the
// input voxels, and each kernel tap only connects occupied voxel pairs.

#include <array>
#include <vector>

#include <Eigen/Core>

#include "mc4ad/geometry.hpp"

namespace mc4ad {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Voxel pairs (input -> output) connected by each tap of a cubic kernel.
struct Rulebook {
  int kernel_size = 3;
  std::size_t num_voxels = 0;
  std::vector<std::vector<int>> in;   // per tap
  std::vector<std::vector<int>> out;  // per tap
  int center_tap = 13;

  int taps() const { return kernel_size * kernel_size * kernel_size; }
};

inline Rulebook build_rulebook(const VoxelGrid& grid, int kernel_size = 3) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd and positive");
  Rulebook rb;
  rb.kernel_size = kernel_size;
  rb.num_voxels = grid.num_voxels();
  const int taps = rb.taps();
  rb.in.resize(static_cast<std::size_t>(taps));
  rb.out.resize(static_cast<std::size_t>(taps));
  const int r = kernel_size / 2;
  rb.center_tap = taps / 2;
  const VoxelLookup lookup(grid);
  int tap = 0;
  for (int dx = -r; dx <= r; ++dx) {
    for (int dy = -r; dy <= r; ++dy) {
      for (int dz = -r; dz <= r; ++dz, ++tap) {
        auto& ins = rb.in[static_cast<std::size_t>(tap)];
        auto& outs = rb.out[static_cast<std::size_t>(tap)];
        for (std::size_t v = 0; v < grid.num_voxels(); ++v) {
          const auto& c = grid.voxel_coords[v];
          const int src = lookup.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (src >= 0) {
            ins.push_back(src);
            outs.push_back(static_cast<int>(v));
          }
        }
      }
    }
  }
  return rb;
}

/// out = bias + sum_tap gather(in, x) * W_tap scattered to out.
/// `weight` is (taps * c_in) x c_out; rows [tap*c_in, (tap+1)*c_in) hold tap's kernel.
template <class T>
Matrix<T> sparse_conv_forward(const Rulebook& rb, const Matrix<T>& x, const Matrix<T>& weight,
                              const Matrix<T>& bias) {
  const Eigen::Index c_in = x.cols();
  const Eigen::Index c_out = weight.cols();
  Matrix<T> out = bias.replicate(x.rows(), 1);
  Matrix<T> gathered;
  Matrix<T> partial;
  for (int tap = 0; tap < rb.taps(); ++tap) {
    const auto& ins = rb.in[static_cast<std::size_t>(tap)];
    if (ins.empty()) continue;
    const auto w = weight.middleRows(static_cast<Eigen::Index>(tap) * c_in, c_in);
    if (tap == rb.center_tap) {
      out.noalias() += x * w;
      continue;
    }
    const auto& outs = rb.out[static_cast<std::size_t>(tap)];
    const auto m = static_cast<Eigen::Index>(ins.size());
    gathered.resize(m, c_in);
    for (Eigen::Index k = 0; k < m; ++k) gathered.row(k) = x.row(ins[static_cast<std::size_t>(k)]);
    partial.resize(m, c_out);
    partial.noalias() = gathered * w;
    for (Eigen::Index k = 0; k < m; ++k) out.row(outs[static_cast<std::size_t>(k)]) += partial.row(k);
  }
  return out;
}

/// Accumulates weight/bias gradients and returns d(loss)/d(x).
template <class T>
Matrix<T> sparse_conv_backward(const Rulebook& rb, const Matrix<T>& x, const Matrix<T>& weight,
                               const Matrix<T>& grad_out, Matrix<T>& grad_weight, Matrix<T>& grad_bias,
                               bool need_input_grad = true) {
  const Eigen::Index c_in = x.cols();
  const Eigen::Index c_out = weight.cols();
  grad_bias += grad_out.colwise().sum();
  Matrix<T> grad_x;
  if (need_input_grad) grad_x = Matrix<T>::Zero(x.rows(), c_in);
  Matrix<T> gx;
  Matrix<T> gd;
  Matrix<T> partial;
  for (int tap = 0; tap < rb.taps(); ++tap) {
    const auto& ins = rb.in[static_cast<std::size_t>(tap)];
    if (ins.empty()) continue;
    const Eigen::Index row0 = static_cast<Eigen::Index>(tap) * c_in;
    const auto w = weight.middleRows(row0, c_in);
    if (tap == rb.center_tap) {
      grad_weight.middleRows(row0, c_in).noalias() += x.transpose() * grad_out;
      if (need_input_grad) grad_x.noalias() += grad_out * w.transpose();
      continue;
    }
    const auto& outs = rb.out[static_cast<std::size_t>(tap)];
    const auto m = static_cast<Eigen::Index>(ins.size());
    gx.resize(m, c_in);
    gd.resize(m, c_out);
    for (Eigen::Index k = 0; k < m; ++k) {
      gx.row(k) = x.row(ins[static_cast<std::size_t>(k)]);
      gd.row(k) = grad_out.row(outs[static_cast<std::size_t>(k)]);
    }
    grad_weight.middleRows(row0, c_in).noalias() += gx.transpose() * gd;
    if (need_input_grad) {
      partial.resize(m, c_in);
      partial.noalias() = gd * w.transpose();
      for (Eigen::Index k = 0; k < m; ++k) grad_x.row(ins[static_cast<std::size_t>(k)]) += partial.row(k);
    }
  }
  return grad_x;
}

}  // namespace mc4ad
