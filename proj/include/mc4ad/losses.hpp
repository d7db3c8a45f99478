#pragma once

// Combined training objective: symmetry loss between the two force heads plus
// distance and direction losses against the supervision field. Every term
// returns its value and, on request, its gradient with respect to the
// external and internal force fields.

#include <cmath>
#include <string>

#include "json.hpp"

#include "mc4ad/network.hpp"

namespace mc4ad {

enum class TargetSign {
  corrective,  // supervise with -F_D so that points + F_C restores the clean cloud
  damage,      // supervise with +F_D
};

struct LossConfig {
  double epsilon = 1e-8;
  TargetSign target_sign = TargetSign::corrective;

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("loss.epsilon must be positive");
  }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"epsilon", c.epsilon},
                     {"target_sign", c.target_sign == TargetSign::corrective ? "corrective" : "damage"}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "epsilon") {
      c.epsilon = value.get<double>();
    } else if (key == "target_sign") {
      const auto s = value.get<std::string>();
      if (s == "corrective") c.target_sign = TargetSign::corrective;
      else if (s == "damage") c.target_sign = TargetSign::damage;
      else throw ConfigError("loss.target_sign must be \"corrective\" or \"damage\", got \"" + s + "\"");
    } else {
      throw ConfigError("unknown key loss." + key);
    }
  }
}

/// Supervision field for a stored damage displacement under `cfg.target_sign`.
template <class T>
Matrix<T> supervision_target(const Points& displacement, const LossConfig& cfg) {
  Matrix<T> target = displacement.cast<T>();
  if (cfg.target_sign == TargetSign::corrective) target = -target;
  return target;
}

template <class T>
struct LossGrad {
  Matrix<T> external;
  Matrix<T> internal;
};

namespace detail {

template <class T>
void check_rows(const Matrix<T>& a, const Matrix<T>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != 3 || b.cols() != 3) {
    throw DataError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
}

template <class T>
T sign(T v) {
  return static_cast<T>((v > T(0)) - (v < T(0)));
}

}  // namespace detail

/// Mean over points of ||I - E||_1 / (||I|| + ||E|| + eps) - (I/(||I||+eps)) . (E/(||E||+eps)).
template <class T>
T sym_loss(const ForcePrediction<T>& pred, double epsilon, LossGrad<T>* grad = nullptr) {
  detail::check_rows(pred.internal, pred.external, "sym_loss");
  const Eigen::Index n = pred.internal.rows();
  if (n == 0) throw DataError("sym_loss: empty prediction");
  const T eps = static_cast<T>(epsilon);
  const T inv_n = T(1) / static_cast<T>(n);
  if (grad) {
    grad->external = Matrix<T>::Zero(n, 3);
    grad->internal = Matrix<T>::Zero(n, 3);
  }
  T total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Matrix<T, 1, 3> a = pred.internal.row(i);
    const Eigen::Matrix<T, 1, 3> b = pred.external.row(i);
    const T ra = a.norm();
    const T rb = b.norm();
    const T l1 = (a - b).cwiseAbs().sum();
    const T denom = ra + rb + eps;
    const T da = ra + eps;
    const T db = rb + eps;
    const T dot = a.dot(b);
    total += l1 / denom - dot / (da * db);
    if (grad) {
      Eigen::Matrix<T, 1, 3> s;
      for (int k = 0; k < 3; ++k) s[k] = detail::sign(a[k] - b[k]);
      const Eigen::Matrix<T, 1, 3> ua = ra > T(0) ? Eigen::Matrix<T, 1, 3>(a / ra) : Eigen::Matrix<T, 1, 3>::Zero();
      const Eigen::Matrix<T, 1, 3> ub = rb > T(0) ? Eigen::Matrix<T, 1, 3>(b / rb) : Eigen::Matrix<T, 1, 3>::Zero();
      const T q = l1 / (denom * denom);
      Eigen::Matrix<T, 1, 3> ga = s / denom - q * ua;
      Eigen::Matrix<T, 1, 3> gb = -s / denom - q * ub;
      ga -= b / (da * db) - dot * ua / (da * da * db);
      gb -= a / (da * db) - dot * ub / (da * db * db);
      grad->internal.row(i) = ga * inv_n;
      grad->external.row(i) = gb * inv_n;
    }
  }
  return total * inv_n;
}

/// Mean over points of ||T_i - F_C,i||_2.
template <class T>
T dist_loss(const Matrix<T>& resultant, const Matrix<T>& target, Matrix<T>* grad = nullptr) {
  detail::check_rows(resultant, target, "dist_loss");
  const Eigen::Index n = resultant.rows();
  if (n == 0) throw DataError("dist_loss: empty prediction");
  const T inv_n = T(1) / static_cast<T>(n);
  if (grad) *grad = Matrix<T>::Zero(n, 3);
  T total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Matrix<T, 1, 3> d = target.row(i) - resultant.row(i);
    const T r = d.norm();
    total += r;
    // Subgradient 0 at the kink.
    if (grad && r > T(0)) grad->row(i) = -d / r * inv_n;
  }
  return total * inv_n;
}

/// Negative mean of eps-regularized cosine similarity between target and F_C.
template <class T>
T dir_loss(const Matrix<T>& resultant, const Matrix<T>& target, double epsilon, Matrix<T>* grad = nullptr) {
  detail::check_rows(resultant, target, "dir_loss");
  const Eigen::Index n = resultant.rows();
  if (n == 0) throw DataError("dir_loss: empty prediction");
  const T eps = static_cast<T>(epsilon);
  const T inv_n = T(1) / static_cast<T>(n);
  if (grad) *grad = Matrix<T>::Zero(n, 3);
  T total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Matrix<T, 1, 3> u = target.row(i) / (target.row(i).norm() + eps);
    const Eigen::Matrix<T, 1, 3> c = resultant.row(i);
    const T r = c.norm();
    const T dc = r + eps;
    const T uc = u.dot(c);
    total += uc / dc;
    if (grad) {
      Eigen::Matrix<T, 1, 3> g = u / dc;
      if (r > T(0)) g -= uc * c / (r * dc * dc);
      grad->row(i) = -g * inv_n;
    }
  }
  return -total * inv_n;
}

template <class T>
struct LossBreakdown {
  T dist = 0;
  T dir = 0;
  T sym = 0;
  T total = 0;
};

/// L_dist + L_dir + L_sym with the gradient routed to both force heads.
template <class T>
LossBreakdown<T> combined_loss(const ForcePrediction<T>& pred, const Matrix<T>& target, const LossConfig& cfg,
                               LossGrad<T>* grad = nullptr) {
  cfg.validate();
  LossBreakdown<T> out;
  Matrix<T> g_dist;
  Matrix<T> g_dir;
  out.dist = dist_loss<T>(pred.resultant, target, grad ? &g_dist : nullptr);
  out.dir = dir_loss<T>(pred.resultant, target, cfg.epsilon, grad ? &g_dir : nullptr);
  out.sym = sym_loss<T>(pred, cfg.epsilon, grad);
  out.total = out.dist + out.dir + out.sym;
  if (grad) {
    const Matrix<T> g_res = g_dist + g_dir;
    grad->external += g_res;
    grad->internal += g_res;
  }
  return out;
}

}  // namespace mc4ad
