#pragma once

#include <Eigen/Dense>

namespace rodeo {

/// [0,1] pixel range -> [-1,1] model range.
inline Eigen::MatrixXd to_model_space(const Eigen::MatrixXd& unit) { return unit.array() * 2.0 - 1.0; }

/// [-1,1] model range -> [0,1], clamped.
inline Eigen::MatrixXd to_unit_space(const Eigen::MatrixXd& model) {
  return ((model.array() + 1.0) * 0.5).cwiseMax(0.0).cwiseMin(1.0);
}

/// Projects x_adv onto {|x_adv - x|_inf <= eps} intersected with [0,1].
inline Eigen::MatrixXd project_linf_box(const Eigen::MatrixXd& x_adv, const Eigen::MatrixXd& x, double eps) {
  return x_adv.array().max(x.array() - eps).min(x.array() + eps).max(0.0).min(1.0).matrix();
}

}  // namespace rodeo
