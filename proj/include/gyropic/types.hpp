#pragma once

#include <Eigen/Dense>

namespace gyropic {

using Real = double;
using Vector3 = Eigen::Matrix<Real, 3, 1>;
using Matrix3 = Eigen::Matrix<Real, 3, 3>;
using Vector6 = Eigen::Matrix<Real, 6, 1>;
using Matrix6 = Eigen::Matrix<Real, 6, 6>;
using VectorX = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

// Axis-aligned box, used for spatial domains and quadrature cells.
struct Box3 {
  Vector3 lo{Vector3::Zero()};
  Vector3 hi{Vector3::Zero()};

  Vector3 extent() const { return hi - lo; }
  Vector3 center() const { return 0.5 * (lo + hi); }
  Real volume() const { return extent().prod(); }
  bool contains(const Vector3& x) const {
    return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
  }
};

// Single-particle phase point in the rescaled variables.
struct ParticleState {
  Vector3 z{Vector3::Zero()};
  Vector3 w{Vector3::Zero()};

  Vector6 packed() const {
    Vector6 y;
    y << z, w;
    return y;
  }
  static ParticleState unpack(const Vector6& y) {
    return {y.template head<3>(), y.template tail<3>()};
  }
};

}  // namespace gyropic
