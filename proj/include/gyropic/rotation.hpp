#pragma once

#include <cmath>

#include <gyropic/types.hpp>

// Rotation algebra for the magnetic cross-product matrix: hat(B) y = y x B,
// its exponential (the gyrorotation over a step) and the integrated
// exponential that enters the position update.

namespace gyropic {

inline Matrix3 hat(const Vector3& B) {
  Matrix3 H;
  H << 0.0, B.z(), -B.y(),
      -B.z(), 0.0, B.x(),
      B.y(), -B.x(), 0.0;
  return H;
}

namespace detail {

// Coefficients c1 = sin(u)/u, c2 = (1-cos u)/u^2, c3 = (u-sin u)/u^3 with
// u = s|B|. Below the threshold the trig forms cancel badly, so a four-term
// Taylor series in u^2 is used instead (truncation ~ u^8 < 1e-32).
struct ExpFactors {
  Real c1, c2, c3;
};

constexpr Real kSeriesThreshold = 1e-4;

inline ExpFactors exp_factors(Real u) {
  ExpFactors f;
  if (u < kSeriesThreshold) {
    const Real q = u * u;
    f.c1 = 1.0 - q / 6.0 * (1.0 - q / 20.0 * (1.0 - q / 42.0));
    f.c2 = 0.5 - q / 24.0 * (1.0 - q / 30.0 * (1.0 - q / 56.0));
    f.c3 = 1.0 / 6.0 - q / 120.0 * (1.0 - q / 42.0 * (1.0 - q / 72.0));
  } else {
    const Real su = std::sin(u);
    const Real cu = std::cos(u);
    f.c1 = su / u;
    f.c2 = (1.0 - cu) / (u * u);
    f.c3 = (u - su) / (u * u * u);
  }
  return f;
}

}  // namespace detail

// e^{s hat(B)} in closed form via hat(B)^3 = -|B|^2 hat(B).
inline Matrix3 rot_exp(const Vector3& B, Real s) {
  const Real b = B.norm();
  const Matrix3 H = hat(B);
  const detail::ExpFactors f = detail::exp_factors(s * b);
  return Matrix3::Identity() + (s * f.c1) * H + (s * s * f.c2) * (H * H);
}

// int_0^s e^{sigma hat(B)} dsigma, same two-branch structure.
inline Matrix3 rot_exp_integral(const Vector3& B, Real s) {
  const Real b = B.norm();
  const Matrix3 H = hat(B);
  const detail::ExpFactors f = detail::exp_factors(s * b);
  return s * Matrix3::Identity() + (s * s * f.c2) * H +
         (s * s * s * f.c3) * (H * H);
}

}  // namespace gyropic
