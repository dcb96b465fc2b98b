#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include <gyropic/types.hpp>

namespace gyropic {

// Particle shape function: even, unit mass, supported in [-1,1]^3.
// moment_order k is the first order at which a moment fails to vanish
// (k = 2 for any even shape with finite second moments).
// octahedral marks invariance under coordinate permutations and sign flips;
// the kernel cache and the far-field moment correction require it.
// Custom shapes must be smooth on each closed octant of the support cube.
struct ShapeSpec {
  std::function<Real(const Vector3&)> value;
  int moment_order = 2;
  bool octahedral = false;
  std::string name;

  static ShapeSpec tent() {
    ShapeSpec s;
    s.value = [](const Vector3& u) -> Real {
      Real v = 1.0;
      for (int a = 0; a < 3; ++a) {
        const Real t = 1.0 - std::abs(u[a]);
        if (t <= 0.0) return 0.0;
        v *= t;
      }
      return v;
    };
    s.moment_order = 2;
    s.octahedral = true;
    s.name = "tent";
    return s;
  }

  static ShapeSpec custom(std::function<Real(const Vector3&)> fn,
                          int moment_order, bool octahedral,
                          std::string name = "custom") {
    ShapeSpec s;
    s.value = std::move(fn);
    s.moment_order = moment_order;
    s.octahedral = octahedral;
    s.name = std::move(name);
    return s;
  }
};

inline Real shape_value(const ShapeSpec& spec, const Vector3& u) {
  if ((u.cwiseAbs().array() >= 1.0).any()) return 0.0;
  return spec.value(u);
}

// zeta_r(u) = r^-3 zeta(u/r), supported in [-r,r]^3.
inline Real scaled_shape(const ShapeSpec& spec, Real r, const Vector3& u) {
  return shape_value(spec, u / r) / (r * r * r);
}

}  // namespace gyropic
