#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include <gyropic/types.hpp>

// Gauss-Legendre tables and small tensor-product helpers shared by the
// kernel, deposit, and line-integral code.

namespace gyropic {

template <int N>
struct GaussLegendre;

template <>
struct GaussLegendre<3> {
  static constexpr std::array<Real, 3> nodes = {-0.7745966692414834, 0.0,
                                                0.7745966692414834};
  static constexpr std::array<Real, 3> weights = {
      0.5555555555555556, 0.8888888888888889, 0.5555555555555556};
};

template <>
struct GaussLegendre<5> {
  static constexpr std::array<Real, 5> nodes = {
      -0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
      0.9061798459386640};
  static constexpr std::array<Real, 5> weights = {
      0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
      0.4786286704993665, 0.2369268850561891};
};

template <>
struct GaussLegendre<6> {
  static constexpr std::array<Real, 6> nodes = {
      -0.9324695142031521, -0.6612093864662645, -0.2386191860831969,
      0.2386191860831969,  0.6612093864662645,  0.9324695142031521};
  static constexpr std::array<Real, 6> weights = {
      0.1713244923791704, 0.3607615730481386, 0.4679139345726910,
      0.4679139345726910, 0.3607615730481386, 0.1713244923791704};
};

template <>
struct GaussLegendre<7> {
  static constexpr std::array<Real, 7> nodes = {
      -0.9491079123427585, -0.7415311855993945, -0.4058451513773972,
      0.0,                 0.4058451513773972,  0.7415311855993945,
      0.9491079123427585};
  static constexpr std::array<Real, 7> weights = {
      0.1294849661688697, 0.2797053914892766, 0.3818300505051189,
      0.4179591836734694, 0.3818300505051189, 0.2797053914892766,
      0.1294849661688697};
};

template <>
struct GaussLegendre<8> {
  static constexpr std::array<Real, 8> nodes = {
      -0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
      -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
      0.7966664774136267,  0.9602898564975363};
  static constexpr std::array<Real, 8> weights = {
      0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
      0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
      0.2223810344533745, 0.1012285362903763};
};

template <>
struct GaussLegendre<12> {
  static constexpr std::array<Real, 12> nodes = {
      -0.9815606342467192, -0.9041172563704749, -0.7699026741943047,
      -0.5873179542866175, -0.3678314989981802, -0.1252334085114689,
      0.1252334085114689,  0.3678314989981802,  0.5873179542866175,
      0.7699026741943047,  0.9041172563704749,  0.9815606342467192};
  static constexpr std::array<Real, 12> weights = {
      0.0471753363865118, 0.1069393259953184, 0.1600783285433462,
      0.2031674267230659, 0.2334925365383548, 0.2491470458134028,
      0.2491470458134028, 0.2334925365383548, 0.2031674267230659,
      0.1600783285433462, 0.1069393259953184, 0.0471753363865118};
};

// Tensor-product Gauss-Legendre over a box; F maps Vector3 -> Vector3.
template <int N, class F>
Vector3 tensor_gauss(F&& f, const Box3& box) {
  const auto& gl = GaussLegendre<N>();
  const Vector3 c = box.center();
  const Vector3 h = 0.5 * box.extent();
  Vector3 acc = Vector3::Zero();
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int k = 0; k < N; ++k) {
        const Vector3 u(c.x() + h.x() * gl.nodes[i], c.y() + h.y() * gl.nodes[j],
                        c.z() + h.z() * gl.nodes[k]);
        acc += (gl.weights[i] * gl.weights[j] * gl.weights[k]) * f(u);
      }
  return acc * (h.prod());
}

template <int N, class F>
Real tensor_gauss_scalar(F&& f, const Box3& box) {
  const auto& gl = GaussLegendre<N>();
  const Vector3 c = box.center();
  const Vector3 h = 0.5 * box.extent();
  Real acc = 0.0;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int k = 0; k < N; ++k) {
        const Vector3 u(c.x() + h.x() * gl.nodes[i], c.y() + h.y() * gl.nodes[j],
                        c.z() + h.z() * gl.nodes[k]);
        acc += (gl.weights[i] * gl.weights[j] * gl.weights[k]) * f(u);
      }
  return acc * (h.prod());
}

inline std::array<Box3, 8> split_octants(const Box3& box) {
  const Vector3 c = box.center();
  std::array<Box3, 8> out;
  for (int o = 0; o < 8; ++o) {
    Vector3 lo = box.lo, hi = box.hi;
    for (int a = 0; a < 3; ++a) {
      if (o & (1 << a))
        lo[a] = c[a];
      else
        hi[a] = c[a];
    }
    out[o] = Box3{lo, hi};
  }
  return out;
}

// Refine-and-compare adaptive rule for smooth-but-structured integrands
// (no point singularity). Error budget is allocated by cell volume.
// abs_tol keeps the budget meaningful when the integral cancels to ~zero.
template <class F>
Vector3 adaptive_box_quadrature(F&& f, const Box3& box, Real rel_tol,
                                Real abs_tol = 0.0, int max_depth = 12) {
  const Real scale = tensor_gauss<5>(f, box).norm() + 1e-300;
  const Real budget = rel_tol * scale + abs_tol;
  Vector3 total = Vector3::Zero();
  Real spilled = 0.0;
  struct Frame {
    Box3 cell;
    Vector3 coarse;
    int depth;
  };
  std::vector<Frame> stack;
  stack.push_back({box, tensor_gauss<3>(f, box), 0});
  while (!stack.empty()) {
    const Frame fr = stack.back();
    stack.pop_back();
    Vector3 fine = Vector3::Zero();
    std::array<Box3, 8> kids = split_octants(fr.cell);
    std::array<Vector3, 8> kid_vals;
    for (int i = 0; i < 8; ++i) {
      kid_vals[i] = tensor_gauss<3>(f, kids[i]);
      fine += kid_vals[i];
    }
    const Real err = (fine - fr.coarse).norm();
    const Real cell_budget = budget * fr.cell.volume() / box.volume();
    if (err <= cell_budget || fr.depth >= max_depth) {
      total += fine;
      if (err > cell_budget) spilled += err;
    } else {
      for (int i = 0; i < 8; ++i)
        stack.push_back({kids[i], kid_vals[i], fr.depth + 1});
    }
  }
  if (spilled > 100.0 * budget)
    throw std::runtime_error("adaptive_box_quadrature: not converged");
  return total;
}

}  // namespace gyropic
