#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include <gyropic/shape.hpp>
#include <gyropic/types.hpp>

namespace gyropic {

// (1/4pi) (x - y) / |x - y|^3.  Requires x != y.
Vector3 coulomb_kernel(const Vector3& x, const Vector3& y);

struct KernelEvalOptions {
  // Build the lookup-grid fast path at construction. The grid is validated
  // against exact quadrature and refined (or rejected) if it misses the gate.
  bool use_cache = false;
  // Convergence gate for the exact quadrature pipeline, checked on probes.
  Real quad_rel_tol = 1e-6;
  // Acceptance gate for lookup-grid interpolation error.
  Real cache_rel_tol = 1e-5;
  // Threads for cache construction; 0 means hardware concurrency.
  int construction_threads = 0;
};

// Evaluator for the mollified kernel K_r = K * zeta_r at fixed (shape, r).
// Exact mode integrates the convolution with singularity-aware quadrature
// (corner Duffy pyramids inside the support, distance-graded octree
// refinement outside). Cached mode interpolates the scale-free profile
// G(s) = r^2 K_r(r s) from a symmetry-reduced cubic lookup grid and switches
// to the analytic far form (Coulomb plus fourth-moment correction) outside
// the grid; plain Coulomb is used only beyond the certified radius.
class KernelEval {
 public:
  KernelEval(ShapeSpec shape, Real r, KernelEvalOptions opt = {});
  ~KernelEval();
  KernelEval(KernelEval&&) noexcept;
  KernelEval& operator=(KernelEval&&) noexcept;

  Real r() const;
  const ShapeSpec& shape() const;
  bool cached() const;

  // K_r(x, y); zero when x == y (odd kernel, even shape).
  Vector3 mollified_kernel(const Vector3& x, const Vector3& y) const;

  // Scale-free profile G(s) = r^2 K_r(x, x - r s), exposed for tests.
  Vector3 profile(const Vector3& s) const;
  Vector3 profile_exact(const Vector3& s) const;

  // sum_j alpha_j K_r(x, X_j) - rho0 int_domain K_r(x, y) dy.
  // exclude skips one source index (self-field exclusion in mesh-free mode).
  Vector3 field_direct(const Vector3& x, const std::vector<Vector3>& X,
                       const std::vector<Real>& alpha, Real rho0,
                       const Box3& domain,
                       std::ptrdiff_t exclude = -1) const;

  // Max relative change of the exact pipeline under one refinement of all
  // quadrature controls, over a fixed probe set. Used by convergence tests.
  Real quadrature_self_check() const;

  // Largest relative interpolation error observed during cache validation.
  Real cache_validation_error() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// One-shot convenience wrapper around an exact-mode evaluator.
Vector3 mollified_kernel(const ShapeSpec& shape, Real r, const Vector3& x,
                         const Vector3& y);

struct Ensemble;

// Mollified field of a weighted particle set with a constant neutralizing
// background over the domain box.
Vector3 field_direct(const Ensemble& ens, const KernelEval& ke,
                     const Vector3& x, Real rho0, const Box3& domain);

// sup_x |g(x) - (g * zeta_r)(x)| over a probe lattice in box, one entry per
// requested r. The convolution is evaluated by per-octant Gauss quadrature.
std::vector<Real> mollification_error(
    const ShapeSpec& shape, const std::function<Real(const Vector3&)>& g,
    const std::vector<Real>& r_values, const Box3& probe_box, int probes_per_axis);

}  // namespace gyropic
