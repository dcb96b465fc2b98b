#pragma once

#include <cmath>
#include <functional>
#include <iosfwd>
#include <vector>

#include <gyropic/types.hpp>

namespace gyropic {

// Phase-space grid: one cell per macro-particle, midpoint-weighted. Extents
// of the bounds must be integer multiples of the cell widths.
struct PhaseGridSpec {
  Vector3 dx{Vector3::Zero()};
  Vector3 dv{Vector3::Zero()};
  Box3 xbounds;
  Box3 vbounds;

  Real beta() const {
    return std::sqrt(dx.squaredNorm() + dv.squaredNorm());
  }
};

// Weighted Dirac-sum representation of the distribution function. Weights
// are set at initialization and never mutated by pushers.
struct Ensemble {
  std::vector<Vector3> X;
  std::vector<Vector3> V;
  std::vector<Real> alpha;

  size_t size() const { return alpha.size(); }
};

struct Moments {
  Real mass = 0.0;
  Vector3 momentum{Vector3::Zero()};
  Real kinetic = 0.0;
};

using DensityFn = std::function<Real(const Vector3& x, const Vector3& v)>;
using ObservableFn = std::function<Real(const Vector3& x, const Vector3& v)>;

// One particle per cell at the cell center, weight f0(center) * cell volume.
// Traversal is row-major over (x1, x2, x3, v1, v2, v3) with the last axis
// fastest, so identical inputs give bit-identical ensembles. Cells with zero
// weight are kept unless prune_zeros is set.
Ensemble init_grid(const PhaseGridSpec& spec, const DensityFn& f0,
                   bool prune_zeros = false);

// Sum over particles of alpha_j psi(X_j, V_j).
Real weak_pair(const Ensemble& ens, const ObservableFn& psi);

Moments moments(const Ensemble& ens);

// Header `j,x1,x2,x3,v1,v2,v3,alpha`, one row per particle, 17 significant
// digits (lossless double round-trip).
void write_ensemble_csv(const Ensemble& ens, std::ostream& out);

}  // namespace gyropic
