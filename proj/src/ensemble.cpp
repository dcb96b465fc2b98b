#include <gyropic/ensemble.hpp>

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace gyropic {

namespace {

// Cells along one axis; the extent must be an integer multiple of the width.
int axis_cells(Real lo, Real hi, Real width, const char* what) {
  const Real extent = hi - lo;
  if (!(width > 0.0) || !(extent > 0.0))
    throw std::invalid_argument(std::string("init_grid: nonpositive ") + what);
  const Real ratio = extent / width;
  const long long n = std::llround(ratio);
  if (n < 1 || std::abs(ratio - static_cast<Real>(n)) > 1e-9 * ratio)
    throw std::invalid_argument(
        std::string("init_grid: extent not a multiple of ") + what);
  return static_cast<int>(n);
}

}  // namespace

Ensemble init_grid(const PhaseGridSpec& spec, const DensityFn& f0,
                   bool prune_zeros) {
  int nx[3], nv[3];
  for (int a = 0; a < 3; ++a) {
    nx[a] = axis_cells(spec.xbounds.lo[a], spec.xbounds.hi[a], spec.dx[a],
                       "position cell width");
    nv[a] = axis_cells(spec.vbounds.lo[a], spec.vbounds.hi[a], spec.dv[a],
                       "velocity cell width");
  }
  const Real cell_vol = spec.dx.prod() * spec.dv.prod();
  Ensemble ens;
  const size_t total = static_cast<size_t>(nx[0]) * nx[1] * nx[2] * nv[0] *
                       nv[1] * nv[2];
  ens.X.reserve(total);
  ens.V.reserve(total);
  ens.alpha.reserve(total);
  for (int i0 = 0; i0 < nx[0]; ++i0)
    for (int i1 = 0; i1 < nx[1]; ++i1)
      for (int i2 = 0; i2 < nx[2]; ++i2) {
        const Vector3 xc =
            spec.xbounds.lo +
            Vector3((i0 + 0.5) * spec.dx[0], (i1 + 0.5) * spec.dx[1],
                    (i2 + 0.5) * spec.dx[2]);
        for (int j0 = 0; j0 < nv[0]; ++j0)
          for (int j1 = 0; j1 < nv[1]; ++j1)
            for (int j2 = 0; j2 < nv[2]; ++j2) {
              const Vector3 vc =
                  spec.vbounds.lo +
                  Vector3((j0 + 0.5) * spec.dv[0], (j1 + 0.5) * spec.dv[1],
                          (j2 + 0.5) * spec.dv[2]);
              const Real val = f0(xc, vc);
              if (!std::isfinite(val))
                throw std::invalid_argument(
                    "init_grid: density not finite at a cell center");
              if (prune_zeros && val == 0.0) continue;
              ens.X.push_back(xc);
              ens.V.push_back(vc);
              ens.alpha.push_back(val * cell_vol);
            }
      }
  return ens;
}

Real weak_pair(const Ensemble& ens, const ObservableFn& psi) {
  Real acc = 0.0;
  for (size_t j = 0; j < ens.size(); ++j)
    acc += ens.alpha[j] * psi(ens.X[j], ens.V[j]);
  return acc;
}

Moments moments(const Ensemble& ens) {
  Moments m;
  for (size_t j = 0; j < ens.size(); ++j) {
    m.mass += ens.alpha[j];
    m.momentum += ens.alpha[j] * ens.V[j];
    m.kinetic += 0.5 * ens.alpha[j] * ens.V[j].squaredNorm();
  }
  return m;
}

void write_ensemble_csv(const Ensemble& ens, std::ostream& out) {
  out << "j,x1,x2,x3,v1,v2,v3,alpha\n";
  out << std::setprecision(17);
  for (size_t j = 0; j < ens.size(); ++j) {
    out << j << ',' << ens.X[j].x() << ',' << ens.X[j].y() << ','
        << ens.X[j].z() << ',' << ens.V[j].x() << ',' << ens.V[j].y() << ','
        << ens.V[j].z() << ',' << ens.alpha[j] << '\n';
  }
}

}  // namespace gyropic
