#include <gyropic/kernel.hpp>

#include <gyropic/ensemble.hpp>

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <thread>
#include <vector>

#include <gyropic/quadrature.hpp>

namespace gyropic {

namespace {

constexpr Real kC = 0.079577471545947668;  // 1/(4 pi)
// Relative accuracy claimed for the plain-Coulomb far shortcut (cached mode).
constexpr Real kFarCertTol = 1e-6;

inline Vector3 ktilde(const Vector3& v) {
  const Real n2 = v.squaredNorm();
  return (kC / (n2 * std::sqrt(n2))) * v;
}

Real dist_to_box(const Vector3& p, const Box3& b) {
  Real d2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    const Real d = std::max({b.lo[a] - p[a], Real(0), p[a] - b.hi[a]});
    d2 += d * d;
  }
  return std::sqrt(d2);
}

template <class F>
Vector3 tensor_gauss_n(F&& f, const Box3& box, int n) {
  switch (n) {
    case 3:
      return tensor_gauss<3>(f, box);
    case 5:
      return tensor_gauss<5>(f, box);
    case 6:
      return tensor_gauss<6>(f, box);
    case 12:
      return tensor_gauss<12>(f, box);
    default:
      return tensor_gauss<8>(f, box);
  }
}

struct QuadControls {
  int gl_smooth = 8;
  int gl_duffy = 8;
  Real gamma = 0.9;   // refine while dist(p, cell) < gamma * max extent
  int max_depth = 48;
};

QuadControls refined_controls() {
  QuadControls c;
  c.gl_smooth = 12;
  c.gl_duffy = 12;
  c.gamma = 1.35;
  c.max_depth = 52;
  return c;
}

// Grid-node fills only need ~1e-8 relative accuracy (the interpolation gate
// is 1e-5), so they run with lighter leaves than the exact public pipeline.
// Validation probes still use the full-accuracy pipeline.
QuadControls node_fill_controls() {
  QuadControls c;
  c.gl_smooth = 6;
  c.gl_duffy = 8;
  c.gamma = 0.55;
  c.max_depth = 48;
  return c;
}

// Dyadic panel boundaries 0 < xstar < 2 xstar < ... <= 1 for the transverse
// Duffy coordinates. On an anisotropic box the transformed integrand has an
// unresolved peak of width ~ e_short / e_long at the origin; geometric panels
// starting at that scale restore spectral convergence panel by panel.
inline std::vector<Real> dyadic_panels(Real xstar) {
  if (xstar >= 0.5) return {0.0, 1.0};
  xstar = std::max(xstar, std::ldexp(Real(1), -24));
  std::vector<Real> b{0.0, xstar};
  while (2.0 * b.back() < 0.5) b.push_back(2.0 * b.back());
  b.push_back(1.0);
  return b;
}

// Three Duffy pyramids covering a box with the integrand's singular point at
// one corner. The map v_a = e_a t, v_b = e_b t q, v_c = e_c t w has Jacobian
// (prod e) t^2, which cancels the 1/|v|^2 kernel growth; t stays smooth on
// [0,1] while q and w get anisotropy-graded composite panels.
template <int N, class F>
Vector3 duffy_impl(const F& f, const Box3& box, const Vector3& corner) {
  const Vector3 e = box.extent();
  Vector3 delta, base;
  for (int a = 0; a < 3; ++a) {
    const bool at_lo =
        std::abs(corner[a] - box.lo[a]) <= std::abs(corner[a] - box.hi[a]);
    delta[a] = at_lo ? 1.0 : -1.0;
    base[a] = at_lo ? box.lo[a] : box.hi[a];
  }
  const auto& nodes = GaussLegendre<N>::nodes;
  const auto& wts = GaussLegendre<N>::weights;
  Vector3 acc = Vector3::Zero();
  for (int pa = 0; pa < 3; ++pa) {
    const int pb = (pa + 1) % 3, pc = (pa + 2) % 3;
    const std::vector<Real> qb = dyadic_panels(e[pa] / e[pb]);
    const std::vector<Real> wb = dyadic_panels(e[pa] / e[pc]);
    for (size_t qp = 0; qp + 1 < qb.size(); ++qp)
      for (size_t wp = 0; wp + 1 < wb.size(); ++wp) {
        const Real qm = 0.5 * (qb[qp] + qb[qp + 1]);
        const Real qh = 0.5 * (qb[qp + 1] - qb[qp]);
        const Real wm = 0.5 * (wb[wp] + wb[wp + 1]);
        const Real wh = 0.5 * (wb[wp + 1] - wb[wp]);
        for (int i = 0; i < N; ++i) {
          const Real t = 0.5 * (nodes[i] + 1.0);
          for (int j = 0; j < N; ++j) {
            const Real q = qm + qh * nodes[j];
            for (int k = 0; k < N; ++k) {
              const Real w = wm + wh * nodes[k];
              Vector3 v;
              v[pa] = e[pa] * t;
              v[pb] = e[pb] * t * q;
              v[pc] = e[pc] * t * w;
              const Real W =
                  0.5 * qh * wh * wts[i] * wts[j] * wts[k] * t * t;
              acc += W * f(base + delta.cwiseProduct(v));
            }
          }
        }
      }
  }
  return acc * e.prod();
}

template <class F>
Vector3 duffy_box(const F& f, const Box3& box, const Vector3& corner, int n) {
  if (n >= 12) return duffy_impl<12>(f, box, corner);
  return duffy_impl<8>(f, box, corner);
}

// Exact evaluator for the scale-free profile G(s) = int K(s - u) zeta(u) du.
// The support cube is cut at the octant planes and at the singular point's
// coordinates, so every resulting box either has the singularity at an exact
// corner (Duffy pyramids) or at a strictly positive distance
// (distance-graded octree with plain tensor Gauss leaves).
class ProfileQuad {
 public:
  ProfileQuad(const ShapeSpec* shape, QuadControls qc)
      : shape_(shape), qc_(qc) {}

  Vector3 eval(const Vector3& s) const {
    const auto f = [&](const Vector3& u) -> Vector3 {
      return ktilde(s - u) * shape_value(*shape_, u);
    };
    std::array<std::vector<Real>, 3> bps;
    for (int a = 0; a < 3; ++a) {
      bps[a] = {-1.0, 0.0, 1.0};
      if (std::abs(s[a]) < 1.0 - 1e-12) {
        bool dup = false;
        for (Real b : bps[a]) dup = dup || std::abs(b - s[a]) <= 1e-12;
        if (!dup) bps[a].push_back(s[a]);
      }
      std::sort(bps[a].begin(), bps[a].end());
    }
    Vector3 total = Vector3::Zero();
    for (size_t i = 0; i + 1 < bps[0].size(); ++i)
      for (size_t j = 0; j + 1 < bps[1].size(); ++j)
        for (size_t k = 0; k + 1 < bps[2].size(); ++k) {
          const Box3 cell{Vector3(bps[0][i], bps[1][j], bps[2][k]),
                          Vector3(bps[0][i + 1], bps[1][j + 1], bps[2][k + 1])};
          if (cell.extent().minCoeff() <= 1e-13) continue;
          bool corner = true;
          for (int a = 0; a < 3; ++a)
            corner = corner && std::min(std::abs(s[a] - cell.lo[a]),
                                        std::abs(s[a] - cell.hi[a])) <= 1e-12;
          if (corner)
            total += duffy_box(f, cell, s, qc_.gl_duffy);
          else
            total += octree(f, cell, s, 0);
        }
    return total;
  }

 private:
  template <class F>
  Vector3 octree(const F& f, const Box3& cell, const Vector3& p,
                 int depth) const {
    const Real ext = cell.extent().maxCoeff();
    if (dist_to_box(p, cell) >= qc_.gamma * ext || depth >= qc_.max_depth ||
        ext <= 1e-12)
      return tensor_gauss_n(f, cell, qc_.gl_smooth);
    Vector3 acc = Vector3::Zero();
    for (const Box3& kid : split_octants(cell))
      acc += octree(f, kid, p, depth + 1);
    return acc;
  }

  const ShapeSpec* shape_;
  QuadControls qc_;
};

// Signed-permutation canonicalization. Octahedral shapes give a fully
// equivariant profile, so queries are folded to sorted nonnegative
// coordinates; even shapes always give an odd profile, so at least the
// global sign can be folded. Folding makes oddness and equivariance exact
// in floating point, not just up to quadrature error.
struct Canon {
  std::array<int, 3> perm{0, 1, 2};  // sc[m] = fold(s)[perm[m]]
  Vector3 sign{1.0, 1.0, 1.0};
  Vector3 sc;
  bool octahedral = false;
};

Canon canonicalize(const Vector3& s, bool octahedral) {
  Canon c;
  c.octahedral = octahedral;
  if (octahedral) {
    Vector3 a;
    for (int axis = 0; axis < 3; ++axis) {
      a[axis] = std::abs(s[axis]);
      c.sign[axis] = (s[axis] < 0.0) ? -1.0 : 1.0;
    }
    auto& p = c.perm;
    if (a[p[0]] < a[p[1]]) std::swap(p[0], p[1]);
    if (a[p[1]] < a[p[2]]) std::swap(p[1], p[2]);
    if (a[p[0]] < a[p[1]]) std::swap(p[0], p[1]);
    c.sc = Vector3(a[p[0]], a[p[1]], a[p[2]]);
  } else {
    Real flip = 1.0;
    for (int axis = 0; axis < 3; ++axis) {
      if (s[axis] != 0.0) {
        flip = (s[axis] > 0.0) ? 1.0 : -1.0;
        break;
      }
    }
    c.sign = Vector3(flip, flip, flip);
    c.sc = flip * s;
  }
  return c;
}

Vector3 uncanonicalize(const Canon& c, const Vector3& g) {
  Vector3 out;
  for (int m = 0; m < 3; ++m) {
    // Per-axis oddness: a component on its mirror plane vanishes exactly,
    // so quadrature noise there is clipped rather than propagated.
    out[c.perm[m]] = (c.octahedral && c.sc[m] == 0.0)
                         ? 0.0
                         : c.sign[c.perm[m]] * g[m];
  }
  return out;
}

size_t tet_index(int a, int b, int c) {
  return size_t(a) * (a + 1) * (a + 2) / 6 + size_t(b) * (b + 1) / 2 +
         size_t(c);
}

// One lookup-grid level: values of G on the sorted-nonnegative wedge of the
// lattice h * Z^3, exploiting the 48-fold octahedral symmetry.
struct Level {
  Real h = 0.0;
  int n = 0;           // max lattice index per axis
  Real serve_max = 0;  // queries with |s|_inf <= serve_max use this level
  int skip_below = 0;  // wedge nodes with leading index below this stay unset
  std::vector<Vector3> wedge;

  Vector3 fetch(int i, int j, int k) const {
    int sgn[3] = {1, 1, 1};
    int a[3] = {i, j, k};
    for (int axis = 0; axis < 3; ++axis)
      if (a[axis] < 0) {
        a[axis] = -a[axis];
        sgn[axis] = -1;
      }
    int p[3] = {0, 1, 2};
    if (a[p[0]] < a[p[1]]) std::swap(p[0], p[1]);
    if (a[p[1]] < a[p[2]]) std::swap(p[1], p[2]);
    if (a[p[0]] < a[p[1]]) std::swap(p[0], p[1]);
    const Vector3& g = wedge[tet_index(a[p[0]], a[p[1]], a[p[2]])];
    assert(!std::isnan(g.x()));
    Vector3 out;
    for (int m = 0; m < 3; ++m) out[p[m]] = g[m];
    for (int axis = 0; axis < 3; ++axis) out[axis] *= sgn[axis];
    return out;
  }
};

void cubic_weights(Real xi, Real w[4]) {
  w[0] = -xi * (xi - 1.0) * (xi - 2.0) / 6.0;
  w[1] = (xi + 1.0) * (xi - 1.0) * (xi - 2.0) * 0.5;
  w[2] = -(xi + 1.0) * xi * (xi - 2.0) * 0.5;
  w[3] = (xi + 1.0) * xi * (xi - 1.0) / 6.0;
}

Vector3 level_interp(const Level& L, const Vector3& sc) {
  int i0[3];
  Real w[3][4];
  for (int a = 0; a < 3; ++a) {
    const Real q = sc[a] / L.h;
    i0[a] = static_cast<int>(std::floor(q));
    cubic_weights(q - i0[a], w[a]);
  }
  Vector3 acc = Vector3::Zero();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k)
        acc += (w[0][i] * w[1][j] * w[2][k]) *
               L.fetch(i0[0] - 1 + i, i0[1] - 1 + j, i0[2] - 1 + k);
  return acc;
}

Real octant_mass(const ShapeSpec& shape) {
  Real mass = 0.0;
  for (const Box3& oct :
       split_octants(Box3{Vector3(-1, -1, -1), Vector3(1, 1, 1)}))
    mass += tensor_gauss_scalar<12>(
        [&](const Vector3& u) { return shape_value(shape, u); }, oct);
  return mass;
}

void validate_shape(const ShapeSpec& shape) {
  if (!shape.value) throw std::invalid_argument("shape has no value function");
  const Real mass = octant_mass(shape);
  if (std::abs(mass - 1.0) > 1e-10)
    throw std::invalid_argument("shape mass " + std::to_string(mass) +
                                " is not 1");
  std::mt19937_64 rng(0x5ca1eULL);
  std::uniform_real_distribution<Real> u(-0.999, 0.999);
  for (int i = 0; i < 64; ++i) {
    const Vector3 p(u(rng), u(rng), u(rng));
    const Real a = shape_value(shape, p), b = shape_value(shape, -p);
    if (std::abs(a - b) > 1e-12 * std::max(Real(1), std::abs(a)))
      throw std::invalid_argument("shape is not even");
    if (shape.octahedral) {
      const Vector3 perms[] = {{p.y(), p.x(), p.z()},
                               {p.z(), p.y(), p.x()},
                               {p.x(), -p.z(), p.y()}};
      for (const Vector3& pp : perms)
        if (std::abs(shape_value(shape, pp) - a) >
            1e-12 * std::max(Real(1), std::abs(a)))
          throw std::invalid_argument("shape is not octahedral as declared");
    }
  }
}

}  // namespace

Vector3 coulomb_kernel(const Vector3& x, const Vector3& y) {
  return ktilde(x - y);
}

struct KernelEval::Impl {
  ShapeSpec shape;
  Real r;
  KernelEvalOptions opt;
  ProfileQuad quad;

  // Fourth-moment far-field data (octahedral shapes only). The second-moment
  // term of the moment expansion vanishes identically: the Coulomb kernel's
  // components are harmonic away from the source and an octahedral shape has
  // an isotropic second moment.
  bool have_corr4 = false;
  Real corr4_coef = 0.0;  // (m4 - 3 m22) / 24
  Real s_plain = 0.0;     // plain Coulomb certified beyond this |s|

  bool cache_on = false;
  Real interior_limit = 0.0;  // below this |s|_inf cached mode stays exact
  Level lv1, lv2;
  Real cache_err = 0.0;

  Impl(ShapeSpec sh, Real rr, KernelEvalOptions o)
      : shape(std::move(sh)), r(rr), opt(o), quad(&shape, QuadControls{}) {
    if (!(r > 0.0)) throw std::invalid_argument("mollification radius r <= 0");
    validate_shape(shape);
    if (shape.octahedral) setup_far_field();
    if (opt.use_cache) {
      if (!shape.octahedral)
        throw std::invalid_argument(
            "lookup-grid mode requires an octahedral shape");
      build_cache();
    }
  }

  void setup_far_field() {
    Real m4 = 0.0, m22 = 0.0;
    for (const Box3& oct :
         split_octants(Box3{Vector3(-1, -1, -1), Vector3(1, 1, 1)})) {
      m4 += tensor_gauss_scalar<12>(
          [&](const Vector3& u) {
            return std::pow(u.x(), 4) * shape_value(shape, u);
          },
          oct);
      m22 += tensor_gauss_scalar<12>(
          [&](const Vector3& u) {
            return u.x() * u.x() * u.y() * u.y() * shape_value(shape, u);
          },
          oct);
    }
    corr4_coef = (m4 - 3.0 * m22) / 24.0;
    have_corr4 = true;
    // |corr| <= |coef| * 1680 c / rho^6 against |K| = c / rho^2.
    s_plain = std::ceil(std::pow(std::abs(corr4_coef) * 1680.0 / kFarCertTol,
                                 0.25));
    s_plain = std::max(s_plain, Real(10));
  }

  Vector3 corr4(const Vector3& s) const {
    const Real rho2 = s.squaredNorm();
    const Real rho = std::sqrt(rho2);
    const Real r7 = std::pow(rho, 7);
    const Real sigma4 = std::pow(s.x(), 4) + std::pow(s.y(), 4) +
                        std::pow(s.z(), 4);
    Vector3 out;
    for (int a = 0; a < 3; ++a) {
      const Real si = s[a];
      out[a] = corr4_coef * kC *
               (-315.0 * si / r7 - 420.0 * si * si * si / (r7 * rho2) +
                945.0 * sigma4 * si / (r7 * rho2 * rho2));
    }
    return out;
  }

  // --- lookup grid -------------------------------------------------------

  void build_level(Level& L, Real h, int n, Real serve_max, int skip_below) {
    L.h = h;
    L.n = n;
    L.serve_max = serve_max;
    L.skip_below = skip_below;
    L.wedge.assign(tet_index(n, n, n) + 1,
                   Vector3::Constant(std::numeric_limits<Real>::quiet_NaN()));
    struct Node {
      int i1, i2, i3;
    };
    std::vector<Node> jobs;
    jobs.reserve(L.wedge.size());
    for (int i1 = 0; i1 <= n; ++i1) {
      if (i1 < skip_below) continue;
      for (int i2 = 0; i2 <= i1; ++i2)
        for (int i3 = 0; i3 <= i2; ++i3) jobs.push_back({i1, i2, i3});
    }
    int nthreads = opt.construction_threads > 0
                       ? opt.construction_threads
                       : static_cast<int>(std::thread::hardware_concurrency());
    nthreads = std::max(1, std::min<int>(nthreads, 64));
    const ProfileQuad fill(&shape, node_fill_controls());
    auto worker = [&](size_t begin, size_t end) {
      for (size_t m = begin; m < end; ++m) {
        const Node nd = jobs[m];
        const Vector3 s(h * nd.i1, h * nd.i2, h * nd.i3);
        L.wedge[tet_index(nd.i1, nd.i2, nd.i3)] = fill.eval(s);
      }
    };
    if (nthreads == 1) {
      worker(0, jobs.size());
    } else {
      std::vector<std::thread> pool;
      const size_t chunk = (jobs.size() + nthreads - 1) / nthreads;
      for (int t = 0; t < nthreads; ++t) {
        const size_t b = std::min(jobs.size(), t * chunk);
        const size_t e = std::min(jobs.size(), b + chunk);
        if (b < e) pool.emplace_back(worker, b, e);
      }
      for (auto& th : pool) th.join();
    }
  }

  Vector3 cached_profile(const Vector3& sc) const {
    const Real q0 = sc[0];
    if (q0 < interior_limit) return quad.eval(sc);
    if (q0 <= lv1.serve_max) return level_interp(lv1, sc);
    if (q0 <= lv2.serve_max) return level_interp(lv2, sc);
    if (sc.norm() <= s_plain) return ktilde(sc) + corr4(sc);
    return ktilde(sc);
  }

  Real probe_rel(const Vector3& s_any) const {
    const Vector3 sc = canonicalize(s_any, true).sc;
    const Vector3 got = cached_profile(sc);
    const Vector3 want = quad.eval(sc);
    const Real rho2 = sc.squaredNorm();
    return (got - want).norm() / (want.norm() + 1e-3 * kC / (1.0 + rho2));
  }

  void build_cache() {
    // Cubic stencils on a 1/ rho^2 profile have relative error ~ C h^4 /
    // rho^4, so the h = 1/8 level only meets the validation gate from rho
    // ~ 4 outward; the fine level carries everything closer in.
    const Real h1 = 1.0 / 32.0, h2 = 1.0 / 8.0;
    build_level(lv1, h1, 144, 4.40625, 30);
    build_level(lv2, h2, 67, 8.125, 33);

    std::mt19937_64 rng(0xcac4eULL);
    std::uniform_real_distribution<Real> uu(-1.0, 1.0);
    auto dir_inf = [&]() {
      Vector3 d(uu(rng), uu(rng), uu(rng));
      const Real m = d.cwiseAbs().maxCoeff();
      return (m > 1e-3) ? Vector3(d / m) : Vector3(1, 0, 0);
    };

    // Seam ring first: tent-like shapes are only C^2 near |s|_inf = 1, where
    // cubic interpolation may miss the gate; widen the exact-interior zone
    // until the seam probes pass.
    const std::array<int, 5> margins = {1, 3, 6, 12, 24};
    Real seam_err = 0.0;
    bool ok = false;
    for (int m : margins) {
      interior_limit = 1.0 + m * h1;
      seam_err = 0.0;
      std::mt19937_64 seam_rng(0x5ea3ULL);
      std::uniform_real_distribution<Real> sp(0.0, 1.0);
      for (int i = 0; i < 40; ++i) {
        const Real rho_inf = interior_limit + 5.0 * h1 * sp(seam_rng);
        seam_err = std::max(seam_err, probe_rel(rho_inf * dir_inf()));
      }
      if (seam_err <= opt.cache_rel_tol) {
        ok = true;
        break;
      }
    }
    if (!ok)
      throw std::runtime_error(
          "kernel lookup grid failed seam validation, worst rel err " +
          std::to_string(seam_err));
    cache_err = seam_err;

    std::uniform_real_distribution<Real> sh(interior_limit + 0.2, 2.99);
    for (int i = 0; i < 40; ++i)
      cache_err = std::max(cache_err, probe_rel(sh(rng) * dir_inf()));
    std::uniform_real_distribution<Real> so(3.01, 8.05);
    for (int i = 0; i < 40; ++i)
      cache_err = std::max(cache_err, probe_rel(so(rng) * dir_inf()));
    std::uniform_real_distribution<Real> sf(8.2, 12.0);
    for (int i = 0; i < 20; ++i)
      cache_err = std::max(cache_err, probe_rel(sf(rng) * dir_inf()));
    // Certify the plain-Coulomb shortcut just beyond its radius.
    const Vector3 dirs[] = {Vector3(1, 0, 0).normalized(),
                            Vector3(1, 1, 1).normalized(),
                            Vector3(0.2, -0.5, 0.842).normalized()};
    for (const Vector3& d : dirs) {
      const Vector3 s = (s_plain + 1.0) * d.cwiseAbs();
      const Vector3 want = quad.eval(canonicalize(s, true).sc);
      const Real rel = (ktilde(canonicalize(s, true).sc) - want).norm() /
                       want.norm();
      if (rel > 2.0 * kFarCertTol)
        throw std::runtime_error("plain-Coulomb shortcut miscertified");
    }
    if (cache_err > opt.cache_rel_tol)
      throw std::runtime_error(
          "kernel lookup grid failed validation, worst rel err " +
          std::to_string(cache_err));
    cache_on = true;
  }

  // --- evaluation --------------------------------------------------------

  Vector3 profile_pub(const Vector3& s, bool allow_cache) const {
    if (s.x() == 0.0 && s.y() == 0.0 && s.z() == 0.0) return Vector3::Zero();
    const Canon c = canonicalize(s, shape.octahedral);
    const Vector3 g =
        (allow_cache && cache_on) ? cached_profile(c.sc) : quad.eval(c.sc);
    return uncanonicalize(c, g);
  }

  Vector3 kernel(const Vector3& x, const Vector3& y, bool allow_cache) const {
    if (x.x() == y.x() && x.y() == y.y() && x.z() == y.z())
      return Vector3::Zero();
    return profile_pub((x - y) / r, allow_cache) / (r * r);
  }
};

KernelEval::KernelEval(ShapeSpec shape, Real r, KernelEvalOptions opt)
    : impl_(std::make_unique<Impl>(std::move(shape), r, opt)) {}
KernelEval::~KernelEval() = default;
KernelEval::KernelEval(KernelEval&&) noexcept = default;
KernelEval& KernelEval::operator=(KernelEval&&) noexcept = default;

Real KernelEval::r() const { return impl_->r; }
const ShapeSpec& KernelEval::shape() const { return impl_->shape; }
bool KernelEval::cached() const { return impl_->cache_on; }

Vector3 KernelEval::mollified_kernel(const Vector3& x, const Vector3& y) const {
  return impl_->kernel(x, y, true);
}

Vector3 KernelEval::profile(const Vector3& s) const {
  return impl_->profile_pub(s, true);
}

Vector3 KernelEval::profile_exact(const Vector3& s) const {
  return impl_->profile_pub(s, false);
}

Vector3 KernelEval::field_direct(const Vector3& x,
                                 const std::vector<Vector3>& X,
                                 const std::vector<Real>& alpha, Real rho0,
                                 const Box3& domain,
                                 std::ptrdiff_t exclude) const {
  if (X.size() != alpha.size())
    throw std::invalid_argument("field_direct: size mismatch");
  Vector3 acc = Vector3::Zero();
  for (size_t j = 0; j < X.size(); ++j) {
    if (static_cast<std::ptrdiff_t>(j) == exclude) continue;
    acc += alpha[j] * impl_->kernel(x, X[j], true);
  }
  if (rho0 != 0.0) {
    // In displacement coordinates v = x - y the kernel is odd, so its
    // integral over the largest origin-centered cube inside the shifted
    // domain vanishes exactly. Only the remaining shell boxes need
    // quadrature; they sit at distance >= the cube half-width from the
    // singularity, so distance-graded Gauss chunks converge geometrically.
    const Box3 d{x - domain.hi, x - domain.lo};
    const auto m = [&](const Vector3& v) { return impl_->kernel(x, x - v, true); };
    const auto chunk = [&](auto&& self, const Box3& cell, int depth) -> Vector3 {
      const Vector3 ext = cell.extent();
      const Real maxext = ext.maxCoeff();
      if (dist_to_box(Vector3::Zero(), cell) >= 2.0 * maxext || depth >= 40)
        return tensor_gauss<8>(m, cell);
      Vector3 sum = Vector3::Zero();
      bool cut[3];
      for (int a = 0; a < 3; ++a) cut[a] = ext[a] >= 0.5 * maxext;
      for (int o = 0; o < 8; ++o) {
        bool dup = false;
        Box3 kid = cell;
        for (int a = 0; a < 3; ++a) {
          if (!cut[a]) {
            if (o & (1 << a)) dup = true;
            continue;
          }
          const Real mid = 0.5 * (cell.lo[a] + cell.hi[a]);
          if (o & (1 << a))
            kid.lo[a] = mid;
          else
            kid.hi[a] = mid;
        }
        if (!dup) sum += self(self, kid, depth + 1);
      }
      return sum;
    };
    Real sh = std::numeric_limits<Real>::infinity();
    for (int a = 0; a < 3; ++a) sh = std::min({sh, d.hi[a], -d.lo[a]});
    Vector3 bg = Vector3::Zero();
    if (sh <= 0.0) {
      bg = chunk(chunk, d, 0);
    } else {
      Box3 core = d;
      for (int a = 0; a < 3; ++a) {
        Box3 lo = core, hi = core;
        lo.hi[a] = -sh;
        hi.lo[a] = sh;
        if (lo.lo[a] < lo.hi[a]) bg += chunk(chunk, lo, 0);
        if (hi.lo[a] < hi.hi[a]) bg += chunk(chunk, hi, 0);
        core.lo[a] = -sh;
        core.hi[a] = sh;
      }
    }
    acc -= rho0 * bg;
  }
  return acc;
}

Vector3 field_direct(const Ensemble& ens, const KernelEval& ke,
                     const Vector3& x, Real rho0, const Box3& domain) {
  return ke.field_direct(x, ens.X, ens.alpha, rho0, domain);
}

Real KernelEval::quadrature_self_check() const {
  const ProfileQuad refined(&impl_->shape, refined_controls());
  const Vector3 probes[] = {
      {0.3, 0.1, -0.2}, {0.7, 0.7, 0.7}, {0.95, 0.2, 0.1}, {1.5, 0.5, -0.2},
      {2.5, 1.0, 0.3},  {5.0, 2.0, 1.0}, {0.05, 0.02, 0.01},
  };
  Real worst = 0.0;
  for (const Vector3& s : probes) {
    const Vector3 a = impl_->quad.eval(s);
    const Vector3 b = refined.eval(s);
    const Real guard = 1e-3 * kC / (1.0 + s.squaredNorm());
    worst = std::max(worst, (a - b).norm() / (b.norm() + guard));
  }
  return worst;
}

Real KernelEval::cache_validation_error() const { return impl_->cache_err; }

Vector3 mollified_kernel(const ShapeSpec& shape, Real r, const Vector3& x,
                         const Vector3& y) {
  KernelEval ke(shape, r);
  return ke.mollified_kernel(x, y);
}

std::vector<Real> mollification_error(
    const ShapeSpec& shape, const std::function<Real(const Vector3&)>& g,
    const std::vector<Real>& r_values, const Box3& probe_box,
    int probes_per_axis) {
  validate_shape(shape);
  const int n = std::max(1, probes_per_axis);
  const Vector3 ext = probe_box.extent();
  std::vector<Real> out;
  out.reserve(r_values.size());
  const auto octants =
      split_octants(Box3{Vector3(-1, -1, -1), Vector3(1, 1, 1)});
  for (Real r : r_values) {
    Real worst = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          const Vector3 x =
              probe_box.lo + Vector3((i + 0.5) / n * ext.x(),
                                     (j + 0.5) / n * ext.y(),
                                     (k + 0.5) / n * ext.z());
          Real conv = 0.0;
          for (const Box3& oct : octants)
            conv += tensor_gauss_scalar<8>(
                [&](const Vector3& u) {
                  return g(x - r * u) * shape_value(shape, u);
                },
                oct);
          worst = std::max(worst, std::abs(g(x) - conv));
        }
    out.push_back(worst);
  }
  return out;
}

}  // namespace gyropic
