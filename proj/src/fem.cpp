#include <gyropic/fem.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <gyropic/quadrature.hpp>

namespace gyropic {

namespace {

using Vector8 = Eigen::Matrix<Real, 8, 1>;
using Matrix8 = Eigen::Matrix<Real, 8, 8>;

// 1D stiffness and mass of the two hat restrictions on an interval of
// length d.
struct Axis1D {
  Real S[2][2];
  Real M[2][2];
};

Axis1D axis_matrices(Real d) {
  Axis1D a;
  a.S[0][0] = a.S[1][1] = 1.0 / d;
  a.S[0][1] = a.S[1][0] = -1.0 / d;
  a.M[0][0] = a.M[1][1] = d / 3.0;
  a.M[0][1] = a.M[1][0] = d / 6.0;
  return a;
}

// Q1 cell stiffness as the tensor sum stiffness x mass x mass over the three
// axes; one matrix serves the whole uniform mesh.
Matrix8 local_stiffness(const Vector3& d) {
  const Axis1D a0 = axis_matrices(d.x());
  const Axis1D a1 = axis_matrices(d.y());
  const Axis1D a2 = axis_matrices(d.z());
  Matrix8 K;
  for (int p = 0; p < 8; ++p)
    for (int q = 0; q < 8; ++q) {
      const int pi = p & 1, pj = (p >> 1) & 1, pk = (p >> 2) & 1;
      const int qi = q & 1, qj = (q >> 1) & 1, qk = (q >> 2) & 1;
      K(p, q) = a0.S[pi][qi] * a1.M[pj][qj] * a2.M[pk][qk] +
                a0.M[pi][qi] * a1.S[pj][qj] * a2.M[pk][qk] +
                a0.M[pi][qi] * a1.M[pj][qj] * a2.S[pk][qk];
    }
  return K;
}

// Trilinear basis values at element-local coordinates u in [0,1]^3; local
// corner l has bit a of l selecting the upper node along axis a.
void basis_at(const Vector3& u, Vector8& N) {
  const Real f[3][2] = {{1.0 - u.x(), u.x()},
                        {1.0 - u.y(), u.y()},
                        {1.0 - u.z(), u.z()}};
  for (int l = 0; l < 8; ++l)
    N[l] = f[0][l & 1] * f[1][(l >> 1) & 1] * f[2][(l >> 2) & 1];
}

void basis_grad_at(const Vector3& u, const Vector3& d,
                   Eigen::Matrix<Real, 8, 3>& G) {
  const Real f[3][2] = {{1.0 - u.x(), u.x()},
                        {1.0 - u.y(), u.y()},
                        {1.0 - u.z(), u.z()}};
  for (int l = 0; l < 8; ++l)
    for (int a = 0; a < 3; ++a) {
      Real v = ((l >> a) & 1) ? 1.0 : -1.0;
      for (int b = 0; b < 3; ++b)
        if (b != a) v *= f[b][(l >> b) & 1];
      G(l, a) = v / d[a];
    }
}

void gather_cell_indices(const MeshSpec& mesh, int c0, int c1, int c2,
                         long long idx[8]) {
  for (int l = 0; l < 8; ++l)
    idx[l] = mesh.interior_index(c0 + (l & 1), c1 + ((l >> 1) & 1),
                                 c2 + ((l >> 2) & 1));
}

struct CellRef {
  int c[3];
  Vector3 u;
};

CellRef locate(const MeshSpec& mesh, const Vector3& x) {
  if (!mesh.box.contains(x))
    throw std::invalid_argument("field evaluation outside the mesh box");
  const Vector3 d = mesh.spacing();
  CellRef ref;
  for (int a = 0; a < 3; ++a) {
    const Real t = (x[a] - mesh.box.lo[a]) / d[a];
    const int c = std::clamp(static_cast<int>(std::floor(t)), 0,
                             mesh.cells[a] - 1);
    ref.c[a] = c;
    ref.u[a] = t - c;
  }
  return ref;
}

Vector8 gather_values(const MeshSpec& mesh, const VectorX& interior, int c0,
                      int c1, int c2) {
  long long idx[8];
  gather_cell_indices(mesh, c0, c1, c2, idx);
  Vector8 v;
  for (int l = 0; l < 8; ++l) v[l] = idx[l] >= 0 ? interior[idx[l]] : 0.0;
  return v;
}

// Per-element Gauss accumulation shared by the error norms.
template <class Accum>
void for_each_gauss_cell(const MeshSpec& mesh, Accum&& accum) {
  const auto& gl = GaussLegendre<3>();
  const Vector3 d = mesh.spacing();
  const Real wvol = d.prod() / 8.0;
  for (int c0 = 0; c0 < mesh.cells[0]; ++c0)
    for (int c1 = 0; c1 < mesh.cells[1]; ++c1)
      for (int c2 = 0; c2 < mesh.cells[2]; ++c2) {
        const Vector3 elem_lo = mesh.node_pos(c0, c1, c2);
        for (int qi = 0; qi < 3; ++qi)
          for (int qj = 0; qj < 3; ++qj)
            for (int qk = 0; qk < 3; ++qk) {
              const Vector3 u(0.5 * (gl.nodes[qi] + 1.0),
                              0.5 * (gl.nodes[qj] + 1.0),
                              0.5 * (gl.nodes[qk] + 1.0));
              const Real w =
                  gl.weights[qi] * gl.weights[qj] * gl.weights[qk] * wvol;
              accum(c0, c1, c2, elem_lo + u.cwiseProduct(d), u, w);
            }
      }
}

}  // namespace

void check_mesh(const MeshSpec& mesh) {
  for (int a = 0; a < 3; ++a) {
    if (mesh.cells[a] < 2)
      throw std::invalid_argument(
          "check_mesh: need at least two cells per axis");
    if (!(mesh.box.extent()[a] > 0.0))
      throw std::invalid_argument("check_mesh: nonpositive box extent");
  }
}

VectorX deposit(const Ensemble& ens, const MeshSpec& mesh,
                const ShapeSpec& shape, Real r, Real rho0,
                DepositStats* stats) {
  check_mesh(mesh);
  if (!(r > 0.0)) throw std::invalid_argument("deposit: r must be positive");
  if (ens.X.size() != ens.size() || ens.V.size() != ens.size())
    throw std::invalid_argument("deposit: ragged ensemble");

  const Vector3 d = mesh.spacing();
  const auto& gl = GaussLegendre<3>();
  VectorX rhs = VectorX::Zero(mesh.interior_count());
  DepositStats st;

  for (size_t j = 0; j < ens.size(); ++j) {
    const Vector3& X = ens.X[j];
    const Real alpha = ens.alpha[j];
    bool outside = false;
    for (int a = 0; a < 3; ++a)
      if (X[a] + r <= mesh.box.lo[a] || X[a] - r >= mesh.box.hi[a])
        outside = true;
    if (outside) {
      st.outside_particles += 1;
      st.clipped += alpha;
      continue;
    }

    int e0[3], e1[3];
    for (int a = 0; a < 3; ++a) {
      e0[a] = std::clamp(
          static_cast<int>(std::floor((X[a] - r - mesh.box.lo[a]) / d[a])), 0,
          mesh.cells[a] - 1);
      e1[a] = std::clamp(
          static_cast<int>(std::floor((X[a] + r - mesh.box.lo[a]) / d[a])), 0,
          mesh.cells[a] - 1);
    }

    Real mass = 0.0;
    for (int c0 = e0[0]; c0 <= e1[0]; ++c0)
      for (int c1 = e0[1]; c1 <= e1[1]; ++c1)
        for (int c2 = e0[2]; c2 <= e1[2]; ++c2) {
          const int c[3] = {c0, c1, c2};
          // Overlap of the element with the support, cut at the shape's
          // center plane so every piece is smooth for the Gauss rule.
          Real seg[3][3];
          int nseg[3];
          Vector3 elem_lo;
          bool skip = false;
          for (int a = 0; a < 3; ++a) {
            elem_lo[a] = mesh.box.lo[a] + c[a] * d[a];
            const Real A = std::max(elem_lo[a], X[a] - r);
            const Real B = std::min(elem_lo[a] + d[a], X[a] + r);
            if (B <= A) {
              skip = true;
              break;
            }
            if (X[a] > A && X[a] < B) {
              seg[a][0] = A;
              seg[a][1] = X[a];
              seg[a][2] = B;
              nseg[a] = 2;
            } else {
              seg[a][0] = A;
              seg[a][1] = B;
              nseg[a] = 1;
            }
          }
          if (skip) continue;

          long long idx8[8];
          gather_cell_indices(mesh, c0, c1, c2, idx8);
          for (int s0 = 0; s0 < nseg[0]; ++s0)
            for (int s1 = 0; s1 < nseg[1]; ++s1)
              for (int s2 = 0; s2 < nseg[2]; ++s2) {
                const Real lo[3] = {seg[0][s0], seg[1][s1], seg[2][s2]};
                const Real hi[3] = {seg[0][s0 + 1], seg[1][s1 + 1],
                                    seg[2][s2 + 1]};
                const Real half[3] = {0.5 * (hi[0] - lo[0]),
                                      0.5 * (hi[1] - lo[1]),
                                      0.5 * (hi[2] - lo[2])};
                const Real mid[3] = {0.5 * (hi[0] + lo[0]),
                                     0.5 * (hi[1] + lo[1]),
                                     0.5 * (hi[2] + lo[2])};
                for (int qi = 0; qi < 3; ++qi)
                  for (int qj = 0; qj < 3; ++qj)
                    for (int qk = 0; qk < 3; ++qk) {
                      const Vector3 x(mid[0] + half[0] * gl.nodes[qi],
                                      mid[1] + half[1] * gl.nodes[qj],
                                      mid[2] + half[2] * gl.nodes[qk]);
                      const Real w = gl.weights[qi] * gl.weights[qj] *
                                     gl.weights[qk] * half[0] * half[1] *
                                     half[2];
                      const Real zeta = scaled_shape(shape, r, x - X);
                      mass += w * zeta;
                      const Vector3 u = (x - elem_lo).cwiseQuotient(d);
                      Vector8 N;
                      basis_at(u, N);
                      for (int l = 0; l < 8; ++l)
                        if (idx8[l] >= 0)
                          rhs[idx8[l]] += alpha * w * zeta * N[l];
                    }
              }
        }
    st.charge += alpha * mass;
    st.clipped += alpha * (1.0 - mass);
  }

  rhs.array() -= rho0 * d.prod();
  st.charge -= rho0 * mesh.box.volume();
  if (stats) *stats = st;
  return rhs;
}

VectorX assemble_rhs(const MeshSpec& mesh,
                     const std::function<Real(const Vector3&)>& density,
                     int subdiv) {
  check_mesh(mesh);
  if (subdiv < 1)
    throw std::invalid_argument("assemble_rhs: subdiv must be positive");

  const Vector3 d = mesh.spacing();
  const Vector3 ds = d / subdiv;
  const auto& gl = GaussLegendre<3>();
  const Real wvol = ds.prod() / 8.0;
  VectorX rhs = VectorX::Zero(mesh.interior_count());

  for (int c0 = 0; c0 < mesh.cells[0]; ++c0)
    for (int c1 = 0; c1 < mesh.cells[1]; ++c1)
      for (int c2 = 0; c2 < mesh.cells[2]; ++c2) {
        const Vector3 elem_lo = mesh.node_pos(c0, c1, c2);
        long long idx8[8];
        gather_cell_indices(mesh, c0, c1, c2, idx8);
        for (int s0 = 0; s0 < subdiv; ++s0)
          for (int s1 = 0; s1 < subdiv; ++s1)
            for (int s2 = 0; s2 < subdiv; ++s2) {
              const Vector3 sub_lo =
                  elem_lo + Vector3(s0 * ds.x(), s1 * ds.y(), s2 * ds.z());
              for (int qi = 0; qi < 3; ++qi)
                for (int qj = 0; qj < 3; ++qj)
                  for (int qk = 0; qk < 3; ++qk) {
                    const Vector3 x =
                        sub_lo +
                        0.5 * Vector3((gl.nodes[qi] + 1.0) * ds.x(),
                                      (gl.nodes[qj] + 1.0) * ds.y(),
                                      (gl.nodes[qk] + 1.0) * ds.z());
                    const Real w = gl.weights[qi] * gl.weights[qj] *
                                   gl.weights[qk] * wvol;
                    const Real rho = density(x);
                    const Vector3 u = (x - elem_lo).cwiseQuotient(d);
                    Vector8 N;
                    basis_at(u, N);
                    for (int l = 0; l < 8; ++l)
                      if (idx8[l] >= 0) rhs[idx8[l]] += w * rho * N[l];
                  }
            }
      }
  return rhs;
}

VectorX apply_stiffness(const MeshSpec& mesh, const VectorX& u) {
  check_mesh(mesh);
  if (u.size() != mesh.interior_count())
    throw std::invalid_argument("apply_stiffness: size mismatch");

  const Matrix8 K = local_stiffness(mesh.spacing());
  VectorX out = VectorX::Zero(u.size());
  for (int c0 = 0; c0 < mesh.cells[0]; ++c0)
    for (int c1 = 0; c1 < mesh.cells[1]; ++c1)
      for (int c2 = 0; c2 < mesh.cells[2]; ++c2) {
        long long idx[8];
        gather_cell_indices(mesh, c0, c1, c2, idx);
        Vector8 v;
        bool any = false;
        for (int l = 0; l < 8; ++l) {
          v[l] = idx[l] >= 0 ? u[idx[l]] : 0.0;
          any = any || v[l] != 0.0;
        }
        if (!any) continue;
        const Vector8 Kv = K * v;
        for (int l = 0; l < 8; ++l)
          if (idx[l] >= 0) out[idx[l]] += Kv[l];
      }
  return out;
}

NodalField solve_poisson(const VectorX& rhs, const MeshSpec& mesh,
                         PoissonReport* report) {
  check_mesh(mesh);
  const long long n = mesh.interior_count();
  if (rhs.size() != n)
    throw std::invalid_argument("solve_poisson: rhs size mismatch");

  NodalField out{mesh, VectorX::Zero(n)};
  PoissonReport rep;
  const Real bnorm = rhs.norm();
  if (bnorm == 0.0) {
    if (report) *report = rep;
    return out;
  }

  // Every interior node is a corner of exactly eight cells, one per local
  // corner type, so the stiffness diagonal is a single constant.
  const Matrix8 K = local_stiffness(mesh.spacing());
  const Real diag = K.diagonal().sum();

  VectorX x = VectorX::Zero(n);
  VectorX res = rhs;
  VectorX z = res / diag;
  VectorX p = z;
  Real rz = res.dot(z);
  const long long cap =
      std::llround(50.0 * std::cbrt(static_cast<Real>(n)) * 10.0);
  const Real tol = 1e-10;

  for (long long it = 1; it <= cap; ++it) {
    const VectorX Ap = apply_stiffness(mesh, p);
    const Real step = rz / p.dot(Ap);
    x += step * p;
    res -= step * Ap;
    const Real rn = res.norm();
    if (rn <= tol * bnorm) {
      rep.iterations = it;
      rep.residual = rn / bnorm;
      out.values = x;
      if (report) *report = rep;
      return out;
    }
    z = res / diag;
    const Real rz_new = res.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }

  std::ostringstream msg;
  msg << "solve_poisson: no convergence within " << cap
      << " iterations, relative residual " << res.norm() / bnorm;
  throw std::runtime_error(msg.str());
}

Real eval_potential(const NodalField& phi, const Vector3& x) {
  const CellRef ref = locate(phi.mesh, x);
  const Vector8 v =
      gather_values(phi.mesh, phi.values, ref.c[0], ref.c[1], ref.c[2]);
  Vector8 N;
  basis_at(ref.u, N);
  return N.dot(v);
}

Vector3 eval_field(const NodalField& phi, const Vector3& x) {
  const CellRef ref = locate(phi.mesh, x);
  const Vector8 v =
      gather_values(phi.mesh, phi.values, ref.c[0], ref.c[1], ref.c[2]);
  Eigen::Matrix<Real, 8, 3> G;
  basis_grad_at(ref.u, phi.mesh.spacing(), G);
  return -(G.transpose() * v);
}

Real l2_error(const NodalField& phi,
              const std::function<Real(const Vector3&)>& exact) {
  Real acc = 0.0;
  for_each_gauss_cell(phi.mesh, [&](int c0, int c1, int c2, const Vector3& x,
                                    const Vector3& u, Real w) {
    const Vector8 v = gather_values(phi.mesh, phi.values, c0, c1, c2);
    Vector8 N;
    basis_at(u, N);
    const Real diff = N.dot(v) - exact(x);
    acc += w * diff * diff;
  });
  return std::sqrt(acc);
}

Real grad_error(const NodalField& phi,
                const std::function<Vector3(const Vector3&)>& exact_grad) {
  const Vector3 d = phi.mesh.spacing();
  Real acc = 0.0;
  for_each_gauss_cell(phi.mesh, [&](int c0, int c1, int c2, const Vector3& x,
                                    const Vector3& u, Real w) {
    const Vector8 v = gather_values(phi.mesh, phi.values, c0, c1, c2);
    Eigen::Matrix<Real, 8, 3> G;
    basis_grad_at(u, d, G);
    const Vector3 diff = G.transpose() * v - exact_grad(x);
    acc += w * diff.squaredNorm();
  });
  return std::sqrt(acc);
}

Real gradient_squared_integral(const MeshSpec& mesh, const VectorX& full) {
  check_mesh(mesh);
  if (full.size() != mesh.node_count())
    throw std::invalid_argument("gradient_squared_integral: size mismatch");
  const Vector3 d = mesh.spacing();
  Real acc = 0.0;
  for_each_gauss_cell(mesh, [&](int c0, int c1, int c2, const Vector3&,
                                const Vector3& u, Real w) {
    Vector8 v;
    for (int l = 0; l < 8; ++l)
      v[l] = full[mesh.full_index(c0 + (l & 1), c1 + ((l >> 1) & 1),
                                  c2 + ((l >> 2) & 1))];
    Eigen::Matrix<Real, 8, 3> G;
    basis_grad_at(u, d, G);
    acc += w * (G.transpose() * v).squaredNorm();
  });
  return acc;
}

Real field_energy(const NodalField& phi) {
  const MeshSpec& mesh = phi.mesh;
  VectorX full = VectorX::Zero(mesh.node_count());
  const auto in = mesh.interior();
  for (int i = 1; i <= in[0]; ++i)
    for (int j = 1; j <= in[1]; ++j)
      for (int k = 1; k <= in[2]; ++k)
        full[mesh.full_index(i, j, k)] =
            phi.values[mesh.interior_index(i, j, k)];
  return gradient_squared_integral(mesh, full);
}

void write_nodal_csv(const NodalField& phi, std::ostream& out,
                     const std::string& column) {
  const MeshSpec& mesh = phi.mesh;
  out << "i,j,k,x1,x2,x3," << column << '\n';
  out << std::setprecision(17);
  for (int i = 0; i <= mesh.cells[0]; ++i)
    for (int j = 0; j <= mesh.cells[1]; ++j)
      for (int k = 0; k <= mesh.cells[2]; ++k) {
        const Vector3 p = mesh.node_pos(i, j, k);
        const long long idx = mesh.interior_index(i, j, k);
        const Real v = idx >= 0 ? phi.values[idx] : 0.0;
        out << i << ',' << j << ',' << k << ',' << p.x() << ',' << p.y()
            << ',' << p.z() << ',' << v << '\n';
      }
}

void write_density_csv(const Ensemble& ens, const MeshSpec& mesh,
                       const ShapeSpec& shape, Real r, Real rho0,
                       std::ostream& out) {
  check_mesh(mesh);
  if (!(r > 0.0))
    throw std::invalid_argument("write_density_csv: r must be positive");
  out << "i,j,k,x1,x2,x3,rho\n";
  out << std::setprecision(17);
  for (int i = 0; i <= mesh.cells[0]; ++i)
    for (int j = 0; j <= mesh.cells[1]; ++j)
      for (int k = 0; k <= mesh.cells[2]; ++k) {
        const Vector3 p = mesh.node_pos(i, j, k);
        Real rho = -rho0;
        for (size_t m = 0; m < ens.size(); ++m)
          rho += ens.alpha[m] * scaled_shape(shape, r, p - ens.X[m]);
        out << i << ',' << j << ',' << k << ',' << p.x() << ',' << p.y()
            << ',' << p.z() << ',' << rho << '\n';
      }
}

}  // namespace gyropic
