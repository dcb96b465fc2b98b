#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <string>

#include <gyropic/ensemble.hpp>
#include <gyropic/shape.hpp>
#include <gyropic/types.hpp>

// Structured trilinear finite elements for the Poisson problem with a
// homogeneous Dirichlet boundary: charge deposit, a matrix-free stiffness
// apply, a preconditioned CG solve, and pointwise field evaluation.

namespace gyropic {

// Uniform hexahedral mesh over a box. Node (i, j, k) with 0 <= i <= cells[0]
// sits at lo + (i d0, j d1, k d2); only interior nodes carry unknowns.
struct MeshSpec {
  Box3 box;
  std::array<int, 3> cells{8, 8, 8};

  Vector3 spacing() const {
    return Vector3(box.extent().x() / cells[0], box.extent().y() / cells[1],
                   box.extent().z() / cells[2]);
  }
  // Largest cell diameter; on a uniform mesh every cell has the same one.
  Real hx() const { return spacing().norm(); }
  std::array<int, 3> interior() const {
    return {cells[0] - 1, cells[1] - 1, cells[2] - 1};
  }
  long long interior_count() const {
    const auto in = interior();
    return static_cast<long long>(in[0]) * in[1] * in[2];
  }
  long long node_count() const {
    return static_cast<long long>(cells[0] + 1) * (cells[1] + 1) *
           (cells[2] + 1);
  }
  // Linear index over interior nodes, k fastest; -1 for boundary or
  // out-of-range coordinates.
  long long interior_index(int i, int j, int k) const {
    if (i < 1 || j < 1 || k < 1 || i > cells[0] - 1 || j > cells[1] - 1 ||
        k > cells[2] - 1)
      return -1;
    const auto in = interior();
    return (static_cast<long long>(i - 1) * in[1] + (j - 1)) * in[2] + (k - 1);
  }
  long long full_index(int i, int j, int k) const {
    return (static_cast<long long>(i) * (cells[1] + 1) + j) * (cells[2] + 1) +
           k;
  }
  Vector3 node_pos(int i, int j, int k) const {
    const Vector3 d = spacing();
    return box.lo + Vector3(i * d.x(), j * d.y(), k * d.z());
  }
};

// Rejects meshes without interior nodes or with a degenerate box.
void check_mesh(const MeshSpec& mesh);

// Piecewise-trilinear function with the boundary pinned to zero; values
// holds the interior nodes in interior_index order.
struct NodalField {
  MeshSpec mesh;
  VectorX values;
};

struct DepositStats {
  Real charge = 0.0;       // integral of the deposited density over the box
  Real clipped = 0.0;      // particle charge falling outside the box
  int outside_particles = 0;  // supports with no overlap at all
};

// Load vector b_I = integral of (sum_j alpha_j zeta_r(x - X_j) - rho0) psi_I.
// Per-element Gauss quadrature, with each element cut at the support faces
// and center planes of every overlapping particle so the pieces are smooth.
// Charge outside the box is dropped and recorded in the stats.
VectorX deposit(const Ensemble& ens, const MeshSpec& mesh,
                const ShapeSpec& shape, Real r, Real rho0,
                DepositStats* stats = nullptr);

// Load vector of an analytic density, 3^3 Gauss points per element after an
// optional subdiv^3 split (for densities with structure below the mesh).
VectorX assemble_rhs(const MeshSpec& mesh,
                     const std::function<Real(const Vector3&)>& density,
                     int subdiv = 1);

// Matrix-free stiffness apply on interior unknowns: (Au)_I equals the
// integral of grad u_h . grad psi_I with u_h zero on the boundary.
VectorX apply_stiffness(const MeshSpec& mesh, const VectorX& u);

struct PoissonReport {
  long long iterations = 0;
  Real residual = 0.0;  // final relative residual
};

// Jacobi-preconditioned conjugate gradients to relative residual 1e-10,
// iteration cap 50 * interior_count^(1/3) * 10. Throws on non-convergence
// with the residual in the message.
NodalField solve_poisson(const VectorX& rhs, const MeshSpec& mesh,
                         PoissonReport* report = nullptr);

// Value of the trilinear interpolant at x; throws outside the box.
Real eval_potential(const NodalField& phi, const Vector3& x);

// Minus the gradient of the trilinear interpolant at x (the electric field
// of the potential); throws outside the box.
Vector3 eval_field(const NodalField& phi, const Vector3& x);

// L2 norm of (phi_h - exact) by per-element Gauss quadrature.
Real l2_error(const NodalField& phi,
              const std::function<Real(const Vector3&)>& exact);

// L2 norm of (grad phi_h - exact_grad), the H1-seminorm error.
Real grad_error(const NodalField& phi,
                const std::function<Vector3(const Vector3&)>& exact_grad);

// Integral of |grad u_h|^2 for a full nodal array (boundary included);
// exact for trilinear data since the integrand is quadratic per axis.
Real gradient_squared_integral(const MeshSpec& mesh, const VectorX& full);

// Same integral for a Dirichlet field (boundary zero).
Real field_energy(const NodalField& phi);

// CSV `i,j,k,x1,x2,x3,<column>` over all nodes, k fastest, 17 significant
// digits; boundary rows carry zero.
void write_nodal_csv(const NodalField& phi, std::ostream& out,
                     const std::string& column = "phi");

// Pointwise density sum_j alpha_j zeta_r(x - X_j) - rho0 at every node, in
// the same layout with column `rho`.
void write_density_csv(const Ensemble& ens, const MeshSpec& mesh,
                       const ShapeSpec& shape, Real r, Real rho0,
                       std::ostream& out);

}  // namespace gyropic
