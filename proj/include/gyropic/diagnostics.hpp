#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <gyropic/ensemble.hpp>
#include <gyropic/fem.hpp>
#include <gyropic/types.hpp>

// Error bookkeeping for step-halving studies plus the discrete invariants
// the experiments monitor.

namespace gyropic {

// One row of a refinement study. `e` is whatever endpoint error the
// experiment tabulates; the components keep the position part, the velocity
// part, and the velocity part along the field direction available
// separately. `order` is filled against the previous row by order_table.
struct ErrorRecord {
  std::string label;
  Real step_tilde = 0.0;  // step in scaled time
  Real step_t = 0.0;      // the same step in physical time
  Real eps = 0.0;
  Real e = 0.0;
  Real e_z = 0.0;
  Real e_w = 0.0;
  Real e_w_par = 0.0;
  std::optional<Real> order;
};

// max over particles of |X_a - X_b| + |V_a - V_b|. The ensembles must have
// the same particle count; they are compared index by index.
Real max_error(const Ensemble& a, const Ensemble& b);

// Component of the velocity error along the field direction at the
// reference state: (b . (w_num - w_ref)) b with b = B/|B|. Rejects a
// vanishing field.
Vector3 parallel_error(const Vector3& w_num, const Vector3& w_ref,
                       const Vector3& B_at_ref);

// H = 1/2 sum_j alpha_j |V_j|^2 + 1/2 int |grad phi_h|^2, the invariant the
// bulk-synchronous loop monitors. The kinetic sum is exact; the field term
// is the per-element quadrature of field_energy.
Real discrete_hamiltonian(const Ensemble& ens, const NodalField& phi);

// Fills the order column of a refinement study as log2(e_prev / e).
// Consecutive steps must halve (checked in step_tilde to a relative 1e-9);
// the first row and any row whose ratio is undefined keep an empty order.
std::vector<ErrorRecord> order_table(std::vector<ErrorRecord> records);

// CSV with header step_tilde,step_t,eps,error,order; an unset order leaves
// the last cell empty.
void write_order_csv(const std::vector<ErrorRecord>& records,
                     std::ostream& out);

// Standalone gnuplot script: inline data block, log-log axes, error against
// step_tilde.
void write_order_gnuplot(const std::vector<ErrorRecord>& records,
                         std::ostream& out,
                         const std::string& title = "error vs step");

}  // namespace gyropic
