#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include <gyropic/ensemble.hpp>
#include <gyropic/fem.hpp>
#include <gyropic/kernel.hpp>
#include <gyropic/pusher.hpp>
#include <gyropic/shape.hpp>

// Self-consistent loop. Each step deposits the current ensemble, solves for
// the potential (or sums the mollified kernel directly when no mesh is
// given), then pushes every particle through one step of the chosen map
// with that field frozen: sources are the step-start positions even though
// the electric kick evaluates at the updated position.

namespace gyropic {

struct PicConfig {
  // xbounds doubles as the mesh-free background domain and as the margin
  // reference when a mesh is present: initial supports must not touch the
  // Dirichlet wall.
  PhaseGridSpec grid;
  std::optional<MeshSpec> mesh;  // absent: mesh-free kernel summation
  ShapeSpec shape = ShapeSpec::tent();
  Real r = 0.1;  // mollification radius
  ScaledClock clock;
  Scheme scheme = Scheme::scpd;
  Real rho0 = 0.0;           // neutralizing background density
  long long cadence = 1;     // record diagnostics every this many steps
  FieldModel external;       // B required; E optional, added to the self field
  bool exclude_self = false; // mesh-free: drop each particle's own source
  KernelEvalOptions kernel_options{};
};

// One diagnostics row. In mesh-free mode the field energy is not assembled,
// so He stays 0 and H is the kinetic part alone.
struct PicRow {
  long long step = 0;
  Real tau = 0.0;
  Real mass = 0.0;
  Vector3 momentum{Vector3::Zero()};
  Real H = 0.0;
  Real He = 0.0;
};

struct PicResult {
  std::vector<PicRow> series;
  Ensemble state;  // ensemble after the last step
  DepositStats last_deposit;
  Real max_clipped = 0.0;        // largest clipped charge over all deposits
  long long total_iterations = 0;  // field-solver iterations, all steps
  long long steps = 0;
  Real wall_seconds = 0.0;
};

// Throws std::invalid_argument on an unusable configuration: nonpositive
// step bookkeeping or radius or cadence, reference scheme, missing external
// B, or (mesh mode) a support radius that exceeds a cell or the distance
// from grid.xbounds to the mesh boundary.
void check_pic_config(const PicConfig& cfg);

// Runs clock.steps() bulk-synchronous steps from the given ensemble.
// Particles leaving the mesh box stop contributing charge and feel only the
// external fields, but keep their weights and keep moving. Deterministic
// for any thread count: the deposit reduces over a fixed chunk sequence and
// pushes write disjoint slots.
PicResult run_pic(const PicConfig& cfg, Ensemble ens, int threads = 1);

// Same, with the ensemble initialized from f0 on cfg.grid (zero-weight
// cells pruned).
PicResult run_pic(const PicConfig& cfg, const DensityFn& f0, int threads = 1);

// Columns step,tau,mass,p1,p2,p3,H,He with full double precision.
void write_pic_csv(const std::vector<PicRow>& series, std::ostream& out);

}  // namespace gyropic
