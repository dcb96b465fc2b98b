#include <gyropic/pic.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <iomanip>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <vector>

namespace gyropic {
namespace {

// Work is split over a fixed chunk sequence regardless of the thread count,
// and reductions combine the per-chunk partials in chunk order, so every
// floating-point sum has one grouping and results are bit-reproducible.
constexpr int kChunks = 64;

size_t chunk_begin(size_t n, int c) {
  return n * static_cast<size_t>(c) / kChunks;
}

void run_chunks(int threads, const std::function<void(int)>& body) {
  threads = std::max(1, threads);
  if (threads == 1) {
    for (int c = 0; c < kChunks; ++c) body(c);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int c = next.fetch_add(1); c < kChunks; c = next.fetch_add(1)) {
        if (failed.load(std::memory_order_relaxed)) return;
        try {
          body(c);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!failed.exchange(true)) error = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

VectorX deposit_chunked(const Ensemble& ens, const MeshSpec& mesh,
                        const PicConfig& cfg, int threads,
                        DepositStats* stats) {
  const size_t n = ens.size();
  std::vector<VectorX> partial(kChunks);
  std::vector<DepositStats> pstats(kChunks);
  run_chunks(threads, [&](int c) {
    const size_t b = chunk_begin(n, c), e = chunk_begin(n, c + 1);
    Ensemble part;
    part.X.assign(ens.X.begin() + b, ens.X.begin() + e);
    part.V.assign(ens.V.begin() + b, ens.V.begin() + e);
    part.alpha.assign(ens.alpha.begin() + b, ens.alpha.begin() + e);
    partial[c] = deposit(part, mesh, cfg.shape, cfg.r, 0.0, &pstats[c]);
  });
  VectorX rhs = VectorX::Zero(mesh.interior_count());
  DepositStats st;
  for (int c = 0; c < kChunks; ++c) {
    rhs += partial[c];
    st.charge += pstats[c].charge;
    st.clipped += pstats[c].clipped;
    st.outside_particles += pstats[c].outside_particles;
  }
  rhs.array() -= cfg.rho0 * mesh.spacing().prod();
  st.charge -= cfg.rho0 * mesh.box.volume();
  if (stats) *stats = st;
  return rhs;
}

ParticleState advance(const PicConfig& cfg, const ParticleState& s,
                      const FieldModel& fm) {
  return cfg.scheme == Scheme::scpd ? step_scpd(s, cfg.clock, fm)
                                    : step_hsbx(s, cfg.clock, fm);
}

// Mesh mode: one frozen model for everybody. Escaped particles feel only
// the external fields.
void push_mesh(Ensemble& ens, const PicConfig& cfg, const NodalField& phi,
               int threads) {
  FieldModel frozen;
  frozen.B = cfg.external.B;
  const auto ext_e = cfg.external.E;
  const Box3 box = cfg.mesh->box;
  frozen.E = [phi, ext_e, box](const Vector3& z) -> Vector3 {
    Vector3 e = Vector3::Zero();
    if (ext_e) e = ext_e(z);
    if (box.contains(z)) e += eval_field(phi, z);
    return e;
  };
  const size_t n = ens.size();
  run_chunks(threads, [&](int c) {
    for (size_t j = chunk_begin(n, c); j < chunk_begin(n, c + 1); ++j) {
      const ParticleState out = advance(cfg, {ens.X[j], ens.V[j]}, frozen);
      ens.X[j] = out.z;
      ens.V[j] = out.w;
    }
  });
}

// Mesh-free mode: sources are a positions snapshot taken at step start; the
// per-particle model carries its own exclusion index.
void push_meshfree(Ensemble& ens, const PicConfig& cfg, const KernelEval& ke,
                   const std::shared_ptr<const std::vector<Real>>& weights,
                   int threads) {
  const auto snapshot =
      std::make_shared<const std::vector<Vector3>>(ens.X);
  const auto ext_e = cfg.external.E;
  const Box3 domain = cfg.grid.xbounds;
  const Real rho0 = cfg.rho0;
  const size_t n = ens.size();
  run_chunks(threads, [&](int c) {
    for (size_t j = chunk_begin(n, c); j < chunk_begin(n, c + 1); ++j) {
      const std::ptrdiff_t exclude =
          cfg.exclude_self ? static_cast<std::ptrdiff_t>(j) : -1;
      FieldModel fm;
      fm.B = cfg.external.B;
      fm.E = [&ke, snapshot, weights, rho0, domain, ext_e,
              exclude](const Vector3& z) -> Vector3 {
        Vector3 e = Vector3::Zero();
        if (ext_e) e = ext_e(z);
        e += ke.field_direct(z, *snapshot, *weights, rho0, domain, exclude);
        return e;
      };
      const ParticleState out = advance(cfg, {ens.X[j], ens.V[j]}, fm);
      ens.X[j] = out.z;
      ens.V[j] = out.w;
    }
  });
}

PicRow make_row(long long step, const PicConfig& cfg, const Ensemble& ens,
                const NodalField* phi) {
  PicRow row;
  row.step = step;
  row.tau = static_cast<Real>(step) * cfg.clock.htilde;
  const Moments m = moments(ens);
  row.mass = m.mass;
  row.momentum = m.momentum;
  row.He = phi ? 0.5 * field_energy(*phi) : 0.0;
  row.H = m.kinetic + row.He;
  return row;
}

}  // namespace

void check_pic_config(const PicConfig& cfg) {
  if (!(cfg.clock.epsilon > 0.0) || !(cfg.clock.htilde > 0.0) ||
      !(cfg.clock.T > 0.0))
    throw std::invalid_argument(
        "pic: clock needs positive epsilon, htilde, and T");
  if (cfg.cadence < 1)
    throw std::invalid_argument("pic: cadence must be positive");
  if (!(cfg.r > 0.0))
    throw std::invalid_argument("pic: support radius must be positive");
  if (!cfg.shape.value)
    throw std::invalid_argument("pic: shape has no value function");
  if (cfg.scheme != Scheme::scpd && cfg.scheme != Scheme::hsbx)
    throw std::invalid_argument("pic: scheme must be scpd or hsbx");
  if (!cfg.external.B)
    throw std::invalid_argument("pic: external magnetic field is required");
  if (cfg.mesh) {
    check_mesh(*cfg.mesh);
    if (!(cfg.r < cfg.mesh->spacing().minCoeff()))
      throw std::invalid_argument(
          "pic: support radius must be smaller than a mesh cell");
    const Real lo = (cfg.grid.xbounds.lo - cfg.mesh->box.lo).minCoeff();
    const Real hi = (cfg.mesh->box.hi - cfg.grid.xbounds.hi).minCoeff();
    if (lo < cfg.r || hi < cfg.r)
      throw std::invalid_argument(
          "pic: initial supports must clear the mesh boundary by r");
  }
}

PicResult run_pic(const PicConfig& cfg, Ensemble ens, int threads) {
  check_pic_config(cfg);
  const auto t0 = std::chrono::steady_clock::now();

  PicResult res;
  res.steps = cfg.clock.steps();

  std::shared_ptr<const KernelEval> ke;
  std::shared_ptr<const std::vector<Real>> weights;
  if (!cfg.mesh) {
    ke = std::make_shared<const KernelEval>(cfg.shape, cfg.r,
                                            cfg.kernel_options);
    weights = std::make_shared<const std::vector<Real>>(ens.alpha);
  }

  for (long long n = 0; n <= res.steps; ++n) {
    std::optional<NodalField> phi;
    if (cfg.mesh) {
      DepositStats st;
      const VectorX rhs = deposit_chunked(ens, *cfg.mesh, cfg, threads, &st);
      PoissonReport report;
      try {
        phi = solve_poisson(rhs, *cfg.mesh, &report);
      } catch (const std::exception& ex) {
        std::ostringstream msg;
        msg << "pic: field solve failed at step " << n << ": " << ex.what();
        throw std::runtime_error(msg.str());
      }
      res.total_iterations += report.iterations;
      res.last_deposit = st;
      res.max_clipped = std::max(res.max_clipped, st.clipped);
    }

    if (n % cfg.cadence == 0 || n == res.steps)
      res.series.push_back(make_row(n, cfg, ens, phi ? &*phi : nullptr));
    if (n == res.steps) break;

    if (cfg.mesh)
      push_mesh(ens, cfg, *phi, threads);
    else
      push_meshfree(ens, cfg, *ke, weights, threads);
  }

  res.state = std::move(ens);
  res.wall_seconds =
      std::chrono::duration<Real>(std::chrono::steady_clock::now() - t0)
          .count();
  return res;
}

PicResult run_pic(const PicConfig& cfg, const DensityFn& f0, int threads) {
  return run_pic(cfg, init_grid(cfg.grid, f0, /*prune_zeros=*/true), threads);
}

void write_pic_csv(const std::vector<PicRow>& series, std::ostream& out) {
  out << "step,tau,mass,p1,p2,p3,H,He\n";
  out << std::setprecision(17);
  for (const auto& r : series)
    out << r.step << ',' << r.tau << ',' << r.mass << ',' << r.momentum.x()
        << ',' << r.momentum.y() << ',' << r.momentum.z() << ',' << r.H << ','
        << r.He << '\n';
}

}  // namespace gyropic
