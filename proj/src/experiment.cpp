#include <gyropic/experiment.hpp>

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>
#include <utility>

#include <gyropic/diagnostics.hpp>
#include <gyropic/ensemble.hpp>
#include <gyropic/fem.hpp>
#include <gyropic/kernel.hpp>
#include <gyropic/pic.hpp>
#include <gyropic/pusher.hpp>
#include <gyropic/quadrature.hpp>
#include <gyropic/shape.hpp>

#ifndef GYROPIC_GIT_DESCRIBE
#define GYROPIC_GIT_DESCRIBE "unknown"
#endif

namespace gyropic {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

[[noreturn]] void bad(const std::string& msg) {
  throw std::invalid_argument("experiment: " + msg);
}

// ---- kinds, defaults, validation ----------------------------------------

const std::vector<std::string> kKinds = {
    "table1",        "table2",    "scpd_order",      "refined_eps_scan",
    "mollify_order", "fem_order", "weak_init_order", "pic"};

json defaults_for(const std::string& kind) {
  const json table_steps = {0.5, 0.25, 0.125, 0.0625, 0.03125};
  if (kind == "table1")
    return {{"eps", 0.01}, {"steps", table_steps}, {"T", 1.0},
            {"scheme", "hsbx"}};
  if (kind == "table2")
    return {{"eps", 0.001},
            {"steps", {0.125, 0.0625, 0.03125, 0.015625, 0.0078125,
                       0.00390625}},
            {"T", 1.0},
            {"scheme", "hsbx"}};
  if (kind == "scpd_order")
    return {{"eps", 0.01}, {"steps", table_steps}, {"T", 1.0},
            {"scheme", "scpd"}};
  if (kind == "refined_eps_scan")
    return {{"N", 402}, {"eps_list", {0.04, 0.02, 0.01, 0.005}}, {"T", 1.0}};
  if (kind == "mollify_order")
    return {{"r_list", {0.2, 0.1, 0.05, 0.025}}, {"probes", 7}};
  if (kind == "fem_order") return {{"cells_list", {8, 16, 32, 64}}};
  if (kind == "weak_init_order") return {{"levels", {3, 6, 12}}};
  if (kind == "pic")
    return {{"eps", 0.1},
            {"h_tilde", 0.1},
            {"T", 0.5},
            {"scheme", "scpd"},
            {"r", 0.1},
            {"rho0", 0.0},
            {"cadence", 5},
            {"cells", 8},
            {"mesh_free", false},
            {"exclude_self", false},
            {"x_cells", 4},
            {"v_cells", 2},
            {"field", {{"kind", "uniform"}, {"b", {0.0, 0.0, 1.0}}}}};
  bad("unknown kind '" + kind + "'");
}

Real as_real(const json& v, const std::string& key) {
  if (!v.is_number()) bad(key + " must be a number");
  return v.get<Real>();
}

void expect_pos(const json& ov, const std::string& key) {
  if (!(as_real(ov.at(key), key) > 0.0)) bad(key + " must be positive");
}

void expect_nonneg(const json& ov, const std::string& key) {
  if (!(as_real(ov.at(key), key) >= 0.0)) bad(key + " must be nonnegative");
}

void expect_int_min(const json& ov, const std::string& key, long long lo) {
  const json& v = ov.at(key);
  if (!v.is_number_integer()) bad(key + " must be an integer");
  if (v.get<long long>() < lo)
    bad(key + " must be at least " + std::to_string(lo));
}

void expect_bool(const json& ov, const std::string& key) {
  if (!ov.at(key).is_boolean()) bad(key + " must be a boolean");
}

std::vector<Real> halving_list(const json& ov, const std::string& key) {
  const json& v = ov.at(key);
  if (!v.is_array() || v.empty()) bad(key + " must be a nonempty array");
  std::vector<Real> out;
  for (const json& e : v) {
    const Real x = as_real(e, key + " entry");
    if (!(x > 0.0)) bad(key + " entries must be positive");
    out.push_back(x);
  }
  for (size_t i = 1; i < out.size(); ++i)
    if (std::abs(out[i] - 0.5 * out[i - 1]) > 1e-9 * out[i - 1])
      bad(key + " must halve from entry to entry");
  return out;
}

std::vector<int> doubling_ints(const json& ov, const std::string& key,
                               int lo) {
  const json& v = ov.at(key);
  if (!v.is_array() || v.empty()) bad(key + " must be a nonempty array");
  std::vector<int> out;
  for (const json& e : v) {
    if (!e.is_number_integer()) bad(key + " entries must be integers");
    const int x = e.get<int>();
    if (x < lo) bad(key + " entries must be at least " + std::to_string(lo));
    out.push_back(x);
  }
  for (size_t i = 1; i < out.size(); ++i)
    if (out[i] != 2 * out[i - 1]) bad(key + " must double from entry to entry");
  return out;
}

Scheme scheme_of(const std::string& name) {
  if (name == "scpd") return Scheme::scpd;
  if (name == "hsbx") return Scheme::hsbx;
  bad("scheme must be scpd or hsbx");
}

void expect_scheme(const json& ov) {
  const json& v = ov.at("scheme");
  if (!v.is_string()) bad("scheme must be a string");
  scheme_of(v.get<std::string>());
}

void expect_field(const json& ov) {
  const json& f = ov.at("field");
  if (!f.is_object() || !f.contains("kind") || !f.at("kind").is_string())
    bad("field must be an object naming a kind");
  const std::string kind = f.at("kind").get<std::string>();
  if (kind == "uniform") {
    for (const auto& item : f.items())
      if (item.key() != "kind" && item.key() != "b")
        bad("field key '" + item.key() + "' is not recognized");
    if (!f.contains("b") || !f.at("b").is_array() || f.at("b").size() != 3)
      bad("uniform field needs b as an array of three numbers");
    for (const json& e : f.at("b")) as_real(e, "field.b entry");
  } else if (kind == "bending") {
    for (const auto& item : f.items())
      if (item.key() != "kind")
        bad("bending field takes no key '" + item.key() + "'");
  } else {
    bad("field.kind must be uniform or bending");
  }
}

void validate_overrides(const std::string& kind, const json& ov) {
  if (kind == "table1" || kind == "table2" || kind == "scpd_order") {
    expect_pos(ov, "eps");
    expect_pos(ov, "T");
    expect_scheme(ov);
    halving_list(ov, "steps");
  } else if (kind == "refined_eps_scan") {
    expect_int_min(ov, "N", 1);
    expect_pos(ov, "T");
    halving_list(ov, "eps_list");
  } else if (kind == "mollify_order") {
    halving_list(ov, "r_list");
    expect_int_min(ov, "probes", 2);
  } else if (kind == "fem_order") {
    doubling_ints(ov, "cells_list", 2);
  } else if (kind == "weak_init_order") {
    doubling_ints(ov, "levels", 1);
  } else if (kind == "pic") {
    expect_pos(ov, "eps");
    expect_pos(ov, "h_tilde");
    expect_pos(ov, "T");
    expect_pos(ov, "r");
    expect_nonneg(ov, "rho0");
    expect_scheme(ov);
    expect_int_min(ov, "cadence", 1);
    expect_int_min(ov, "cells", 2);
    expect_int_min(ov, "x_cells", 1);
    expect_int_min(ov, "v_cells", 1);
    expect_bool(ov, "mesh_free");
    expect_bool(ov, "exclude_self");
    expect_field(ov);
  }
}

// ---- shared numerics ------------------------------------------------------

constexpr Real kPi = 3.14159265358979323846;

// Rotating nonuniform benchmark: B(y) = e3 + q(y)/eps with the quadratic
// curl-free perturbation q, trapped by E(z) = -z.
FieldModel bench_field(Real eps) {
  FieldModel fm;
  fm.B = [eps](const Vector3& y) -> Vector3 {
    const Vector3 q(y.x() * (y.z() - y.y()), y.y() * (y.x() - y.z()),
                    y.z() * (y.y() - y.x()));
    Vector3 out = q / eps;
    out.z() += 1.0;
    return out;
  };
  fm.E = [](const Vector3& z) -> Vector3 { return -z; };
  return fm;
}

ParticleState bench_state() {
  ParticleState s;
  s.z = Vector3(0.3, 0.2, -1.4);
  s.w = Vector3(-0.7, 0.08, 0.2);
  return s;
}

enum class Metric { position, full, refined };

// One row of a time-refinement study: integrate to the last full step and
// compare against the adaptive reference at the same tau.
ErrorRecord endpoint_error(Scheme scheme, Metric metric,
                           const ScaledClock& clock) {
  const FieldModel fm = bench_field(clock.epsilon);
  const ParticleState s0 = bench_state();
  const Trajectory tr = integrate(scheme, s0, clock, fm);
  const ParticleState& num = tr.states.back();
  const Real tau_n = tr.tau.back();
  const ParticleState ref =
      reference_solve(s0, clock, fm, 1e-12, {tau_n}).front();
  ErrorRecord rec;
  rec.step_tilde = clock.htilde;
  rec.step_t = clock.h();
  rec.eps = clock.epsilon;
  rec.e_z = (num.z - ref.z).norm();
  rec.e_w = (num.w - ref.w).norm();
  rec.e_w_par =
      parallel_error(num.w, ref.w, fm.Bfield(clock.epsilon * ref.z)).norm();
  switch (metric) {
    case Metric::position:
      rec.e = rec.e_z;
      break;
    case Metric::full:
      rec.e = rec.e_z + rec.e_w;
      break;
    case Metric::refined:
      rec.e = rec.e_z + rec.e_w_par;
      break;
  }
  return rec;
}

// Runs count independent tasks on up to `threads` workers. The first
// exception wins; remaining workers drain without starting new tasks.
void run_tasks(int threads, int count, const std::function<void(int)>& task) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<int> cursor{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      if (failed.load(std::memory_order_relaxed)) return;
      const int i = cursor.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) return;
      try {
        task(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first) first = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min(threads, count);
  pool.reserve(n);
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

std::optional<Real> lsq_slope(const std::vector<ErrorRecord>& recs) {
  std::vector<Real> xs, ys;
  for (const ErrorRecord& r : recs)
    if (std::isfinite(r.e) && r.e > 0.0 && r.step_tilde > 0.0) {
      xs.push_back(std::log2(r.step_tilde));
      ys.push_back(std::log2(r.e));
    }
  const size_t n = xs.size();
  if (n < 2) return std::nullopt;
  Real sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

json slope_json(const std::vector<ErrorRecord>& recs) {
  const auto s = lsq_slope(recs);
  return s ? json(*s) : json();
}

// ---- output ---------------------------------------------------------------

void write_file(const fs::path& dir, const std::string& name,
                std::vector<std::string>& files,
                const std::function<void(std::ostream&)>& body) {
  const fs::path p = dir / name;
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("experiment: cannot open " + p.string());
  body(out);
  out.flush();
  if (!out)
    throw std::runtime_error("experiment: write failed for " + p.string());
  files.push_back(name);
}

json records_json(const std::vector<ErrorRecord>& recs) {
  json arr = json::array();
  for (const ErrorRecord& r : recs)
    arr.push_back({{"step_tilde", r.step_tilde},
                   {"step_t", r.step_t},
                   {"eps", r.eps},
                   {"e", r.e},
                   {"e_z", r.e_z},
                   {"e_w", r.e_w},
                   {"e_w_par", r.e_w_par},
                   {"order", r.order ? json(*r.order) : json()}});
  return arr;
}

// ---- table experiments ------------------------------------------------------

// Order and error columns the two table experiments reproduce; the run is
// flagged by whichever step convention lands closer to the order column.
struct KnownColumns {
  std::vector<Real> errors;
  std::vector<Real> orders;
};

const KnownColumns kTable1Columns = {
    {7.2e-3, 1.8e-3, 7.3470e-4, 3.6784e-4, 1.8450e-4},
    {2.0, 1.2928, 0.9981, 0.9955}};
const KnownColumns kTable2Columns = {
    {4.9406e-4, 1.3036e-4, 3.6681e-5, 1.1477e-5, 4.7091e-6, 2.4135e-6},
    {1.9222, 1.8294, 1.6763, 1.2852, 0.9643}};

Real order_gap(const std::vector<ErrorRecord>& recs,
               const std::vector<Real>& orders) {
  Real gap = 0.0;
  for (size_t i = 1; i < recs.size(); ++i) {
    if (!recs[i].order) return std::numeric_limits<Real>::infinity();
    gap = std::max(gap, std::abs(*recs[i].order - orders[i - 1]));
  }
  return gap;
}

json finite_json(Real x) { return std::isfinite(x) ? json(x) : json(); }

json convention_flag(const std::string& kind, const json& ov,
                     const std::vector<ErrorRecord>& recs_tilde,
                     const std::vector<ErrorRecord>& recs_t) {
  const KnownColumns& known =
      kind == "table1" ? kTable1Columns : kTable2Columns;
  if (ov != defaults_for(kind) ||
      recs_tilde.size() != known.errors.size())
    return {{"match", "unflagged"}};
  const Real gap_tilde = order_gap(recs_tilde, known.orders);
  const Real gap_t = order_gap(recs_t, known.orders);
  Real lo = std::numeric_limits<Real>::infinity(), hi = 0.0;
  for (size_t i = 0; i < recs_tilde.size(); ++i) {
    const Real ratio = recs_tilde[i].e / known.errors[i];
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  return {{"match", gap_tilde <= gap_t ? "step_tilde" : "step_t"},
          {"gap_step_tilde", finite_json(gap_tilde)},
          {"gap_step_t", finite_json(gap_t)},
          {"error_ratio_range", {lo, hi}}};
}

// table1/table2: endpoint position error of the splitting scheme under both
// readings of the step column, h_tilde = step and h = step.
json run_time_table(const std::string& kind, const json& ov,
                    const fs::path& dir, int threads,
                    std::vector<std::string>& files) {
  const Real eps = ov.at("eps").get<Real>();
  const Real T = ov.at("T").get<Real>();
  const Scheme scheme = scheme_of(ov.at("scheme").get<std::string>());
  const auto steps = ov.at("steps").get<std::vector<Real>>();
  const int n = static_cast<int>(steps.size());
  std::vector<ErrorRecord> recs_tilde(n), recs_t(n);
  run_tasks(threads, 2 * n, [&](int i) {
    if (i < n) {
      recs_tilde[i] = endpoint_error(scheme, Metric::position,
                                     ScaledClock{eps, steps[i], T});
    } else {
      const int j = i - n;
      ErrorRecord rec = endpoint_error(scheme, Metric::position,
                                       ScaledClock{eps, steps[j] / eps, T});
      rec.step_t = steps[j];
      recs_t[j] = rec;
    }
  });
  recs_tilde = order_table(std::move(recs_tilde));
  recs_t = order_table(std::move(recs_t));
  write_file(dir, "orders.csv", files,
             [&](std::ostream& o) { write_order_csv(recs_tilde, o); });
  write_file(dir, "orders_step_t.csv", files,
             [&](std::ostream& o) { write_order_csv(recs_t, o); });
  write_file(dir, "plot.gp", files, [&](std::ostream& o) {
    write_order_gnuplot(recs_tilde, o, kind);
  });
  json extras;
  extras["records"] = records_json(recs_tilde);
  extras["records_step_t"] = records_json(recs_t);
  extras["slope"] = slope_json(recs_tilde);
  extras["convention"] = convention_flag(kind, ov, recs_tilde, recs_t);
  return extras;
}

// scpd_order: full endpoint error |e_z| + |e_w| of the frozen-field scheme,
// step read as h_tilde.
json run_scpd_order(const json& ov, const fs::path& dir, int threads,
                    std::vector<std::string>& files) {
  const Real eps = ov.at("eps").get<Real>();
  const Real T = ov.at("T").get<Real>();
  const Scheme scheme = scheme_of(ov.at("scheme").get<std::string>());
  const auto steps = ov.at("steps").get<std::vector<Real>>();
  std::vector<ErrorRecord> recs(steps.size());
  run_tasks(threads, static_cast<int>(steps.size()), [&](int i) {
    recs[i] =
        endpoint_error(scheme, Metric::full, ScaledClock{eps, steps[i], T});
  });
  recs = order_table(std::move(recs));
  write_file(dir, "orders.csv", files,
             [&](std::ostream& o) { write_order_csv(recs, o); });
  write_file(dir, "plot.gp", files, [&](std::ostream& o) {
    write_order_gnuplot(recs, o, "scpd_order");
  });
  json extras;
  extras["records"] = records_json(recs);
  extras["slope"] = slope_json(recs);
  return extras;
}

// refined_eps_scan: h_tilde pinned to a fixed fraction of the gyro period,
// eps halved row by row; tabulates |e_z| + |e_w along B|. The step_tilde
// column carries eps, the refinement variable.
json run_refined_scan(const json& ov, const fs::path& dir, int threads,
                      std::vector<std::string>& files) {
  const int N = ov.at("N").get<int>();
  const Real T = ov.at("T").get<Real>();
  const auto eps_list = ov.at("eps_list").get<std::vector<Real>>();
  const Real period = gyro_period(bench_field(eps_list.front()));
  const Real htilde = period / N;
  std::vector<ErrorRecord> recs(eps_list.size());
  run_tasks(threads, static_cast<int>(eps_list.size()), [&](int i) {
    ErrorRecord rec = endpoint_error(Scheme::scpd, Metric::refined,
                                     ScaledClock{eps_list[i], htilde, T});
    rec.step_tilde = eps_list[i];
    recs[i] = rec;
  });
  recs = order_table(std::move(recs));
  write_file(dir, "orders.csv", files,
             [&](std::ostream& o) { write_order_csv(recs, o); });
  write_file(dir, "plot.gp", files, [&](std::ostream& o) {
    write_order_gnuplot(recs, o, "refined_eps_scan");
  });
  json extras;
  extras["records"] = records_json(recs);
  extras["slope"] = slope_json(recs);
  extras["h_tilde"] = htilde;
  extras["step_column"] = "eps";
  return extras;
}

// mollify_order: sup error of tent-mollified sin(x1)cos(x2) over a probe
// lattice as the radius halves.
json run_mollify_order(const json& ov, const fs::path& dir, int,
                       std::vector<std::string>& files) {
  const auto r_list = ov.at("r_list").get<std::vector<Real>>();
  const int probes = ov.at("probes").get<int>();
  const auto g = [](const Vector3& x) -> Real {
    return std::sin(x.x()) * std::cos(x.y());
  };
  const Box3 box{Vector3(-1.0, -1.0, -1.0), Vector3(1.0, 1.0, 1.0)};
  const std::vector<Real> errs =
      mollification_error(ShapeSpec::tent(), g, r_list, box, probes);
  std::vector<ErrorRecord> recs(r_list.size());
  for (size_t i = 0; i < r_list.size(); ++i) {
    recs[i].step_tilde = r_list[i];
    recs[i].step_t = r_list[i];
    recs[i].e = errs[i];
  }
  recs = order_table(std::move(recs));
  write_file(dir, "orders.csv", files,
             [&](std::ostream& o) { write_order_csv(recs, o); });
  write_file(dir, "plot.gp", files, [&](std::ostream& o) {
    write_order_gnuplot(recs, o, "mollify_order");
  });
  json extras;
  extras["records"] = records_json(recs);
  extras["slope"] = slope_json(recs);
  extras["step_column"] = "r";
  return extras;
}

// fem_order: manufactured sine potential on the unit box; L2 error and the
// H1-seminorm error as the mesh halves.
json run_fem_order(const json& ov, const fs::path& dir, int threads,
                   std::vector<std::string>& files) {
  const auto cells = ov.at("cells_list").get<std::vector<int>>();
  const auto exact = [](const Vector3& x) -> Real {
    return std::sin(kPi * x.x()) * std::sin(kPi * x.y()) *
           std::sin(kPi * x.z());
  };
  const auto exact_grad = [](const Vector3& x) -> Vector3 {
    return kPi * Vector3(std::cos(kPi * x.x()) * std::sin(kPi * x.y()) *
                             std::sin(kPi * x.z()),
                         std::sin(kPi * x.x()) * std::cos(kPi * x.y()) *
                             std::sin(kPi * x.z()),
                         std::sin(kPi * x.x()) * std::sin(kPi * x.y()) *
                             std::cos(kPi * x.z()));
  };
  const auto density = [&exact](const Vector3& x) -> Real {
    return 3.0 * kPi * kPi * exact(x);
  };
  const int n = static_cast<int>(cells.size());
  std::vector<ErrorRecord> recs_l2(n), recs_grad(n);
  std::vector<long long> iters(n, 0);
  run_tasks(threads, n, [&](int i) {
    const MeshSpec mesh{Box3{Vector3::Zero(), Vector3::Ones()},
                        {cells[i], cells[i], cells[i]}};
    PoissonReport rep;
    const NodalField phi = solve_poisson(assemble_rhs(mesh, density), mesh,
                                         &rep);
    iters[i] = rep.iterations;
    const Real h = 1.0 / cells[i];
    recs_l2[i].step_tilde = h;
    recs_l2[i].step_t = h;
    recs_l2[i].e = l2_error(phi, exact);
    recs_grad[i].step_tilde = h;
    recs_grad[i].step_t = h;
    recs_grad[i].e = grad_error(phi, exact_grad);
  });
  recs_l2 = order_table(std::move(recs_l2));
  recs_grad = order_table(std::move(recs_grad));
  write_file(dir, "orders.csv", files,
             [&](std::ostream& o) { write_order_csv(recs_l2, o); });
  write_file(dir, "orders_grad.csv", files,
             [&](std::ostream& o) { write_order_csv(recs_grad, o); });
  write_file(dir, "plot.gp", files, [&](std::ostream& o) {
    write_order_gnuplot(recs_l2, o, "fem_order");
  });
  json extras;
  extras["records"] = records_json(recs_l2);
  extras["records_grad"] = records_json(recs_grad);
  extras["slopes"] = {{"l2", slope_json(recs_l2)},
                      {"grad", slope_json(recs_grad)}};
  extras["iterations"] = iters;
  extras["step_column"] = "h_x";
  return extras;
}

// weak_init_order: midpoint-grid sampling of a separable Gaussian against a
// separable observable, compared with the product of 1d quadratures. The
// step column carries beta, the phase-space cell diagonal.
json run_weak_init_order(const json& ov, const fs::path& dir, int threads,
                         std::vector<std::string>& files) {
  const auto levels = ov.at("levels").get<std::vector<int>>();
  const Box3 xb{Vector3(-1.5, -1.6, -1.4), Vector3(1.7, 1.5, 1.6)};
  const Box3 vb{Vector3(-1.8, -1.5, -1.7), Vector3(1.5, 1.9, 1.6)};
  const std::array<Real, 3> cx{0.123, -0.217, 0.334};
  const std::array<Real, 3> sx{0.71, 0.62, 0.80};
  const std::array<Real, 3> cv{-0.08, 0.19, 0.05};
  const std::array<Real, 3> sv{0.66, 0.74, 0.59};
  const auto gx = [&](int a, Real t) -> Real {
    const Real u = (t - cx[a]) / sx[a];
    return std::exp(-0.5 * u * u);
  };
  const auto gv = [&](int a, Real t) -> Real {
    const Real u = (t - cv[a]) / sv[a];
    return std::exp(-0.5 * u * u);
  };
  const auto px = [](int a, Real t) -> Real { return std::cos(0.4 * t + 0.2 * a); };
  const auto pv = [](int a, Real t) -> Real {
    return 1.0 + 0.3 * t * std::exp(-t * t / (2.1 + a));
  };
  const auto qx = [](int a, Real t) -> Real {
    return std::sin(0.5 * t - 0.1 * a) + 0.5;
  };
  const auto qv = [](int a, Real t) -> Real {
    const Real u = t - 0.21 * a;
    return std::exp(-0.4 * u * u);
  };
  const DensityFn f0 = [&](const Vector3& x, const Vector3& v) -> Real {
    Real val = 1.0;
    for (int a = 0; a < 3; ++a) val *= gx(a, x[a]) * gv(a, v[a]);
    return val;
  };
  const ObservableFn psi = [&](const Vector3& x, const Vector3& v) -> Real {
    Real p = 1.0, q = 1.0;
    for (int a = 0; a < 3; ++a) {
      p *= px(a, x[a]) * pv(a, v[a]);
      q *= qx(a, x[a]) * qv(a, v[a]);
    }
    return p + 0.6 * q;
  };

  // Composite 12-point Gauss per axis; the pairing separates into products.
  const auto integrate_1d = [](const std::function<Real(Real)>& f, Real lo,
                               Real hi) -> Real {
    const auto& gl = GaussLegendre<12>();
    const int panels = 16;
    const Real w = (hi - lo) / panels;
    Real acc = 0.0;
    for (int p = 0; p < panels; ++p) {
      const Real c = lo + (p + 0.5) * w;
      for (int q = 0; q < 12; ++q)
        acc += gl.weights[q] * f(c + 0.5 * w * gl.nodes[q]);
    }
    return acc * 0.5 * w;
  };
  Real ref_p = 1.0, ref_q = 1.0;
  for (int a = 0; a < 3; ++a) {
    ref_p *= integrate_1d([&](Real t) { return gx(a, t) * px(a, t); },
                          xb.lo[a], xb.hi[a]) *
             integrate_1d([&](Real t) { return gv(a, t) * pv(a, t); },
                          vb.lo[a], vb.hi[a]);
    ref_q *= integrate_1d([&](Real t) { return gx(a, t) * qx(a, t); },
                          xb.lo[a], xb.hi[a]) *
             integrate_1d([&](Real t) { return gv(a, t) * qv(a, t); },
                          vb.lo[a], vb.hi[a]);
  }
  const Real ref = ref_p + 0.6 * ref_q;

  const int n = static_cast<int>(levels.size());
  std::vector<ErrorRecord> recs(n);
  std::vector<long long> particles(n, 0);
  run_tasks(threads, n, [&](int i) {
    PhaseGridSpec spec;
    spec.xbounds = xb;
    spec.vbounds = vb;
    spec.dx = xb.extent() / levels[i];
    spec.dv = vb.extent() / levels[i];
    const Ensemble ens = init_grid(spec, f0);
    particles[i] = static_cast<long long>(ens.size());
    recs[i].step_tilde = spec.beta();
    recs[i].step_t = spec.beta();
    recs[i].e = std::abs(weak_pair(ens, psi) - ref);
  });
  recs = order_table(std::move(recs));
  write_file(dir, "orders.csv", files,
             [&](std::ostream& o) { write_order_csv(recs, o); });
  write_file(dir, "plot.gp", files, [&](std::ostream& o) {
    write_order_gnuplot(recs, o, "weak_init_order");
  });
  json extras;
  extras["records"] = records_json(recs);
  extras["slope"] = slope_json(recs);
  extras["reference_value"] = ref;
  extras["particles"] = particles;
  extras["step_column"] = "beta";
  return extras;
}

// pic: self-consistent loop on a Gaussian blob, mesh or mesh-free field.
json run_pic_experiment(const json& ov, const fs::path& dir, int threads,
                        std::vector<std::string>& files) {
  PicConfig cfg;
  const Box3 xb{Vector3(0.2, 0.2, 0.2), Vector3(0.8, 0.8, 0.8)};
  const Box3 vb{Vector3(-0.6, -0.6, -0.6), Vector3(0.6, 0.6, 0.6)};
  cfg.grid.xbounds = xb;
  cfg.grid.vbounds = vb;
  cfg.grid.dx = xb.extent() / ov.at("x_cells").get<int>();
  cfg.grid.dv = vb.extent() / ov.at("v_cells").get<int>();
  if (!ov.at("mesh_free").get<bool>()) {
    const int cells = ov.at("cells").get<int>();
    cfg.mesh = MeshSpec{Box3{Vector3::Zero(), Vector3::Ones()},
                        {cells, cells, cells}};
  }
  cfg.r = ov.at("r").get<Real>();
  cfg.clock = ScaledClock{ov.at("eps").get<Real>(),
                          ov.at("h_tilde").get<Real>(), ov.at("T").get<Real>()};
  cfg.scheme = scheme_of(ov.at("scheme").get<std::string>());
  cfg.rho0 = ov.at("rho0").get<Real>();
  cfg.cadence = ov.at("cadence").get<long long>();
  cfg.exclude_self = ov.at("exclude_self").get<bool>();
  const json& field = ov.at("field");
  if (field.at("kind") == "uniform") {
    const Vector3 b(field.at("b")[0].get<Real>(), field.at("b")[1].get<Real>(),
                    field.at("b")[2].get<Real>());
    cfg.external.B = [b](const Vector3&) -> Vector3 { return b; };
  } else {
    cfg.external.B = bench_field(cfg.clock.epsilon).B;
  }

  const DensityFn f0 = [](const Vector3& x, const Vector3& v) -> Real {
    Real val = 1.0;
    for (int a = 0; a < 3; ++a) {
      const Real ux = (x[a] - 0.5) / 0.12;
      const Real uv = v[a] / 0.2;
      val *= std::exp(-0.5 * (ux * ux + uv * uv));
    }
    return val;
  };
  const PicResult result = run_pic(cfg, f0, threads);
  write_file(dir, "series.csv", files,
             [&](std::ostream& o) { write_pic_csv(result.series, o); });
  Real mass_drift = 0.0;
  for (const PicRow& row : result.series)
    mass_drift =
        std::max(mass_drift, std::abs(row.mass - result.series.front().mass));
  json extras;
  extras["pic"] = {
      {"particles", static_cast<long long>(result.state.size())},
      {"steps", result.steps},
      {"iterations", result.total_iterations},
      {"mass_drift", mass_drift},
      {"max_clipped", result.max_clipped},
      {"outside", result.last_deposit.outside_particles}};
  return extras;
}

}  // namespace

const std::vector<std::string>& experiment_kinds() { return kKinds; }

ExperimentSpec parse_experiment(const json& doc) {
  if (!doc.is_object()) bad("spec must be a JSON object");
  for (const auto& item : doc.items()) {
    const std::string& k = item.key();
    if (k != "kind" && k != "overrides" && k != "out_dir" && k != "threads" &&
        k != "reproducible")
      bad("unknown spec key '" + k + "'");
  }
  if (!doc.contains("kind") || !doc.at("kind").is_string())
    bad("spec needs a kind");
  ExperimentSpec spec;
  spec.kind = doc.at("kind").get<std::string>();
  if (std::find(kKinds.begin(), kKinds.end(), spec.kind) == kKinds.end())
    bad("unknown kind '" + spec.kind + "'");
  if (doc.contains("overrides")) {
    if (!doc.at("overrides").is_object()) bad("overrides must be an object");
    spec.overrides = doc.at("overrides");
  }
  if (doc.contains("out_dir")) {
    if (!doc.at("out_dir").is_string()) bad("out_dir must be a string");
    spec.out_dir = doc.at("out_dir").get<std::string>();
  }
  if (doc.contains("threads")) {
    if (!doc.at("threads").is_number_integer()) bad("threads must be an integer");
    spec.threads = doc.at("threads").get<int>();
  }
  if (doc.contains("reproducible")) {
    if (!doc.at("reproducible").is_boolean())
      bad("reproducible must be a boolean");
    spec.reproducible = doc.at("reproducible").get<bool>();
  }
  return spec;
}

json resolve_experiment(const ExperimentSpec& spec) {
  if (std::find(kKinds.begin(), kKinds.end(), spec.kind) == kKinds.end())
    bad("unknown kind '" + spec.kind + "'");
  if (spec.threads < 1) bad("threads must be at least 1");
  if (!spec.overrides.is_object()) bad("overrides must be an object");
  json merged = defaults_for(spec.kind);
  for (const auto& item : spec.overrides.items()) {
    if (!merged.contains(item.key())) {
      std::string allowed;
      for (const auto& d : merged.items())
        allowed += (allowed.empty() ? "" : ", ") + d.key();
      bad("unknown override '" + item.key() + "' for kind " + spec.kind +
          " (allowed: " + allowed + ")");
    }
    merged[item.key()] = item.value();
  }
  validate_overrides(spec.kind, merged);
  json doc;
  doc["kind"] = spec.kind;
  doc["out_dir"] = spec.out_dir.empty() ? std::string(".") : spec.out_dir;
  doc["threads"] = spec.threads;
  doc["reproducible"] = spec.reproducible;
  doc["overrides"] = merged;
  return doc;
}

std::vector<std::string> run_experiment(const ExperimentSpec& spec) {
  const json resolved = resolve_experiment(spec);
  const auto t_start = std::chrono::steady_clock::now();
  const fs::path dir = resolved.at("out_dir").get<std::string>();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error("experiment: cannot create " + dir.string() +
                             ": " + ec.message());
  std::vector<std::string> files;
  const json& ov = resolved.at("overrides");
  json extras;
  if (spec.kind == "table1" || spec.kind == "table2")
    extras = run_time_table(spec.kind, ov, dir, spec.threads, files);
  else if (spec.kind == "scpd_order")
    extras = run_scpd_order(ov, dir, spec.threads, files);
  else if (spec.kind == "refined_eps_scan")
    extras = run_refined_scan(ov, dir, spec.threads, files);
  else if (spec.kind == "mollify_order")
    extras = run_mollify_order(ov, dir, spec.threads, files);
  else if (spec.kind == "fem_order")
    extras = run_fem_order(ov, dir, spec.threads, files);
  else if (spec.kind == "weak_init_order")
    extras = run_weak_init_order(ov, dir, spec.threads, files);
  else
    extras = run_pic_experiment(ov, dir, spec.threads, files);

  json meta;
  meta["kind"] = spec.kind;
  meta["resolved"] = resolved;
  meta["git_describe"] = GYROPIC_GIT_DESCRIBE;
  meta["threads"] = spec.threads;
  meta["reproducible"] = spec.reproducible;
  for (const auto& item : extras.items()) meta[item.key()] = item.value();
  const Real seconds =
      std::chrono::duration<Real>(std::chrono::steady_clock::now() - t_start)
          .count();
  meta["timings"] = {{"total_seconds", spec.reproducible ? 0.0 : seconds}};
  files.push_back("meta.json");
  meta["files"] = files;
  const fs::path meta_path = dir / "meta.json";
  std::ofstream out(meta_path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("experiment: cannot open " + meta_path.string());
  out << meta.dump(2) << '\n';
  out.flush();
  if (!out)
    throw std::runtime_error("experiment: write failed for " +
                             meta_path.string());
  return files;
}

}  // namespace gyropic
