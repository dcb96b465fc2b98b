#include <gyropic/diagnostics.hpp>

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace gyropic {

Real max_error(const Ensemble& a, const Ensemble& b) {
  if (a.size() != b.size()) {
    std::ostringstream msg;
    msg << "max_error: ensemble sizes differ (" << a.size() << " vs "
        << b.size() << ")";
    throw std::invalid_argument(msg.str());
  }
  Real worst = 0.0;
  for (size_t j = 0; j < a.size(); ++j) {
    const Real err = (a.X[j] - b.X[j]).norm() + (a.V[j] - b.V[j]).norm();
    if (err > worst) worst = err;
  }
  return worst;
}

Vector3 parallel_error(const Vector3& w_num, const Vector3& w_ref,
                       const Vector3& B_at_ref) {
  const Real nb = B_at_ref.norm();
  if (!(nb > 0.0))
    throw std::invalid_argument(
        "parallel_error: field vanishes at the reference state");
  const Vector3 bbar = B_at_ref / nb;
  return bbar.dot(w_num - w_ref) * bbar;
}

Real discrete_hamiltonian(const Ensemble& ens, const NodalField& phi) {
  Real kinetic = 0.0;
  for (size_t j = 0; j < ens.size(); ++j)
    kinetic += 0.5 * ens.alpha[j] * ens.V[j].squaredNorm();
  return kinetic + 0.5 * field_energy(phi);
}

std::vector<ErrorRecord> order_table(std::vector<ErrorRecord> records) {
  for (size_t i = 0; i < records.size(); ++i) {
    records[i].order.reset();
    if (i == 0) continue;
    const Real prev = records[i - 1].step_tilde;
    if (std::abs(records[i].step_tilde - 0.5 * prev) >
        1e-9 * std::abs(prev)) {
      std::ostringstream msg;
      msg << "order_table: steps must halve, got " << prev << " then "
          << records[i].step_tilde;
      throw std::invalid_argument(msg.str());
    }
    if (std::isfinite(records[i - 1].e) && records[i - 1].e > 0.0 &&
        std::isfinite(records[i].e) && records[i].e > 0.0)
      records[i].order = std::log2(records[i - 1].e / records[i].e);
  }
  return records;
}

void write_order_csv(const std::vector<ErrorRecord>& records,
                     std::ostream& out) {
  out << "step_tilde,step_t,eps,error,order\n";
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.step_tilde << ',' << r.step_t << ',' << r.eps << ',' << r.e
        << ',';
    if (r.order) out << *r.order;
    out << '\n';
  }
}

void write_order_gnuplot(const std::vector<ErrorRecord>& records,
                         std::ostream& out, const std::string& title) {
  out << "# " << title << "\n";
  out << "set logscale xy\n";
  out << "set xlabel 'step'\n";
  out << "set ylabel 'error'\n";
  out << "set key left top\n";
  out << std::setprecision(17);
  out << "$DATA << EOD\n";
  for (const auto& r : records) out << r.step_tilde << ' ' << r.e << '\n';
  out << "EOD\n";
  out << "plot $DATA using 1:2 with linespoints title '" << title << "'\n";
}

}  // namespace gyropic
