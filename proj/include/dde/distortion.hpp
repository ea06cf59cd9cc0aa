#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "dde/bellman.hpp"
#include "dde/dataset.hpp"
#include "dde/mdp.hpp"
#include "dde/quantile.hpp"

namespace dde {

/// phi(s,a,tau_m) on the same (s,a,m) grid as a QuantileTable. Unlike
/// QuantileTable the rows are not sorted: phi may be any shape in m.
class DistortionTable {
 public:
  DistortionTable() = default;

  explicit DistortionTable(TableShape shape, double fill = 0.0) : shape_(shape), phi_(shape.size(), fill) {}

  DistortionTable(TableShape shape, std::vector<double> values) : shape_(shape), phi_(std::move(values)) {
    if (phi_.size() != shape_.size()) throw std::invalid_argument("DistortionTable: value count does not match shape");
    for (double v : phi_)
      if (!std::isfinite(v)) throw std::invalid_argument("DistortionTable: non-finite entry");
  }

  /// c(s,a) repeated over every m.
  static DistortionTable broadcast(TableShape shape, std::span<const double> per_pair) {
    if (per_pair.size() != shape.pairs()) throw std::invalid_argument("DistortionTable::broadcast: wrong pair count");
    DistortionTable out(shape);
    for (std::size_t p = 0; p < shape.pairs(); ++p)
      std::fill_n(out.phi_.begin() + static_cast<std::ptrdiff_t>(p * shape.n_atoms), shape.n_atoms, per_pair[p]);
    return out;
  }

  const TableShape& shape() const { return shape_; }
  std::span<const double> values() const { return phi_; }
  std::span<double> values() { return phi_; }

  double operator()(StateId s, ActionId a, std::size_t m) const { return phi_[offset(s, a) + m]; }
  double& operator()(StateId s, ActionId a, std::size_t m) { return phi_[offset(s, a) + m]; }

  std::span<const double> row(StateId s, ActionId a) const { return {phi_.data() + offset(s, a), shape_.n_atoms}; }

  double max() const { return *std::max_element(phi_.begin(), phi_.end()); }
  double min() const { return *std::min_element(phi_.begin(), phi_.end()); }
  bool nonnegative() const { return std::all_of(phi_.begin(), phi_.end(), [](double v) { return v >= 0.0; }); }

  bool operator==(const DistortionTable&) const = default;

 private:
  std::size_t offset(StateId s, ActionId a) const { return (s * shape_.n_actions + a) * shape_.n_atoms; }

  TableShape shape_;
  std::vector<double> phi_;
};

/// Q_phi: Z(s,a,m) - phi(s,a,tau_m), then rows re-sorted. With `pessimistic`
/// set, a table with a negative entry is rejected.
inline QuantileTable distort(const QuantileTable& eta, const DistortionTable& phi, bool pessimistic = true) {
  if (eta.shape() != phi.shape()) throw std::invalid_argument("distort: shape mismatch");
  if (pessimistic && !phi.nonnegative()) throw std::invalid_argument("distort: negative phi in pessimistic mode");
  std::vector<double> atoms(eta.atoms().begin(), eta.atoms().end());
  const auto values = phi.values();
  for (std::size_t i = 0; i < atoms.size(); ++i) atoms[i] -= values[i];
  return QuantileTable(eta.shape(), std::move(atoms));
}

// ---------------------------------------------------------------------------
// Bellman sources
// ---------------------------------------------------------------------------

enum class MissingDataPolicy { error, worst_case_clamp };

struct ModelSource {
  const FiniteMdp* mdp = nullptr;
};

/// Dataset-backed operator. Pairs with no data either raise or are pinned to
/// `worst_case` at every atom.
struct DataSource {
  const OfflineDataset* dataset = nullptr;
  double gamma = 0.9;
  double worst_case = 0.0;
  MissingDataPolicy missing = MissingDataPolicy::worst_case_clamp;
};

using BellmanSource = std::variant<ModelSource, DataSource>;

inline BellmanSource model_source(const FiniteMdp& mdp) { return ModelSource{&mdp}; }

/// Worst case is the lowest return the MDP allows, r_lo / (1 - gamma).
inline BellmanSource data_source(const OfflineDataset& ds, const FiniteMdp& mdp,
                                 MissingDataPolicy missing = MissingDataPolicy::worst_case_clamp) {
  return DataSource{&ds, mdp.gamma, mdp.return_range().lo, missing};
}

/// Pi_{w1} T eta for every pair.
inline QuantileTable projected_bellman_step(const BellmanSource& source, const Policy& pi, const QuantileTable& eta) {
  std::vector<double> atoms(eta.shape().size());
  const std::size_t n_atoms = eta.n_atoms();
  for (StateId s = 0; s < eta.n_states(); ++s)
    for (ActionId a = 0; a < eta.n_actions(); ++a) {
      std::vector<double> row;
      if (const auto* model = std::get_if<ModelSource>(&source)) {
        row = exact_bellman_quantiles(*model->mdp, pi, eta, s, a);
      } else {
        const auto& data = std::get<DataSource>(source);
        if (!data.dataset->covered(s, a)) {
          if (data.missing == MissingDataPolicy::error) throw MissingDataError(s, a);
          row.assign(n_atoms, data.worst_case);
        } else {
          row = empirical_bellman_quantiles(*data.dataset, pi, eta, data.gamma, s, a);
        }
      }
      std::copy(row.begin(), row.end(), atoms.begin() + static_cast<std::ptrdiff_t>((s * eta.n_actions() + a) * n_atoms));
    }
  return QuantileTable(eta.shape(), std::move(atoms));
}

/// One projected DDE step. The target is projected first and phi subtracted on
/// the same tau grid, which equals projecting after distortion because Q_phi
/// acts atom by atom.
inline QuantileTable dde_step(const BellmanSource& source, const Policy& pi, const QuantileTable& eta,
                              const DistortionTable& phi) {
  return distort(projected_bellman_step(source, pi, eta), phi);
}

/// dde_step with c(s,a) broadcast over every atom.
inline QuantileTable uniform_pessimism_step(const BellmanSource& source, const Policy& pi, const QuantileTable& eta,
                                            std::span<const double> c) {
  return dde_step(source, pi, eta, DistortionTable::broadcast(eta.shape(), c));
}

// ---------------------------------------------------------------------------
// Fixed points
// ---------------------------------------------------------------------------

struct FixedPointReport {
  std::size_t iterations = 0;
  double final_delta = 0.0;
  std::vector<double> per_step_ratios;
  bool converged = false;
};

inline void to_json(nlohmann::json& j, const FixedPointReport& r) {
  j = nlohmann::json{{"iterations", r.iterations},
                     {"final_delta", r.final_delta},
                     {"per_step_ratios", r.per_step_ratios},
                     {"converged", r.converged}};
}

using TableOperator = std::function<QuantileTable(const QuantileTable&)>;

/// 10 * log(tol) / log(gamma), rounded up.
inline std::size_t default_max_iterations(double tol, double gamma) {
  return static_cast<std::size_t>(std::ceil(10.0 * std::log(tol) / std::log(gamma)));
}

/// Iterates eta <- step(eta) until bar w_inf between successive tables is at
/// most tol, or max_iter steps. Hitting the budget is reported, not thrown.
inline std::pair<QuantileTable, FixedPointReport> iterate_fixed_point(const TableOperator& step, QuantileTable eta0,
                                                                      double tol, std::size_t max_iter) {
  if (!(tol > 0.0)) throw std::invalid_argument("iterate_fixed_point: tol must be positive");
  FixedPointReport report;
  QuantileTable current = std::move(eta0);
  double previous_delta = -1.0;
  for (std::size_t k = 1; k <= max_iter; ++k) {
    QuantileTable next = step(current);
    const double delta = sup_wasserstein(next, current, kInfinity);
    if (previous_delta > 0.0) report.per_step_ratios.push_back(delta / previous_delta);
    report.iterations = k;
    report.final_delta = delta;
    previous_delta = delta;
    current = std::move(next);
    if (delta <= tol) {
      report.converged = true;
      break;
    }
  }
  return {std::move(current), std::move(report)};
}

/// bar w_p(step(mu), step(nu)) / bar w_p(mu, nu).
inline double contraction_ratio(const TableOperator& step, const QuantileTable& mu, const QuantileTable& nu, double p) {
  const double before = sup_wasserstein(mu, nu, p);
  if (before == 0.0) throw std::invalid_argument("contraction_ratio: mu and nu coincide");
  return sup_wasserstein(step(mu), step(nu), p) / before;
}

struct SandwichBounds {
  QuantileTable lower;
  QuantileTable upper;
};

/// Per-atom bracket for the distorted fixed point:
///   F_inf - phi - gamma * max(phi) / (1 - gamma)  <=  .  <=  F_inf - phi - gamma * min(phi) / (1 - gamma).
/// Both bounds are stored as sorted rows, matching the re-sorted fixed point.
inline SandwichBounds sandwich_bounds(const QuantileTable& f_inf, const DistortionTable& phi, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("sandwich_bounds: gamma out of range");
  if (f_inf.shape() != phi.shape()) throw std::invalid_argument("sandwich_bounds: shape mismatch");
  const double low_shift = gamma * phi.max() / (1.0 - gamma);
  const double high_shift = gamma * phi.min() / (1.0 - gamma);
  std::vector<double> lo(f_inf.atoms().begin(), f_inf.atoms().end());
  std::vector<double> hi(lo);
  const auto values = phi.values();
  for (std::size_t i = 0; i < lo.size(); ++i) {
    lo[i] = lo[i] - values[i] - low_shift;
    hi[i] = hi[i] - values[i] - high_shift;
  }
  return {QuantileTable(f_inf.shape(), std::move(lo)), QuantileTable(f_inf.shape(), std::move(hi))};
}

}  // namespace dde
