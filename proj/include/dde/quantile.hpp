#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dde/mdp.hpp"

namespace dde {

/// Slack when comparing a cumulative weight with a quantile level; absorbs
/// rounding in sums of many small weights.
inline constexpr double kQuantileTolerance = 1e-12;

/// Transport mass below this is treated as rounding residue by w_inf.
inline constexpr double kMassEpsilon = 1e-12;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// tau_m = m / M for m = 0..M.
inline double tau_level(std::size_t m, std::size_t n_atoms) {
  return static_cast<double>(m) / static_cast<double>(n_atoms);
}

/// Midpoint level of the atom with zero-based index m: (m + 0.5) / M.
inline double tau_hat(std::size_t m, std::size_t n_atoms) {
  return (static_cast<double>(m) + 0.5) / static_cast<double>(n_atoms);
}

struct TableShape {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::size_t n_atoms = 0;

  std::size_t pairs() const { return n_states * n_actions; }
  std::size_t size() const { return pairs() * n_atoms; }
  bool operator==(const TableShape&) const = default;
};

/// M sorted atoms per (s,a): the uniform mixture (1/M) sum_m delta_{Z(s,a,m)}.
/// Every constructor and mutator restores the sorted-row form.
class QuantileTable {
 public:
  QuantileTable() = default;

  explicit QuantileTable(TableShape shape, double fill = 0.0)
      : shape_(shape), atoms_(shape.size(), fill) {
    check_shape();
  }

  QuantileTable(TableShape shape, std::vector<double> atoms) : shape_(shape), atoms_(std::move(atoms)) {
    check_shape();
    if (atoms_.size() != shape_.size()) throw std::invalid_argument("QuantileTable: atom count does not match shape");
    for (std::size_t p = 0; p < shape_.pairs(); ++p) sort_row(p);
  }

  const TableShape& shape() const { return shape_; }
  std::size_t n_states() const { return shape_.n_states; }
  std::size_t n_actions() const { return shape_.n_actions; }
  std::size_t n_atoms() const { return shape_.n_atoms; }

  std::span<const double> atoms() const { return atoms_; }

  std::span<const double> row(StateId s, ActionId a) const {
    return {atoms_.data() + offset(s, a), shape_.n_atoms};
  }

  double operator()(StateId s, ActionId a, std::size_t m) const { return atoms_[offset(s, a) + m]; }

  void set_row(StateId s, ActionId a, std::span<const double> values) {
    if (values.size() != shape_.n_atoms) throw std::invalid_argument("QuantileTable::set_row: wrong atom count");
    std::copy(values.begin(), values.end(), atoms_.begin() + static_cast<std::ptrdiff_t>(offset(s, a)));
    sort_row(s * shape_.n_actions + a);
  }

  /// Calls f(s, a, std::span<double>) on every row, then re-sorts the rows.
  template <class F>
  void update_rows(F&& f) {
    for (StateId s = 0; s < shape_.n_states; ++s)
      for (ActionId a = 0; a < shape_.n_actions; ++a) {
        f(s, a, std::span<double>(atoms_.data() + offset(s, a), shape_.n_atoms));
        sort_row(s * shape_.n_actions + a);
      }
  }

  bool operator==(const QuantileTable&) const = default;

 private:
  std::size_t offset(StateId s, ActionId a) const { return (s * shape_.n_actions + a) * shape_.n_atoms; }

  void check_shape() const {
    if (shape_.n_states == 0 || shape_.n_actions == 0 || shape_.n_atoms == 0)
      throw std::invalid_argument("QuantileTable: empty shape");
  }

  void sort_row(std::size_t pair) {
    auto first = atoms_.begin() + static_cast<std::ptrdiff_t>(pair * shape_.n_atoms);
    auto last = first + static_cast<std::ptrdiff_t>(shape_.n_atoms);
    if (!std::is_sorted(first, last)) std::sort(first, last);
  }

  TableShape shape_;
  std::vector<double> atoms_;
};

inline double row_mean(std::span<const double> atoms) {
  return std::accumulate(atoms.begin(), atoms.end(), 0.0) / static_cast<double>(atoms.size());
}

/// Finite mixture sum_i w_i delta_{x_i}; weights need not be uniform.
struct AtomMixture {
  std::vector<double> values;
  std::vector<double> weights;

  static AtomMixture uniform(std::span<const double> atoms) {
    return {std::vector<double>(atoms.begin(), atoms.end()),
            std::vector<double>(atoms.size(), 1.0 / static_cast<double>(atoms.size()))};
  }

  double total_weight() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

  /// Sorted by value, equal values merged, zero weights dropped.
  AtomMixture canonical() const {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [this](std::size_t i, std::size_t j) { return values[i] < values[j]; });
    AtomMixture out;
    out.values.reserve(values.size());
    out.weights.reserve(values.size());
    for (std::size_t i : order) {
      if (weights[i] <= 0.0) continue;
      if (!out.values.empty() && out.values.back() == values[i]) {
        out.weights.back() += weights[i];
      } else {
        out.values.push_back(values[i]);
        out.weights.push_back(weights[i]);
      }
    }
    return out;
  }

  void validate() const {
    if (values.empty() || values.size() != weights.size())
      throw std::invalid_argument("AtomMixture: values and weights must be non-empty and the same length");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) throw std::invalid_argument("AtomMixture: non-finite value");
      if (weights[i] < 0.0) throw std::invalid_argument("AtomMixture: negative weight");
    }
    if (std::abs(total_weight() - 1.0) > kProbabilityTolerance)
      throw std::invalid_argument("AtomMixture: weights do not sum to one");
  }
};

namespace detail {

/// Sorted (value, weight) pairs of a mixture; zero weights dropped.
inline std::vector<std::pair<double, double>> sorted_pairs(std::span<const double> values,
                                                           std::span<const double> weights) {
  std::vector<std::pair<double, double>> out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    if (weights[i] > 0.0) out.emplace_back(values[i], weights[i]);
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  return out;
}

inline std::vector<std::pair<double, double>> sorted_pairs(std::span<const double> atoms) {
  std::vector<std::pair<double, double>> out;
  out.reserve(atoms.size());
  const double w = 1.0 / static_cast<double>(atoms.size());
  for (double x : atoms) out.emplace_back(x, w);
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  return out;
}

/// Index of the leftmost pair whose cumulative weight reaches tau.
inline std::size_t quantile_index(const std::vector<std::pair<double, double>>& pairs, double tau) {
  long double cumulative = 0.0L;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    cumulative += pairs[i].second;
    if (cumulative >= static_cast<long double>(tau) - kQuantileTolerance) return i;
  }
  return pairs.size() - 1;
}

inline void check_tau(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::domain_error("quantile level outside [0,1]");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CDF and quantile function
// ---------------------------------------------------------------------------

/// (1/M) #{m : atom_m <= z}.
inline double cdf(std::span<const double> atoms, double z) {
  const auto below = std::count_if(atoms.begin(), atoms.end(), [z](double x) { return x <= z; });
  return static_cast<double>(below) / static_cast<double>(atoms.size());
}

inline double cdf(const AtomMixture& d, double z) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < d.values.size(); ++i)
    if (d.values[i] <= z) acc += d.weights[i];
  return std::clamp(static_cast<double>(acc), 0.0, 1.0);
}

/// inf{x : tau <= F(x)}; tau = 0 gives the smallest atom.
inline double inverse_cdf(std::span<const double> atoms, double tau) {
  detail::check_tau(tau);
  if (atoms.empty()) throw std::invalid_argument("inverse_cdf: empty distribution");
  const auto n = static_cast<double>(atoms.size());
  auto k = static_cast<std::ptrdiff_t>(std::ceil((tau - kQuantileTolerance) * n));
  k = std::clamp<std::ptrdiff_t>(k, 1, static_cast<std::ptrdiff_t>(atoms.size()));
  if (std::is_sorted(atoms.begin(), atoms.end())) return atoms[static_cast<std::size_t>(k - 1)];
  std::vector<double> sorted(atoms.begin(), atoms.end());
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
  return sorted[static_cast<std::size_t>(k - 1)];
}

inline double inverse_cdf(const AtomMixture& d, double tau) {
  detail::check_tau(tau);
  const auto pairs = detail::sorted_pairs(d.values, d.weights);
  if (pairs.empty()) throw std::invalid_argument("inverse_cdf: empty distribution");
  return pairs[detail::quantile_index(pairs, tau)].first;
}

/// Quantile of a weighted mixture at a single level. Equal weights take an
/// O(n) selection path; otherwise the pairs are sorted.
inline double mixture_quantile(std::vector<double> values, std::span<const double> weights, double tau) {
  detail::check_tau(tau);
  if (values.empty()) throw std::invalid_argument("mixture_quantile: empty distribution");
  const bool uniform_weights =
      std::all_of(weights.begin(), weights.end(), [w0 = weights.front()](double w) { return w == w0; });
  if (uniform_weights) {
    const auto n = static_cast<double>(values.size());
    auto k = static_cast<std::ptrdiff_t>(std::ceil((tau - kQuantileTolerance) * n));
    k = std::clamp<std::ptrdiff_t>(k, 1, static_cast<std::ptrdiff_t>(values.size()));
    std::nth_element(values.begin(), values.begin() + (k - 1), values.end());
    return values[static_cast<std::size_t>(k - 1)];
  }
  const auto pairs = detail::sorted_pairs(values, weights);
  return pairs[detail::quantile_index(pairs, tau)].first;
}

/// [F^{-1}(tau_hat_1), ..., F^{-1}(tau_hat_M)] of a mixture in one sorted sweep.
inline std::vector<double> midpoint_quantiles(const AtomMixture& d, std::size_t n_atoms) {
  if (n_atoms == 0) throw std::invalid_argument("midpoint_quantiles: M must be positive");
  const auto pairs = detail::sorted_pairs(d.values, d.weights);
  if (pairs.empty()) throw std::invalid_argument("midpoint_quantiles: empty distribution");
  std::vector<double> out(n_atoms);
  long double cumulative = pairs.front().second;
  std::size_t i = 0;
  for (std::size_t m = 0; m < n_atoms; ++m) {
    const long double level = static_cast<long double>(tau_hat(m, n_atoms)) - kQuantileTolerance;
    while (cumulative < level && i + 1 < pairs.size()) cumulative += pairs[++i].second;
    out[m] = pairs[i].first;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Wasserstein distances
// ---------------------------------------------------------------------------

namespace detail {

/// Exact w_p between two sorted mixtures by walking the merged breakpoints of
/// their quantile functions.
inline double wasserstein_sorted(const std::vector<std::pair<double, double>>& a,
                                 const std::vector<std::pair<double, double>>& b, double p) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein: empty distribution");
  const bool sup_norm = std::isinf(p);
  std::size_t i = 0, j = 0;
  double ra = a[0].second, rb = b[0].second;
  long double acc = 0.0L;
  double sup = 0.0;
  while (i < a.size() && j < b.size()) {
    const double mass = std::min(ra, rb);
    const double gap = std::abs(a[i].first - b[j].first);
    if (sup_norm) {
      if (mass > kMassEpsilon) sup = std::max(sup, gap);
    } else if (mass > 0.0) {
      acc += static_cast<long double>(mass) * std::pow(static_cast<long double>(gap), p);
    }
    if (ra <= rb) {
      rb -= ra;
      if (++i < a.size()) ra = a[i].second;
      if (rb <= 0.0 && ++j < b.size()) rb = b[j].second;
    } else {
      ra -= rb;
      if (++j < b.size()) rb = b[j].second;
    }
  }
  if (sup_norm) return sup;
  return static_cast<double>(std::pow(acc, 1.0L / static_cast<long double>(p)));
}

inline void check_p(double p) {
  if (!(p >= 1.0)) throw std::domain_error("wasserstein: p must be >= 1");
}

}  // namespace detail

/// w_p between two uniform-weight atom rows (any lengths).
inline double wasserstein(std::span<const double> a, std::span<const double> b, double p) {
  detail::check_p(p);
  if (a.size() == b.size() && !a.empty()) {
    std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    if (std::isinf(p)) {
      double sup = 0.0;
      for (std::size_t m = 0; m < x.size(); ++m) sup = std::max(sup, std::abs(x[m] - y[m]));
      return sup;
    }
    long double acc = 0.0L;
    for (std::size_t m = 0; m < x.size(); ++m) acc += std::pow(static_cast<long double>(std::abs(x[m] - y[m])), p);
    return static_cast<double>(std::pow(acc / static_cast<long double>(x.size()), 1.0L / p));
  }
  return detail::wasserstein_sorted(detail::sorted_pairs(a), detail::sorted_pairs(b), p);
}

inline double wasserstein(const AtomMixture& a, const AtomMixture& b, double p) {
  detail::check_p(p);
  return detail::wasserstein_sorted(detail::sorted_pairs(a.values, a.weights),
                                    detail::sorted_pairs(b.values, b.weights), p);
}

inline double wasserstein(std::span<const double> a, const AtomMixture& b, double p) {
  detail::check_p(p);
  return detail::wasserstein_sorted(detail::sorted_pairs(a), detail::sorted_pairs(b.values, b.weights), p);
}

/// bar w_p: the largest per-pair distance.
inline double sup_wasserstein(const QuantileTable& a, const QuantileTable& b, double p) {
  if (a.shape() != b.shape()) throw std::invalid_argument("sup_wasserstein: shape mismatch");
  double out = 0.0;
  for (StateId s = 0; s < a.n_states(); ++s)
    for (ActionId act = 0; act < a.n_actions(); ++act)
      out = std::max(out, wasserstein(a.row(s, act), b.row(s, act), p));
  return out;
}

// ---------------------------------------------------------------------------
// W1 quantile projection
// ---------------------------------------------------------------------------

/// Reads the inverse CDF at the midpoints tau_hat_m.
template <class InverseCdf>
  requires std::invocable<InverseCdf, double>
std::vector<double> project_w1(InverseCdf&& inverse, std::size_t n_atoms) {
  if (n_atoms == 0) throw std::invalid_argument("project_w1: M must be positive");
  std::vector<double> out(n_atoms);
  for (std::size_t m = 0; m < n_atoms; ++m) out[m] = inverse(tau_hat(m, n_atoms));
  return out;
}

inline std::vector<double> project_w1(const AtomMixture& target, std::size_t n_atoms) {
  return midpoint_quantiles(target, n_atoms);
}

inline std::vector<double> project_w1(const RewardDist& target, std::size_t n_atoms) {
  return project_w1([&target](double tau) { return reward_quantile(target, tau); }, n_atoms);
}

// ---------------------------------------------------------------------------
// Quantile Huber loss
// ---------------------------------------------------------------------------

/// rho_tau^kappa(u) = |tau - 1{u < 0}| * L_kappa(u).
inline double quantile_huber(double tau, double u, double kappa) {
  if (!(kappa > 0.0)) throw std::domain_error("quantile_huber: kappa must be positive");
  detail::check_tau(tau);
  const double weight = std::abs(tau - (u < 0.0 ? 1.0 : 0.0));
  const double au = std::abs(u);
  const double huber = au < kappa ? 0.5 * u * u : kappa * (au - 0.5 * kappa);
  return weight * huber;
}

/// d/du of quantile_huber: |tau - 1{u < 0}| * clip(u, -kappa, kappa).
inline double quantile_huber_derivative(double tau, double u, double kappa) {
  if (!(kappa > 0.0)) throw std::domain_error("quantile_huber: kappa must be positive");
  const double weight = std::abs(tau - (u < 0.0 ? 1.0 : 0.0));
  return weight * std::clamp(u, -kappa, kappa);
}

// ---------------------------------------------------------------------------
// CSV serialisation: "# M=<int>" header, then rows s,a,m,value
// ---------------------------------------------------------------------------

inline void write_quantile_table(std::ostream& os, const QuantileTable& t) {
  os << "# M=" << t.n_atoms() << '\n'
     << "# n_states=" << t.n_states() << '\n'
     << "# n_actions=" << t.n_actions() << '\n'
     << "s,a,m,value\n";
  char buf[40];
  for (StateId s = 0; s < t.n_states(); ++s)
    for (ActionId a = 0; a < t.n_actions(); ++a)
      for (std::size_t m = 0; m < t.n_atoms(); ++m) {
        std::snprintf(buf, sizeof buf, "%.17g", t(s, a, m));
        os << s << ',' << a << ',' << m << ',' << buf << '\n';
      }
}

inline QuantileTable read_quantile_table(std::istream& is) {
  std::size_t n_atoms = 0, n_states = 0, n_actions = 0;
  struct Entry {
    std::size_t s, a, m;
    double v;
  };
  std::vector<Entry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# M=", 0) == 0) n_atoms = std::stoull(line.substr(4));
      else if (line.rfind("# n_states=", 0) == 0) n_states = std::stoull(line.substr(11));
      else if (line.rfind("# n_actions=", 0) == 0) n_actions = std::stoull(line.substr(12));
      continue;
    }
    if (line.rfind("s,a,m,value", 0) == 0) continue;
    std::istringstream row(line);
    std::string f[4];
    for (int k = 0; k < 4; ++k)
      if (!std::getline(row, f[k], ','))
        throw std::runtime_error("quantile table line " + std::to_string(line_no) + ": expected 4 fields");
    entries.push_back({std::stoull(f[0]), std::stoull(f[1]), std::stoull(f[2]), std::stod(f[3])});
  }
  if (n_atoms == 0) throw std::runtime_error("quantile table: missing '# M=' header");
  for (const auto& e : entries) {
    n_states = std::max(n_states, e.s + 1);
    n_actions = std::max(n_actions, e.a + 1);
  }
  TableShape shape{n_states, n_actions, n_atoms};
  if (entries.size() != shape.size()) throw std::runtime_error("quantile table: row count does not match shape");
  std::vector<double> atoms(shape.size());
  for (const auto& e : entries) {
    if (e.m >= n_atoms) throw std::runtime_error("quantile table: atom index out of range");
    atoms[(e.s * n_actions + e.a) * n_atoms + e.m] = e.v;
  }
  return QuantileTable(shape, std::move(atoms));
}

}  // namespace dde
