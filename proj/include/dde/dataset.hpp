#pragma once

#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dde/mdp.hpp"
#include "dde/simulation.hpp"

namespace dde {

struct Transition {
  StateId s = 0;
  ActionId a = 0;
  double r = 0.0;
  StateId s_next = 0;

  bool operator==(const Transition&) const = default;
};

/// One (r, s') element of D(s,a).
struct Outcome {
  double r = 0.0;
  StateId s_next = 0;
};

/// Batch dataset D with derived counts N(s,a) and index D(s,a).
class OfflineDataset {
 public:
  OfflineDataset() = default;

  OfflineDataset(std::size_t n_states, std::size_t n_actions, std::vector<Transition> tuples)
      : n_states_(n_states), n_actions_(n_actions), tuples_(std::move(tuples)),
        index_(n_states * n_actions) {
    for (const auto& t : tuples_) {
      if (t.s >= n_states || t.a >= n_actions || t.s_next >= n_states)
        throw std::out_of_range("OfflineDataset: tuple index out of range");
      index_[t.s * n_actions + t.a].push_back({t.r, t.s_next});
    }
  }

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  std::size_t size() const { return tuples_.size(); }
  bool empty() const { return tuples_.empty(); }
  std::span<const Transition> tuples() const { return tuples_; }

  std::size_t count(StateId s, ActionId a) const { return index_[s * n_actions_ + a].size(); }
  std::span<const Outcome> outcomes(StateId s, ActionId a) const { return index_[s * n_actions_ + a]; }
  bool covered(StateId s, ActionId a) const { return count(s, a) > 0; }

 private:
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<Transition> tuples_;
  std::vector<std::vector<Outcome>> index_;
};

/// (s,a) drawn i.i.d. from `weights` over S x A (row-major, s * nA + a).
struct IidFromWeights {
  std::vector<double> weights;
};

/// Episodes of at most `horizon` steps from rho0 under the behaviour policy.
struct Trajectories {
  std::size_t horizon = 100;
};

using SamplingScheme = std::variant<IidFromWeights, Trajectories>;

/// Weights w(s,a) = pi_b(a|s) / |S|: uniform over states, behaviour over actions.
inline std::vector<double> behavior_pair_weights(const Policy& behavior) {
  std::vector<double> w(behavior.probs.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = behavior.probs[i] / static_cast<double>(behavior.n_states);
  return w;
}

inline OfflineDataset generate_offline_dataset(const FiniteMdp& mdp, const Policy& behavior, std::size_t n,
                                               const SamplingScheme& scheme, Rng& rng) {
  if (n == 0) throw std::invalid_argument("generate_offline_dataset: n must be at least 1");
  std::vector<Transition> tuples;
  tuples.reserve(n);
  if (const auto* iid = std::get_if<IidFromWeights>(&scheme)) {
    if (iid->weights.size() != mdp.n_states * mdp.n_actions)
      throw std::invalid_argument("generate_offline_dataset: weights must cover S x A");
    double total = 0.0;
    for (double w : iid->weights) {
      if (w < 0.0) throw std::invalid_argument("generate_offline_dataset: negative weight");
      total += w;
    }
    if (!(total > 0.0)) throw std::invalid_argument("generate_offline_dataset: zero-support weights");
    std::vector<double> probs(iid->weights);
    for (double& p : probs) p /= total;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t pair = sample_categorical(probs, rng);
      const StateId s = pair / mdp.n_actions;
      const ActionId a = pair % mdp.n_actions;
      const auto step = sample_step(mdp, s, a, rng);
      tuples.push_back({s, a, step.r, step.s_next});
    }
  } else {
    const auto& traj = std::get<Trajectories>(scheme);
    if (traj.horizon == 0) throw std::invalid_argument("generate_offline_dataset: zero horizon");
    while (tuples.size() < n) {
      StateId s = sample_categorical(mdp.rho0, rng);
      for (std::size_t t = 0; t < traj.horizon && tuples.size() < n; ++t) {
        const ActionId a = sample_categorical(behavior.row(s), rng);
        const auto step = sample_step(mdp, s, a, rng);
        tuples.push_back({s, a, step.r, step.s_next});
        s = step.s_next;
      }
    }
  }
  return OfflineDataset(mdp.n_states, mdp.n_actions, std::move(tuples));
}

// ---------------------------------------------------------------------------
// Flat text serialisation:
//   # seed=<u64>
//   # mdp_hash=<hex>
//   s,a,r,s_next
//   <rows, r at 17 significant digits>
// ---------------------------------------------------------------------------

struct DatasetFile {
  OfflineDataset dataset;
  std::uint64_t seed = 0;
  std::string mdp_hash;
};

inline void write_dataset(std::ostream& os, const OfflineDataset& ds, std::uint64_t seed,
                          const std::string& hash) {
  os << "# seed=" << seed << '\n' << "# mdp_hash=" << hash << '\n' << "s,a,r,s_next\n";
  char buf[40];
  for (const auto& t : ds.tuples()) {
    std::snprintf(buf, sizeof buf, "%.17g", t.r);
    os << t.s << ',' << t.a << ',' << buf << ',' << t.s_next << '\n';
  }
}

inline DatasetFile read_dataset(std::istream& is, std::size_t n_states, std::size_t n_actions) {
  DatasetFile out;
  std::vector<Transition> tuples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# seed=", 0) == 0) out.seed = std::stoull(line.substr(7));
      else if (line.rfind("# mdp_hash=", 0) == 0) out.mdp_hash = line.substr(11);
      continue;
    }
    if (line.rfind("s,a,r,s_next", 0) == 0) continue;
    std::istringstream row(line);
    std::string field[4];
    for (int k = 0; k < 4; ++k)
      if (!std::getline(row, field[k], ','))
        throw std::runtime_error("dataset line " + std::to_string(line_no) + ": expected 4 fields");
    try {
      tuples.push_back({std::stoull(field[0]), std::stoull(field[1]), std::stod(field[2]), std::stoull(field[3])});
    } catch (const std::logic_error&) {
      throw std::runtime_error("dataset line " + std::to_string(line_no) + ": malformed number");
    }
  }
  out.dataset = OfflineDataset(n_states, n_actions, std::move(tuples));
  return out;
}

}  // namespace dde
