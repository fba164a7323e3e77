#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stitchlab/random.hpp"

namespace stitchlab {

using StateId = int;
using ActionId = int;
using ContextId = int;

inline constexpr double kProbTolerance = 1e-12;

/// Finite controlled Markov process with a dense transition tensor P[s][a][s'].
struct TabularCMP {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> transitions;   // size S*A*S
  std::vector<double> initial_dist;  // size S
  double discount = 0.9;
  std::vector<StateId> absorbing;    // sorted, unique
  std::vector<double> rewards;       // empty, or size S*A

  TabularCMP() = default;
  TabularCMP(int states, int actions, double gamma)
      : num_states(states),
        num_actions(actions),
        transitions(static_cast<std::size_t>(states) * actions * states, 0.0),
        initial_dist(static_cast<std::size_t>(states), 0.0),
        discount(gamma) {}

  std::size_t index(StateId s, ActionId a, StateId next) const {
    return (static_cast<std::size_t>(s) * num_actions + a) * num_states + next;
  }
  double& p(StateId s, ActionId a, StateId next) { return transitions[index(s, a, next)]; }
  double p(StateId s, ActionId a, StateId next) const { return transitions[index(s, a, next)]; }

  std::span<const double> row(StateId s, ActionId a) const {
    return {transitions.data() + index(s, a, 0), static_cast<std::size_t>(num_states)};
  }

  bool is_absorbing(StateId s) const {
    return std::binary_search(absorbing.begin(), absorbing.end(), s);
  }
  void set_absorbing(StateId s) {
    auto it = std::lower_bound(absorbing.begin(), absorbing.end(), s);
    if (it == absorbing.end() || *it != s) absorbing.insert(it, s);
    for (ActionId a = 0; a < num_actions; ++a) {
      for (StateId n = 0; n < num_states; ++n) p(s, a, n) = (n == s) ? 1.0 : 0.0;
    }
  }

  bool has_rewards() const { return !rewards.empty(); }
  double reward(StateId s, ActionId a) const {
    return rewards.empty() ? 0.0 : rewards[static_cast<std::size_t>(s) * num_actions + a];
  }

  bool valid_state(StateId s) const { return s >= 0 && s < num_states; }
  bool valid_action(ActionId a) const { return a >= 0 && a < num_actions; }
};

/// Markov policy pi[s][a].
struct StationaryPolicy {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> probs;  // size S*A

  StationaryPolicy() = default;
  StationaryPolicy(int states, int actions)
      : num_states(states),
        num_actions(actions),
        probs(static_cast<std::size_t>(states) * actions, 0.0) {}

  static StationaryPolicy uniform(int states, int actions) {
    StationaryPolicy pi(states, actions);
    std::fill(pi.probs.begin(), pi.probs.end(), 1.0 / actions);
    return pi;
  }
  /// Deterministic policy from one action per state.
  static StationaryPolicy deterministic(int actions, std::span<const ActionId> choice) {
    StationaryPolicy pi(static_cast<int>(choice.size()), actions);
    for (std::size_t s = 0; s < choice.size(); ++s) pi(static_cast<StateId>(s), choice[s]) = 1.0;
    return pi;
  }

  double& operator()(StateId s, ActionId a) {
    return probs[static_cast<std::size_t>(s) * num_actions + a];
  }
  double operator()(StateId s, ActionId a) const {
    return probs[static_cast<std::size_t>(s) * num_actions + a];
  }
  std::span<const double> row(StateId s) const {
    return {probs.data() + static_cast<std::size_t>(s) * num_actions,
            static_cast<std::size_t>(num_actions)};
  }
};

/// Data-collecting mixture: one Markov policy per hidden context with a prior
/// p(h). Contexts may carry their own start distribution; an empty entry means
/// the CMP's shared initial distribution.
struct ContextPolicySet {
  std::vector<double> prior;
  std::vector<StationaryPolicy> policies;
  std::vector<std::vector<double>> start_dists;

  int num_contexts() const { return static_cast<int>(policies.size()); }

  std::span<const double> start_dist(const TabularCMP& cmp, ContextId h) const {
    if (static_cast<std::size_t>(h) < start_dists.size() && !start_dists[h].empty())
      return start_dists[h];
    return cmp.initial_dist;
  }
};

/// Start distribution of the whole mixture, sum_h p(h) p0_h.
inline std::vector<double> mixture_start_dist(const TabularCMP& cmp, const ContextPolicySet& set) {
  std::vector<double> p0(cmp.num_states, 0.0);
  for (ContextId h = 0; h < set.num_contexts(); ++h) {
    auto d = set.start_dist(cmp, h);
    for (StateId s = 0; s < cmp.num_states; ++s) p0[s] += set.prior[h] * d[s];
  }
  return p0;
}

/// Truncated geometric switching-duration law, p(t) ∝ (1-gamma) gamma^t for
/// t = 0..ceil(10/(1-gamma)), renormalised.
inline std::vector<double> geometric_durations(double gamma) {
  const auto horizon = static_cast<std::size_t>(std::ceil(10.0 / (1.0 - gamma)));
  std::vector<double> d(horizon + 1);
  double total = 0.0;
  for (std::size_t t = 0; t <= horizon; ++t) {
    d[t] = (1.0 - gamma) * std::pow(gamma, static_cast<double>(t));
    total += d[t];
  }
  for (double& x : d) x /= total;
  return d;
}

/// Non-stationary n-step stitching policy: resamples (context, duration)
/// `num_switches` times along a trajectory.
struct SwitchingPolicy {
  ContextPolicySet base;
  int num_switches = 0;
  std::vector<double> duration_dist;
};

/// One episode. `hidden_context` is analysis-only metadata; learners never
/// see it.
struct Trajectory {
  std::vector<StateId> states;
  std::vector<ActionId> actions;
  std::vector<double> rewards;
  ContextId hidden_context = 0;

  std::size_t num_steps() const { return actions.size(); }
  bool operator==(const Trajectory&) const = default;
};

namespace detail {
inline std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
inline bool is_distribution(std::span<const double> p) {
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) return false;
    total += x;
  }
  return std::abs(total - 1.0) <= kProbTolerance;
}
}  // namespace detail

/// Anything that yields pi(. | state, outcome) as a probability vector.
template <typename P>
concept OutcomePolicy = requires(const P& p, StateId s, int outcome) {
  { p.action_probs(s, outcome) } -> std::convertible_to<std::vector<double>>;
};

/// Returns one message per violated invariant; empty iff the CMP is valid.
inline std::vector<std::string> validate_cmp(const TabularCMP& cmp) {
  std::vector<std::string> report;
  if (cmp.num_states <= 0) report.push_back("num_states must be positive");
  if (cmp.num_actions <= 0) report.push_back("num_actions must be positive");
  if (!report.empty()) return report;
  const std::size_t S = cmp.num_states;
  if (cmp.transitions.size() != S * cmp.num_actions * S) {
    report.push_back("transition tensor has wrong size");
    return report;
  }
  if (!(cmp.discount > 0.0 && cmp.discount < 1.0))
    report.push_back("discount " + detail::fmt_double(cmp.discount) + " outside (0,1)");
  if (cmp.initial_dist.size() != S || !detail::is_distribution(cmp.initial_dist))
    report.push_back("initial distribution does not sum to 1");
  for (StateId s = 0; s < cmp.num_states; ++s) {
    for (ActionId a = 0; a < cmp.num_actions; ++a) {
      auto row = cmp.row(s, a);
      if (!detail::is_distribution(row)) {
        double total = 0.0;
        for (double x : row) total += x;
        report.push_back("transition row (" + std::to_string(s) + "," + std::to_string(a) +
                         ") sums to " + detail::fmt_double(total) + " or has negative entries");
      }
    }
  }
  for (StateId s : cmp.absorbing) {
    if (!cmp.valid_state(s)) {
      report.push_back("absorbing state " + std::to_string(s) + " out of range");
      continue;
    }
    for (ActionId a = 0; a < cmp.num_actions; ++a) {
      if (cmp.p(s, a, s) != 1.0) {
        report.push_back("absorbing state " + std::to_string(s) + " has P[s][" +
                         std::to_string(a) + "][s] = " + detail::fmt_double(cmp.p(s, a, s)));
      }
    }
  }
  if (!cmp.rewards.empty() && cmp.rewards.size() != S * cmp.num_actions)
    report.push_back("reward tensor has wrong size");
  return report;
}

/// Violations of a policy's row-stochastic invariant against CMP dimensions.
inline std::vector<std::string> validate_policy(const TabularCMP& cmp, const StationaryPolicy& pi) {
  std::vector<std::string> report;
  if (pi.num_states != cmp.num_states || pi.num_actions != cmp.num_actions) {
    report.push_back("policy dimensions do not match the CMP");
    return report;
  }
  for (StateId s = 0; s < pi.num_states; ++s) {
    if (!detail::is_distribution(pi.row(s)))
      report.push_back("policy row " + std::to_string(s) + " is not a distribution");
  }
  return report;
}

inline std::vector<std::string> validate_policy_set(const TabularCMP& cmp,
                                                    const ContextPolicySet& set) {
  std::vector<std::string> report;
  if (set.policies.empty()) report.push_back("policy set has no contexts");
  if (set.prior.size() != set.policies.size() || !detail::is_distribution(set.prior))
    report.push_back("context prior is not a distribution over the contexts");
  for (ContextId h = 0; h < set.num_contexts(); ++h) {
    for (auto& msg : validate_policy(cmp, set.policies[h]))
      report.push_back("context " + std::to_string(h) + ": " + msg);
    auto d = set.start_dist(cmp, h);
    if (d.size() != static_cast<std::size_t>(cmp.num_states) || !detail::is_distribution(d))
      report.push_back("context " + std::to_string(h) + ": start distribution invalid");
  }
  return report;
}

/// Rolls out any action rule `choose(state, step, rng) -> action` for at most
/// `horizon` actions. The episode stops right after entering an absorbing
/// state; the absorbing tail is implicit.
template <typename ActionRule>
  requires std::invocable<ActionRule&, StateId, int, Rng&>
Trajectory rollout_with(const TabularCMP& cmp, StateId start, int horizon, Rng& rng,
                        ActionRule&& choose) {
  if (!cmp.valid_state(start)) throw std::invalid_argument("rollout: invalid start state");
  if (horizon < 1) throw std::invalid_argument("rollout: horizon must be >= 1");
  Trajectory traj;
  traj.states.push_back(start);
  StateId s = start;
  for (int step = 0; step < horizon && !cmp.is_absorbing(s); ++step) {
    const ActionId a = choose(s, step, rng);
    const auto next = static_cast<StateId>(rng.categorical(cmp.row(s, a)));
    traj.actions.push_back(a);
    traj.rewards.push_back(cmp.reward(s, a));
    traj.states.push_back(next);
    s = next;
  }
  return traj;
}

inline Trajectory rollout(const TabularCMP& cmp, const StationaryPolicy& policy, StateId start,
                          int horizon, Rng& rng) {
  return rollout_with(cmp, start, horizon, rng, [&](StateId s, int, Rng& r) {
    return static_cast<ActionId>(r.categorical(policy.row(s)));
  });
}

/// Samples h ~ p(h), a start from the context's start distribution, then
/// follows beta_h. The context is recorded as hidden metadata.
inline Trajectory rollout_mixture(const TabularCMP& cmp, const ContextPolicySet& set, int horizon,
                                  Rng& rng) {
  const auto h = static_cast<ContextId>(rng.categorical(set.prior));
  const auto start = static_cast<StateId>(rng.categorical(set.start_dist(cmp, h)));
  Trajectory traj = rollout(cmp, set.policies[h], start, horizon, rng);
  traj.hidden_context = h;
  return traj;
}

/// n-step stitching rollout: follow beta_{h1} for t1 steps, then resample
/// (h, t) at each of the `num_switches` switches; the last context runs to the
/// end of the episode.
inline Trajectory switching_rollout(const TabularCMP& cmp, const SwitchingPolicy& policy,
                                    StateId start, int horizon, Rng& rng) {
  if (policy.num_switches < 0) throw std::invalid_argument("switching_rollout: negative switches");
  const auto& set = policy.base;
  auto h = static_cast<ContextId>(rng.categorical(set.prior));
  const ContextId first = h;
  int switches_left = policy.num_switches;
  std::int64_t remaining =
      switches_left > 0 ? static_cast<std::int64_t>(rng.categorical(policy.duration_dist)) : -1;
  Trajectory traj = rollout_with(cmp, start, horizon, rng, [&](StateId s, int, Rng& r) {
    while (switches_left > 0 && remaining == 0) {
      h = static_cast<ContextId>(r.categorical(set.prior));
      --switches_left;
      remaining = switches_left > 0 ? static_cast<std::int64_t>(r.categorical(policy.duration_dist))
                                    : -1;
    }
    if (remaining > 0) --remaining;
    return static_cast<ActionId>(r.categorical(set.policies[h].row(s)));
  });
  traj.hidden_context = first;
  return traj;
}

/// FNV-1a fingerprint of the CMP's dimensions, dynamics and start law.
inline std::string cmp_fingerprint(const TabularCMP& cmp) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    h = fnv1a64(std::string_view(static_cast<const char*>(data), n), h);
  };
  feed(&cmp.num_states, sizeof cmp.num_states);
  feed(&cmp.num_actions, sizeof cmp.num_actions);
  feed(&cmp.discount, sizeof cmp.discount);
  feed(cmp.transitions.data(), cmp.transitions.size() * sizeof(double));
  feed(cmp.initial_dist.data(), cmp.initial_dist.size() * sizeof(double));
  feed(cmp.absorbing.data(), cmp.absorbing.size() * sizeof(StateId));
  feed(cmp.rewards.data(), cmp.rewards.size() * sizeof(double));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace stitchlab
