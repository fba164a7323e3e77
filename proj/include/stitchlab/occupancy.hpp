#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stitchlab/mdp.hpp"

namespace stitchlab {

/// Probability vector over states produced by the occupancy analytics.
struct OccupancyVector {
  std::vector<double> probs;

  double operator[](StateId s) const { return probs[static_cast<std::size_t>(s)]; }
  std::size_t size() const { return probs.size(); }
};

struct JointComparison {
  StateId state = 0;
  StateId goal = 0;
  double train_joint = 0.0;
  double test_joint = 0.0;
};

struct MixtureLemmaReport {
  double max_gap = 0.0;
  bool pass = false;
};

namespace detail {

inline Eigen::VectorXd to_eigen(std::span<const double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

inline OccupancyVector to_occupancy(const Eigen::VectorXd& v) {
  OccupancyVector out;
  out.probs.resize(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out.probs[static_cast<std::size_t>(i)] = std::max(0.0, v[i]);
  return out;
}

}  // namespace detail

/// Policy-averaged transition matrix, P_pi[s][s'] = sum_a pi(a|s) P[s][a][s'].
inline Eigen::MatrixXd policy_transition_matrix(const TabularCMP& cmp,
                                                const StationaryPolicy& policy) {
  if (policy.num_states != cmp.num_states || policy.num_actions != cmp.num_actions)
    throw std::invalid_argument("policy dimensions do not match the CMP");
  const int S = cmp.num_states;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(S, S);
  for (StateId s = 0; s < S; ++s) {
    for (ActionId a = 0; a < cmp.num_actions; ++a) {
      const double w = policy(s, a);
      if (w == 0.0) continue;
      auto row = cmp.row(s, a);
      for (StateId n = 0; n < S; ++n) P(s, n) += w * row[n];
    }
  }
  return P;
}

/// Exact p_t(. | s0 = start) by repeated application of P_pi.
inline OccupancyVector t_step_distribution(const TabularCMP& cmp, const StationaryPolicy& policy,
                                           StateId start, int t) {
  if (!cmp.valid_state(start)) throw std::invalid_argument("t_step_distribution: invalid start");
  if (t < 0) throw std::invalid_argument("t_step_distribution: t must be non-negative");
  const Eigen::MatrixXd P = policy_transition_matrix(cmp, policy);
  Eigen::RowVectorXd d = Eigen::RowVectorXd::Zero(cmp.num_states);
  d[start] = 1.0;
  for (int i = 0; i < t; ++i) d = d * P;
  return detail::to_occupancy(d.transpose());
}

/// Discounted occupancy for every start state at once:
/// M = (1-gamma) (I - gamma P_pi)^{-1}; row s is p_+(. | s0 = s).
class OccupancySolver {
 public:
  OccupancySolver(const TabularCMP& cmp, const StationaryPolicy& policy)
      : gamma_(cmp.discount) {
    const Eigen::MatrixXd P = policy_transition_matrix(cmp, policy);
    const int S = cmp.num_states;
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(S, S) - gamma_ * P;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    const double rcond = lu.rcond();
    if (!(rcond > 1e-14)) throw std::runtime_error("occupancy solve is singular");
    // LU roundoff can leave -1e-17 where the occupancy is exactly zero
    matrix_ = ((1.0 - gamma_) * lu.inverse()).cwiseMax(0.0);
  }

  const Eigen::MatrixXd& matrix() const { return matrix_; }

  OccupancyVector conditional(StateId start) const {
    return detail::to_occupancy(matrix_.row(start).transpose());
  }
  Eigen::VectorXd marginal(std::span<const double> start_dist) const {
    return (detail::to_eigen(start_dist).transpose() * matrix_).transpose();
  }

 private:
  double gamma_;
  Eigen::MatrixXd matrix_;
};

/// p_+(. | s0 = start): solves (I - gamma P_pi^T) x = (1-gamma) e_start.
inline OccupancyVector discounted_occupancy(const TabularCMP& cmp, const StationaryPolicy& policy,
                                            StateId start) {
  if (!cmp.valid_state(start)) throw std::invalid_argument("discounted_occupancy: invalid start");
  const Eigen::MatrixXd P = policy_transition_matrix(cmp, policy);
  const int S = cmp.num_states;
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(S, S) - cmp.discount * P.transpose();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  if (!(lu.rcond() > 1e-14)) throw std::runtime_error("occupancy solve is singular");
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(S);
  rhs[start] = 1.0 - cmp.discount;
  return detail::to_occupancy(lu.solve(rhs));
}

/// p_+(.) = E_{s0 ~ start_dist}[p_+(. | s0)].
inline OccupancyVector marginal_occupancy(const TabularCMP& cmp, const StationaryPolicy& policy,
                                          std::span<const double> start_dist) {
  const Eigen::MatrixXd P = policy_transition_matrix(cmp, policy);
  const int S = cmp.num_states;
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(S, S) - cmp.discount * P.transpose();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  if (!(lu.rcond() > 1e-14)) throw std::runtime_error("occupancy solve is singular");
  return detail::to_occupancy(lu.solve((1.0 - cmp.discount) * detail::to_eigen(start_dist)));
}

inline OccupancyVector marginal_occupancy(const TabularCMP& cmp, const StationaryPolicy& policy) {
  return marginal_occupancy(cmp, policy, cmp.initial_dist);
}

/// Per-context occupancy tables shared by the mixture analytics below.
class MixtureAnalysis {
 public:
  MixtureAnalysis(const TabularCMP& cmp, const ContextPolicySet& set) : cmp_(&cmp), set_(&set) {
    const int H = set.num_contexts();
    solvers_.reserve(static_cast<std::size_t>(H));
    marginals_.reserve(static_cast<std::size_t>(H));
    for (ContextId h = 0; h < H; ++h) {
      solvers_.emplace_back(cmp, set.policies[h]);
      marginals_.push_back(solvers_.back().marginal(set.start_dist(cmp, h)));
    }
  }

  int num_contexts() const { return set_->num_contexts(); }
  const OccupancySolver& solver(ContextId h) const { return solvers_[h]; }
  /// p_+^{beta_h}(s) from the context's own start distribution.
  double marginal(ContextId h, StateId s) const { return marginals_[h][s]; }

  /// Unnormalised p(h) p_+^{beta_h}(s).
  std::vector<double> context_weights(StateId s) const {
    std::vector<double> w(static_cast<std::size_t>(num_contexts()));
    for (ContextId h = 0; h < num_contexts(); ++h) w[h] = set_->prior[h] * marginal(h, s);
    return w;
  }

  /// p(h | s); std::nullopt when no context reaches s.
  std::optional<std::vector<double>> posterior(StateId s) const {
    auto w = context_weights(s);
    double total = 0.0;
    for (double x : w) total += x;
    if (!(total > 0.0)) return std::nullopt;
    for (double& x : w) x /= total;
    return w;
  }

  /// p(h | s, a) ∝ p(h) p_+^{beta_h}(s) beta_h(a|s), falling back to p(h | s)
  /// and then to the prior when the pair is never generated.
  std::vector<double> posterior(StateId s, ActionId a) const {
    std::vector<double> w = context_weights(s);
    double total = 0.0;
    for (ContextId h = 0; h < num_contexts(); ++h) {
      w[h] *= set_->policies[h](s, a);
      total += w[h];
    }
    if (total > 0.0) {
      for (double& x : w) x /= total;
      return w;
    }
    if (auto p = posterior(s)) return *p;
    return set_->prior;
  }

  std::vector<double> posterior_or_prior(StateId s) const {
    if (auto p = posterior(s)) return *p;
    return set_->prior;
  }

 private:
  const TabularCMP* cmp_;
  const ContextPolicySet* set_;
  std::vector<OccupancySolver> solvers_;
  std::vector<Eigen::VectorXd> marginals_;
};

/// p(h | s) = p(h) p_+^{beta_h}(s) / sum_h' p(h') p_+^{beta_h'}(s).
inline std::vector<double> posterior_context(const TabularCMP& cmp, const ContextPolicySet& set,
                                             StateId state) {
  if (!cmp.valid_state(state)) throw std::invalid_argument("posterior_context: invalid state");
  MixtureAnalysis analysis(cmp, set);
  auto p = analysis.posterior(state);
  if (!p) throw std::domain_error("state has zero occupancy under all contexts");
  return *p;
}

/// Behaviour-cloned Markov policy beta(a|s) = sum_h beta_h(a|s) p(h|s).
/// States no context reaches get a uniform action distribution.
inline StationaryPolicy bc_policy(const TabularCMP& cmp, const ContextPolicySet& set) {
  MixtureAnalysis analysis(cmp, set);
  StationaryPolicy beta(cmp.num_states, cmp.num_actions);
  for (StateId s = 0; s < cmp.num_states; ++s) {
    auto post = analysis.posterior(s);
    for (ActionId a = 0; a < cmp.num_actions; ++a) {
      if (!post) {
        beta(s, a) = 1.0 / cmp.num_actions;
        continue;
      }
      double p = 0.0;
      for (ContextId h = 0; h < set.num_contexts(); ++h) p += (*post)[h] * set.policies[h](s, a);
      beta(s, a) = p;
    }
  }
  return beta;
}

/// max_s |p_+^beta(s) - E_h[p_+^{beta_h}(s)]| for the BC policy started from the
/// mixture's start distribution.
inline MixtureLemmaReport verify_mixture_lemma(const TabularCMP& cmp, const ContextPolicySet& set,
                                               double tol) {
  MixtureAnalysis analysis(cmp, set);
  const StationaryPolicy beta = bc_policy(cmp, set);
  const auto bc = marginal_occupancy(cmp, beta, mixture_start_dist(cmp, set));
  MixtureLemmaReport report;
  for (StateId s = 0; s < cmp.num_states; ++s) {
    double mix = 0.0;
    for (ContextId h = 0; h < set.num_contexts(); ++h) mix += set.prior[h] * analysis.marginal(h, s);
    report.max_gap = std::max(report.max_gap, std::abs(bc[s] - mix));
  }
  report.pass = report.max_gap <= tol;
  return report;
}

/// Both sides of the train/test inequality for one (state, goal) pair:
/// train = E_h[p_+^{beta_h}(g|s) p_+^{beta_h}(s)], test = p_+^beta(g|s) p_+^beta(s).
inline JointComparison train_test_joint(const TabularCMP& cmp, const ContextPolicySet& set,
                                        StateId state, StateId goal) {
  if (!cmp.valid_state(state) || !cmp.valid_state(goal))
    throw std::invalid_argument("train_test_joint: invalid state id");
  MixtureAnalysis analysis(cmp, set);
  JointComparison out{state, goal, 0.0, 0.0};
  for (ContextId h = 0; h < set.num_contexts(); ++h) {
    out.train_joint +=
        set.prior[h] * analysis.solver(h).matrix()(state, goal) * analysis.marginal(h, state);
  }
  const StationaryPolicy beta = bc_policy(cmp, set);
  const OccupancySolver bc(cmp, beta);
  const auto bc_marginal = bc.marginal(mixture_start_dist(cmp, set));
  out.test_joint = bc.matrix()(state, goal) * bc_marginal[state];
  return out;
}

/// Full train and test joint tables, indexed [s * S + g].
struct JointTables {
  int num_states = 0;
  std::vector<double> train;
  std::vector<double> test;
};

inline JointTables joint_tables(const TabularCMP& cmp, const ContextPolicySet& set) {
  MixtureAnalysis analysis(cmp, set);
  const int S = cmp.num_states;
  JointTables t{S, std::vector<double>(static_cast<std::size_t>(S) * S, 0.0),
                std::vector<double>(static_cast<std::size_t>(S) * S, 0.0)};
  const OccupancySolver bc(cmp, bc_policy(cmp, set));
  const auto bc_marginal = bc.marginal(mixture_start_dist(cmp, set));
  for (StateId s = 0; s < S; ++s) {
    for (StateId g = 0; g < S; ++g) {
      double train = 0.0;
      for (ContextId h = 0; h < set.num_contexts(); ++h)
        train += set.prior[h] * analysis.solver(h).matrix()(s, g) * analysis.marginal(h, s);
      t.train[static_cast<std::size_t>(s) * S + g] = train;
      t.test[static_cast<std::size_t>(s) * S + g] = bc.matrix()(s, g) * bc_marginal[s];
    }
  }
  return t;
}

/// Goal distributions of n-step stitching policies, p^{n-step}(g | s, a).
/// The first segment starts after the action (its successor is the t = 1
/// state); every later segment runs a geometric duration from the switch
/// state under a context drawn from p(h | w).
class StitchingAnalysis {
 public:
  StitchingAnalysis(const TabularCMP& cmp, const ContextPolicySet& set, int max_n = 3)
      : cmp_(&cmp), set_(&set), mixture_(cmp, set), max_n_(max_n) {
    const int S = cmp.num_states;
    switch_kernel_ = Eigen::MatrixXd::Zero(S, S);
    for (StateId w = 0; w < S; ++w) {
      const auto post = mixture_.posterior_or_prior(w);
      for (ContextId h = 0; h < set.num_contexts(); ++h) {
        if (post[h] == 0.0) continue;
        switch_kernel_.row(w) += post[h] * mixture_.solver(h).matrix().row(w);
      }
    }
  }

  int max_n() const { return max_n_; }
  const MixtureAnalysis& mixture() const { return mixture_; }

  std::vector<double> distribution(StateId s, ActionId a, int n) const {
    if (!cmp_->valid_state(s) || !cmp_->valid_action(a))
      throw std::invalid_argument("n_step_goal_distribution: invalid state or action");
    if (n < 0) throw std::invalid_argument("n_step_goal_distribution: n must be >= 0");
    if (n > max_n_)
      throw std::invalid_argument("n_step_goal_distribution: n = " + std::to_string(n) +
                                  " exceeds the enumeration cap " + std::to_string(max_n_));
    const int S = cmp_->num_states;
    const auto post = mixture_.posterior(s, a);
    const Eigen::RowVectorXd next = detail::to_eigen(cmp_->row(s, a)).transpose();
    Eigen::RowVectorXd d = Eigen::RowVectorXd::Zero(S);
    for (ContextId h = 0; h < set_->num_contexts(); ++h) {
      if (post[h] == 0.0) continue;
      d += post[h] * (next * mixture_.solver(h).matrix());
    }
    for (int i = 0; i < n; ++i) d = d * switch_kernel_;
    std::vector<double> out(static_cast<std::size_t>(S));
    for (int g = 0; g < S; ++g) out[static_cast<std::size_t>(g)] = d[g];
    return out;
  }

 private:
  const TabularCMP* cmp_;
  const ContextPolicySet* set_;
  MixtureAnalysis mixture_;
  int max_n_;
  Eigen::MatrixXd switch_kernel_;
};

inline std::vector<double> n_step_goal_distribution(const TabularCMP& cmp,
                                                    const ContextPolicySet& set, StateId state,
                                                    ActionId action, int n, int max_n = 3) {
  return StitchingAnalysis(cmp, set, max_n).distribution(state, action, n);
}

struct SupportMonotonicityReport {
  bool holds = true;
  /// (state, action, n) where supp(n-step) is a strict subset of supp(n+1-step).
  std::vector<std::array<int, 3>> strict_growth;
  /// (state, action, n, goal) where the inclusion fails.
  std::vector<std::array<int, 4>> violations;
};

inline constexpr double kSupportThreshold = 1e-12;

/// Checks supp p^{n-step}(.|s,a) ⊆ supp p^{(n+1)-step}(.|s,a) for all (s, a)
/// and n < n_max.
inline SupportMonotonicityReport support_monotonicity_check(const TabularCMP& cmp,
                                                            const ContextPolicySet& set,
                                                            int n_max, int cap = 3) {
  if (n_max > cap) throw std::invalid_argument("support_monotonicity_check: n_max exceeds cap");
  StitchingAnalysis analysis(cmp, set, cap);
  SupportMonotonicityReport report;
  for (StateId s = 0; s < cmp.num_states; ++s) {
    for (ActionId a = 0; a < cmp.num_actions; ++a) {
      auto prev = analysis.distribution(s, a, 0);
      for (int n = 0; n < n_max; ++n) {
        auto next = analysis.distribution(s, a, n + 1);
        bool grew = false;
        for (StateId g = 0; g < cmp.num_states; ++g) {
          const bool in_prev = prev[g] > kSupportThreshold;
          const bool in_next = next[g] > kSupportThreshold;
          if (in_prev && !in_next) {
            report.holds = false;
            report.violations.push_back({s, a, n, g});
          }
          if (in_next && !in_prev) grew = true;
        }
        if (grew) report.strict_growth.push_back({s, a, n});
        prev = std::move(next);
      }
    }
  }
  return report;
}

/// Goal-conditioned slice pi(. | ., g) of an outcome-conditioned policy.
template <OutcomePolicy Policy>
StationaryPolicy goal_slice(const TabularCMP& cmp, const Policy& policy, StateId goal) {
  StationaryPolicy slice(cmp.num_states, cmp.num_actions);
  for (StateId s = 0; s < cmp.num_states; ++s) {
    const std::vector<double> row = policy.action_probs(s, goal);
    for (ActionId a = 0; a < cmp.num_actions; ++a) slice(s, a) = row[static_cast<std::size_t>(a)];
  }
  return slice;
}

/// Mean over pairs of p_+^{pi(.|.,g)}(g | s0 = s), each an exact solve.
template <OutcomePolicy Policy>
double policy_objective(const TabularCMP& cmp, const Policy& policy,
                        std::span<const std::pair<StateId, StateId>> pairs) {
  if (pairs.empty()) throw std::invalid_argument("policy_objective: no pairs");
  double total = 0.0;
  for (auto [s, g] : pairs) total += discounted_occupancy(cmp, goal_slice(cmp, policy, g), s)[g];
  return total / static_cast<double>(pairs.size());
}

}  // namespace stitchlab
