#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <vector>

#include "stitchlab/dataset.hpp"
#include "stitchlab/envs.hpp"
#include "stitchlab/occupancy.hpp"

using namespace stitchlab;

namespace {

using Matrix = std::vector<std::vector<double>>;

// Policy-averaged transition matrix from plain loops.
Matrix transition_matrix(const TabularCMP& cmp, const StationaryPolicy& pi) {
  const int S = cmp.num_states;
  Matrix P(S, std::vector<double>(S, 0.0));
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < cmp.num_actions; ++a)
      for (int n = 0; n < S; ++n) P[s][n] += pi(s, a) * cmp.p(s, a, n);
  return P;
}

// (1 - gamma) sum_t gamma^t P^t, truncated once gamma^t is negligible.
Matrix power_series(const TabularCMP& cmp, const StationaryPolicy& pi) {
  const int S = cmp.num_states;
  const Matrix P = transition_matrix(cmp, pi);
  Matrix term(S, std::vector<double>(S, 0.0)), sum(S, std::vector<double>(S, 0.0));
  for (int s = 0; s < S; ++s) term[s][s] = 1.0 - cmp.discount;
  for (int t = 0; t < 5000; ++t) {
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) sum[i][j] += term[i][j];
    Matrix next(S, std::vector<double>(S, 0.0));
    for (int i = 0; i < S; ++i)
      for (int k = 0; k < S; ++k) {
        if (term[i][k] == 0.0) continue;
        for (int j = 0; j < S; ++j) next[i][j] += cmp.discount * term[i][k] * P[k][j];
      }
    term = std::move(next);
  }
  return sum;
}

std::vector<Instance> random_instances(int count, std::uint64_t seed) {
  const Rng root(seed);
  std::vector<Instance> out;
  for (int i = 0; i < count; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    out.push_back(random_instance(rng, 8, 3, 3, 0.9));
  }
  return out;
}

}  // namespace

TEST(Occupancy, SolverMatchesPowerSeries) {
  for (const auto& inst : random_instances(10, 1)) {
    const auto& pi = inst.set.policies[0];
    const OccupancySolver solver(inst.cmp, pi);
    const Matrix oracle = power_series(inst.cmp, pi);
    for (int s = 0; s < inst.cmp.num_states; ++s) {
      const auto row = discounted_occupancy(inst.cmp, pi, s);
      for (int g = 0; g < inst.cmp.num_states; ++g) {
        EXPECT_NEAR(solver.matrix()(s, g), oracle[s][g], 1e-10);
        EXPECT_NEAR(row[g], oracle[s][g], 1e-10);
      }
    }
  }
}

TEST(Occupancy, RowsAreDistributions) {
  for (const auto& inst : random_instances(10, 2)) {
    const OccupancySolver solver(inst.cmp, inst.set.policies.back());
    for (int s = 0; s < inst.cmp.num_states; ++s) {
      EXPECT_NEAR(solver.matrix().row(s).sum(), 1.0, 1e-12);
      EXPECT_GE(solver.matrix().row(s).minCoeff(), -1e-15);
    }
  }
}

TEST(Occupancy, MarginalIsStartWeightedRows) {
  const auto inst = random_instances(1, 3).front();
  const auto& pi = inst.set.policies[0];
  const auto marg = marginal_occupancy(inst.cmp, pi);
  const Matrix oracle = power_series(inst.cmp, pi);
  for (int g = 0; g < inst.cmp.num_states; ++g) {
    double expect = 0.0;
    for (int s = 0; s < inst.cmp.num_states; ++s) expect += inst.cmp.initial_dist[s] * oracle[s][g];
    EXPECT_NEAR(marg[g], expect, 1e-10);
  }
}

TEST(Occupancy, MonteCarloAgreesWithSolve) {
  const auto inst = random_instances(1, 4).front();
  const auto& pi = inst.set.policies[0];
  const auto exact = discounted_occupancy(inst.cmp, pi, 0);
  Rng rng(99);
  const int n = 100000;
  std::vector<double> hist(inst.cmp.num_states, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto t = rng.geometric(1.0 - inst.cmp.discount);
    StateId s = 0;
    for (std::int64_t k = 0; k < t; ++k) {
      const auto a = static_cast<ActionId>(rng.categorical(pi.row(s)));
      s = static_cast<StateId>(rng.categorical(inst.cmp.row(s, a)));
    }
    hist[s] += 1.0 / n;
  }
  double tv = 0.0;
  for (int g = 0; g < inst.cmp.num_states; ++g) tv += 0.5 * std::abs(hist[g] - exact[g]);
  EXPECT_LT(tv, 0.015);
}

TEST(Occupancy, ChainClosedForm) {
  TabularCMP cmp(4, 1, 0.9);
  for (StateId s = 0; s < 3; ++s) cmp.p(s, 0, s + 1) = 1.0;
  cmp.set_absorbing(3);
  cmp.initial_dist[0] = 1.0;
  const auto occ = discounted_occupancy(cmp, StationaryPolicy::uniform(4, 1), 0);
  EXPECT_NEAR(occ[0], 0.1, 1e-14);
  EXPECT_NEAR(occ[1], 0.09, 1e-14);
  EXPECT_NEAR(occ[2], 0.081, 1e-14);
  EXPECT_NEAR(occ[3], 0.729, 1e-14);
}

TEST(Counterexample, TrainTestJointValues) {
  const auto inst = fig1_counterexample(0.9);
  const auto j = train_test_joint(inst.cmp, inst.set, 1, 3);
  EXPECT_EQ(j.train_joint, 0.0);
  // p(s=1) = 0.5 * 0.1, p(3 | 1) = 0.5 * 0.9^2 under the BC policy
  EXPECT_NEAR(j.test_joint, 0.02025, 1e-12);
  EXPECT_NEAR(j.test_joint, (1 - 0.9) * 0.9 * 0.9 / 4, 1e-12);

  // pairs that a single context demonstrates are equal on both sides
  const auto seen = train_test_joint(inst.cmp, inst.set, 1, 4);
  EXPECT_GT(seen.train_joint, 0.0);
  EXPECT_NEAR(seen.train_joint, 0.5 * 0.1 * 0.81, 1e-12);
}

TEST(Counterexample, BcPolicyMixesAtSharedState) {
  const auto inst = fig1_counterexample();
  const auto beta = bc_policy(inst.cmp, inst.set);
  EXPECT_DOUBLE_EQ(beta(0, fig1::kRight), 1.0);
  EXPECT_DOUBLE_EQ(beta(1, fig1::kUp), 1.0);
  EXPECT_NEAR(beta(2, fig1::kUp), 0.5, 1e-12);
  EXPECT_NEAR(beta(2, fig1::kRight), 0.5, 1e-12);
  const auto post = posterior_context(inst.cmp, inst.set, 2);
  EXPECT_NEAR(post[0], 0.5, 1e-12);
}

TEST(Counterexample, JointTablesMatchPairwise) {
  const auto inst = fig1_counterexample();
  const auto t = joint_tables(inst.cmp, inst.set);
  for (StateId s = 0; s < 5; ++s) {
    for (StateId g = 0; g < 5; ++g) {
      const auto j = train_test_joint(inst.cmp, inst.set, s, g);
      EXPECT_NEAR(t.train[s * 5 + g], j.train_joint, 1e-15);
      EXPECT_NEAR(t.test[s * 5 + g], j.test_joint, 1e-15);
    }
  }
}

TEST(MixtureMarginal, HoldsOnRandomInstances) {
  const auto fig = fig1_counterexample();
  EXPECT_LT(verify_mixture_lemma(fig.cmp, fig.set, 1e-9).max_gap, 1e-9);
  for (const auto& inst : random_instances(50, 5)) {
    const auto rep = verify_mixture_lemma(inst.cmp, inst.set, 1e-9);
    EXPECT_TRUE(rep.pass) << rep.max_gap;
  }
}

TEST(MixtureMarginal, BcRowsAreDistributions) {
  for (const auto& inst : random_instances(20, 6)) {
    EXPECT_TRUE(validate_policy(inst.cmp, bc_policy(inst.cmp, inst.set)).empty());
  }
}

TEST(Stitching, ZeroStepIsPosteriorMixtureOfSegments) {
  const auto fig = fig1_counterexample();
  StitchingAnalysis an(fig.cmp, fig.set, 3);
  // from 1 going up only context 0 applies: 2 at t=1, then 4 forever
  const auto d0 = an.distribution(1, fig1::kUp, 0);
  EXPECT_NEAR(d0[2], 0.1, 1e-12);
  EXPECT_NEAR(d0[4], 0.9, 1e-12);
  EXPECT_NEAR(d0[3], 0.0, 1e-15);
  const auto d1 = an.distribution(1, fig1::kUp, 1);
  EXPECT_GT(d1[3], 0.0);
  for (int n = 0; n <= 3; ++n) {
    double total = 0.0;
    for (double x : an.distribution(0, fig1::kRight, n)) total += x;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_THROW(an.distribution(1, fig1::kUp, 4), std::invalid_argument);
}

// The zero-step distribution equals the conditional future-goal law of the
// data; states of the didactic MDP carry their step, so uniform and discounted
// time weighting agree.
TEST(Stitching, ZeroStepMatchesDataFutures) {
  const auto did = didactic(didactic_stochastic_config(0.2));
  const auto& inst = did.instance;
  const auto data = generate_dataset(inst.cmp, inst.set, 20000, 10, 17);
  TripletSampler sampler(data, SamplerConfig{inst.cmp.discount}, Rng(23));
  std::map<std::pair<int, int>, std::map<int, double>> hist;
  std::map<std::pair<int, int>, double> count;
  for (int i = 0; i < 300000; ++i) {
    const Triplet t = sampler.next();
    hist[{t.state, t.action}][t.outcome] += 1.0;
    count[{t.state, t.action}] += 1.0;
  }
  StitchingAnalysis an(inst.cmp, inst.set, 1);
  int checked = 0;
  for (const auto& [key, c] : count) {
    if (c < 2000) continue;
    const auto exact = an.distribution(key.first, key.second, 0);
    double tv = 0.0;
    for (int g = 0; g < inst.cmp.num_states; ++g) {
      auto it = hist[key].find(g);
      tv += 0.5 * std::abs((it == hist[key].end() ? 0.0 : it->second / c) - exact[g]);
    }
    EXPECT_LT(tv, 0.03) << key.first << "," << key.second;
    ++checked;
  }
  EXPECT_GE(checked, 4);
}

TEST(SupportMonotonicity, CounterexampleStrictGrowth) {
  const auto fig = fig1_counterexample();
  const auto rep = support_monotonicity_check(fig.cmp, fig.set, 3);
  EXPECT_TRUE(rep.holds);
  EXPECT_TRUE(rep.violations.empty());
  bool strict = false;
  for (const auto& x : rep.strict_growth) strict |= x[0] == 1 && x[1] == fig1::kUp && x[2] == 0;
  EXPECT_TRUE(strict);
}

TEST(SupportMonotonicity, RandomInstances) {
  for (const auto& inst : random_instances(20, 7)) EXPECT_TRUE(support_monotonicity_check(inst.cmp, inst.set, 3).holds);
  const auto fig = fig1_counterexample();
  EXPECT_THROW(support_monotonicity_check(fig.cmp, fig.set, 4, 3), std::invalid_argument);
}

namespace {
struct GoRight {
  std::vector<double> action_probs(StateId, int) const { return {1.0, 0.0}; }
};
}  // namespace

TEST(PolicyObjective, ChainValue) {
  TabularCMP cmp(4, 2, 0.9);
  for (StateId s = 0; s < 3; ++s) {
    cmp.p(s, 0, s + 1) = 1.0;
    cmp.p(s, 1, s) = 1.0;
  }
  cmp.set_absorbing(3);
  cmp.initial_dist[0] = 1.0;
  const std::vector<std::pair<StateId, StateId>> pairs{{0, 3}, {2, 3}};
  EXPECT_NEAR(policy_objective(cmp, GoRight{}, pairs), (0.729 + 0.9) / 2, 1e-12);
}

TEST(TStep, ZeroStepsIsUnitMass) {
  const auto fig = fig1_counterexample();
  const auto d = t_step_distribution(fig.cmp, bc_policy(fig.cmp, fig.set), 1, 0);
  EXPECT_EQ(d.probs, (std::vector<double>{0, 1, 0, 0, 0}));
}

TEST(TStep, BcSplitsAtSharedState) {
  const auto fig = fig1_counterexample();
  const auto d = t_step_distribution(fig.cmp, bc_policy(fig.cmp, fig.set), 1, 2);
  EXPECT_NEAR(d[3], 0.5, 1e-15);
  EXPECT_NEAR(d[4], 0.5, 1e-15);
  // Monte Carlo at the same time step
  const auto beta = bc_policy(fig.cmp, fig.set);
  Rng rng(31);
  int hits = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto ep = rollout(fig.cmp, beta, 1, 2, rng);
    hits += ep.states.size() == 3 && ep.states[2] == 3;
  }
  EXPECT_NEAR(hits / 10000.0, 0.5, 0.02);
}

TEST(TStep, RandomCmpMatchesMonteCarlo) {
  for (const auto& inst : random_instances(3, 32)) {
    const auto& pi = inst.set.policies[0];
    const int t = 3;
    const auto exact = t_step_distribution(inst.cmp, pi, 0, t);
    std::vector<double> freq(inst.cmp.num_states, 0.0);
    Rng rng(33);
    for (int i = 0; i < 10000; ++i) {
      StateId s = 0;
      for (int k = 0; k < t; ++k) {
        const auto a = static_cast<ActionId>(rng.categorical(pi.row(s)));
        s = static_cast<StateId>(rng.categorical(inst.cmp.row(s, a)));
      }
      freq[s] += 1e-4;
    }
    for (int s = 0; s < inst.cmp.num_states; ++s) EXPECT_NEAR(freq[s], exact[s], 0.02);
  }
}

TEST(Occupancy, AbsorbingStartKeepsAllMass) {
  const auto fig = fig1_counterexample();
  const auto d = discounted_occupancy(fig.cmp, bc_policy(fig.cmp, fig.set), 3);
  EXPECT_NEAR(d[3], 1.0, 1e-15);
}

TEST(Counterexample, BcOccupancyOfStitchedGoal) {
  // gamma^2 / 2 from the start of the up context
  const auto fig = fig1_counterexample(0.9);
  EXPECT_NEAR(discounted_occupancy(fig.cmp, bc_policy(fig.cmp, fig.set), 1)[3], 0.405, 1e-12);
  EXPECT_NEAR(discounted_occupancy(fig.cmp, fig.set.policies[0], 1)[3], 0.0, 1e-15);
}

TEST(Counterexample, Posteriors) {
  const auto fig = fig1_counterexample();
  const auto p2 = posterior_context(fig.cmp, fig.set, 2);
  EXPECT_NEAR(p2[0], 0.5, 1e-12);
  EXPECT_NEAR(p2[1], 0.5, 1e-12);
  EXPECT_EQ(posterior_context(fig.cmp, fig.set, 1), (std::vector<double>{1.0, 0.0}));
  const auto beta = bc_policy(fig.cmp, fig.set);
  EXPECT_DOUBLE_EQ(beta(1, fig1::kUp), 1.0);
}

TEST(SingletonSet, EverythingCollapses) {
  const auto fig = fig1_counterexample();
  const ContextPolicySet single{{1.0}, {fig.set.policies[0]}, {fig.set.start_dists[0]}};
  EXPECT_EQ(posterior_context(fig.cmp, single, 1), (std::vector<double>{1.0}));
  const auto beta = bc_policy(fig.cmp, single);
  for (StateId s = 0; s < 5; ++s)
    for (ActionId a = 0; a < 2; ++a)
      if (s == 1 || s == 2 || s == 4) EXPECT_DOUBLE_EQ(beta(s, a), single.policies[0](s, a));
  EXPECT_LE(verify_mixture_lemma(fig.cmp, single, 1e-9).max_gap, 1e-15);
  const auto tables = joint_tables(fig.cmp, single);
  for (std::size_t i = 0; i < tables.train.size(); ++i) EXPECT_NEAR(tables.train[i], tables.test[i], 1e-15);
  StitchingAnalysis an(fig.cmp, single, 3);
  for (int n = 1; n <= 3; ++n) {
    const auto d0 = an.distribution(1, fig1::kUp, 0);
    const auto dn = an.distribution(1, fig1::kUp, n);
    // waypoint chaining delays the goal, so only the support is preserved
    for (StateId g = 0; g < 5; ++g) EXPECT_EQ(d0[g] > 1e-12, dn[g] > 1e-12) << n << ' ' << g;
  }
  const auto rep = support_monotonicity_check(fig.cmp, single, 2);
  EXPECT_TRUE(rep.holds);
  EXPECT_TRUE(rep.strict_growth.empty());
}

TEST(PolicyObjective, UniformPolicyMatchesMonteCarlo) {
  const auto fig = fig1_counterexample();
  const StationaryPolicy uniform = StationaryPolicy::uniform(5, 2);
  struct Uniform {
    std::vector<double> action_probs(StateId, int) const { return {0.5, 0.5}; }
  };
  const std::vector<std::pair<StateId, StateId>> pair{{1, 3}};
  const double exact = policy_objective(fig.cmp, Uniform{}, pair);
  Rng rng(34);
  int hits = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto t = rng.geometric(1.0 - fig.cmp.discount);
    StateId s = 1;
    for (std::int64_t k = 0; k < t && !fig.cmp.is_absorbing(s); ++k) {
      const auto a = static_cast<ActionId>(rng.categorical(uniform.row(s)));
      s = static_cast<StateId>(rng.categorical(fig.cmp.row(s, a)));
    }
    hits += s == 3;
  }
  EXPECT_NEAR(hits / double(n), exact, 0.01);
  const std::vector<std::pair<StateId, StateId>> self{{3, 3}};
  EXPECT_NEAR(policy_objective(fig.cmp, Uniform{}, self), 1.0, 1e-15);
}
