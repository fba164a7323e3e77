#include <gtest/gtest.h>

#include <map>
#include <set>

#include "stitchlab/augmentation.hpp"
#include "stitchlab/envs.hpp"

using namespace stitchlab;

namespace {

struct Setup {
  Instance inst;
  TrajectoryDataset data;
  ClusterIndex index;
};

Setup didactic_setup(double flip, std::size_t episodes, std::uint64_t seed) {
  Setup s{didactic(didactic_stochastic_config(flip)).instance, {}, {}};
  s.data = generate_dataset(s.inst.cmp, s.inst.set, episodes, 10, seed);
  s.index = exact_state_grouping(s.data);
  return s;
}

}  // namespace

TEST(Augment, EpsilonZeroKeepsOriginalTriplets) {
  auto s = didactic_setup(0.2, 500, 1);
  AugmentationConfig cfg;
  cfg.epsilon_prob = 0.0;
  AugmentedSampler sampler(s.data, s.index, cfg, Rng(2));
  for (int i = 0; i < 2000; ++i) {
    const Triplet t = sampler.next();
    EXPECT_EQ(t.provenance, Provenance::original);
    EXPECT_EQ(t.goal_episode, t.episode);
    EXPECT_GT(t.goal_timestep, t.timestep);
  }
}

TEST(Augment, StateAndActionNeverChange) {
  auto s = didactic_setup(0.2, 500, 3);
  TripletSampler base(s.data, SamplerConfig{0.9}, Rng(4));
  AugmentationConfig cfg;
  cfg.epsilon_prob = 1.0;
  Rng rng(5);
  int augmented = 0;
  for (int i = 0; i < 2000; ++i) {
    const Triplet t = base.next();
    const Triplet a = augment_triplet(s.data, s.index, t, cfg, rng);
    EXPECT_EQ(a.state, t.state);
    EXPECT_EQ(a.action, t.action);
    EXPECT_EQ(a.episode, t.episode);
    EXPECT_EQ(a.timestep, t.timestep);
    EXPECT_EQ(s.data.episodes[a.goal_episode].states[a.goal_timestep], a.outcome);
    augmented += a.provenance == Provenance::augmented;
  }
  EXPECT_GT(augmented, 1900);
}

TEST(Augment, WaypointSharesGroupWithOriginalGoal) {
  // with exact grouping and a one-step offset law, a zero offset returns the
  // waypoint, which must be the original goal state
  auto s = didactic_setup(0.2, 300, 6);
  TripletSampler base(s.data, SamplerConfig{0.9}, Rng(7));
  AugmentationConfig cfg;
  cfg.epsilon_prob = 1.0;
  cfg.discount = 1e-9;  // geometric offset is 0 almost surely
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) {
    const Triplet t = base.next();
    const Triplet a = augment_triplet(s.data, s.index, t, cfg, rng);
    EXPECT_EQ(a.outcome, t.outcome);
  }
}

TEST(Augment, RateMatchesEpsilon) {
  auto s = didactic_setup(0.2, 500, 9);
  AugmentationConfig cfg;
  cfg.epsilon_prob = 0.3;
  AugmentedSampler sampler(s.data, s.index, cfg, Rng(10));
  int augmented = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) augmented += sampler.next().provenance == Provenance::augmented;
  EXPECT_NEAR(augmented / double(n), 0.3, 0.01);
}

TEST(Augment, ExactGroupingMatchesOneSwitchDistribution) {
  for (double flip : {0.0, 0.2}) {
    auto s = didactic_setup(flip, 5000, 11);
    AugmentationConfig cfg;
    cfg.epsilon_prob = 1.0;
    cfg.discount = s.inst.cmp.discount;
    const auto rows = aug_stats(s.data, s.index, s.inst.cmp, s.inst.set, cfg, 200000, 500, 12);
    ASSERT_FALSE(rows.empty());
    for (const auto& r : rows) EXPECT_LT(r.tv_one_step, 0.03) << r.state << "," << r.action;
  }
}

TEST(Augment, ReachesUnseenGoalsOnCounterexample) {
  const auto inst = fig1_counterexample();
  const auto data = generate_dataset(inst.cmp, inst.set, 2000, 10, 13);
  const auto index = exact_state_grouping(data);
  AugmentationConfig cfg;
  cfg.epsilon_prob = 0.5;
  AugmentedSampler aug(data, index, cfg, Rng(14));
  int stitched = 0;
  for (int i = 0; i < 20000; ++i) {
    const Triplet t = aug.next();
    stitched += t.state == 1 && t.outcome == 3;
  }
  EXPECT_GT(stitched, 0);
  cfg.epsilon_prob = 0.0;
  AugmentedSampler plain(data, index, cfg, Rng(14));
  for (int i = 0; i < 20000; ++i) {
    const Triplet t = plain.next();
    EXPECT_FALSE(t.state == 1 && t.outcome == 3);
  }
}

TEST(Augment, MultipleHopsStayInsideDataset) {
  auto s = didactic_setup(0.2, 500, 15);
  AugmentationConfig cfg;
  cfg.epsilon_prob = 1.0;
  cfg.iterations = 3;
  AugmentedSampler sampler(s.data, s.index, cfg, Rng(16));
  for (int i = 0; i < 2000; ++i) {
    const Triplet t = sampler.next();
    EXPECT_EQ(s.data.episodes[t.goal_episode].states[t.goal_timestep], t.outcome);
  }
  cfg.iterations = 0;
  EXPECT_THROW(AugmentedSampler(s.data, s.index, cfg, Rng(0)), std::invalid_argument);
  cfg.iterations = 1;
  cfg.epsilon_prob = 1.5;
  EXPECT_THROW(AugmentedSampler(s.data, s.index, cfg, Rng(0)), std::invalid_argument);
}

TEST(Augment, ReturnModeCombinesPrefixAndWaypointReturn) {
  const CollectTask task = collect_task();
  DatasetMetadata meta;
  meta.num_states = task.maze.num_states();
  meta.num_actions = 4;
  const auto data = generate_dataset(CollectGenerator{&task}, 100, 17, meta);
  const auto index = exact_state_grouping(data);
  AugmentationConfig cfg;
  cfg.epsilon_prob = 1.0;
  cfg.outcome_mode = OutcomeMode::return_to_go;
  AugmentedSampler sampler(data, index, cfg, Rng(18));
  std::map<int, int> outcomes;
  for (int i = 0; i < 20000; ++i) {
    const Triplet t = sampler.next();
    ++outcomes[t.outcome];
    if (t.provenance != Provenance::augmented) continue;
    const auto& w = data.episodes[t.goal_episode];
    const double waypoint_rtg = return_to_go(w, t.goal_timestep);
    EXPECT_GE(t.outcome, return_bucket(waypoint_rtg));
    EXPECT_LE(t.outcome, return_bucket(waypoint_rtg + return_to_go(data.episodes[t.episode], t.timestep)));
  }
  EXPECT_GT(outcomes[2], 0);
  EXPECT_EQ(outcomes.count(3), 0u);
  EXPECT_GT(outcomes[0] + outcomes[1], outcomes[2]);

  cfg.epsilon_prob = 0.0;
  AugmentedSampler plain(data, index, cfg, Rng(18));
  for (int i = 0; i < 5000; ++i) EXPECT_LE(plain.next().outcome, 1);
}

TEST(EmpiricalGoals, ThrowsWithoutMatches) {
  auto s = didactic_setup(0.0, 100, 19);
  AugmentationConfig cfg;
  AugmentedSampler sampler(s.data, s.index, cfg, Rng(20));
  EXPECT_THROW(empirical_goal_distribution(sampler, 14, 0, 100), std::domain_error);
  const auto d = empirical_goal_distribution(sampler, 1, didactic_ids::kUp, 1000);
  double total = 0.0;
  for (auto [g, p] : d.probs) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Tv, HandlesDisjointAndOutOfRange) {
  EXPECT_DOUBLE_EQ(tv_distance({{0, 1.0}}, {0.0, 1.0}), 1.0);
  EXPECT_DOUBLE_EQ(tv_distance({{1, 1.0}}, {0.0, 1.0}), 0.0);
  EXPECT_DOUBLE_EQ(tv_distance({{5, 1.0}}, {0.0, 1.0}), 1.0);
}

TEST(Augment, CounterexampleWaypointSwitchesContext) {
  const auto inst = fig1_counterexample();
  const auto data = generate_dataset(inst.cmp, inst.set, 200, 10, 17);
  const auto index = exact_state_grouping(data);
  std::size_t up_episode = data.episodes.size();
  for (std::size_t e = 0; e < data.episodes.size(); ++e)
    if (data.episodes[e].states.front() == 1) up_episode = e;
  ASSERT_LT(up_episode, data.episodes.size());
  Triplet t;
  t.state = 1;
  t.action = fig1::kUp;
  t.outcome = 2;
  t.episode = t.goal_episode = up_episode;
  t.timestep = 0;
  t.goal_timestep = 1;
  AugmentationConfig cfg;
  cfg.epsilon_prob = 1.0;
  Rng rng(18);
  int hits = 0;
  for (int i = 0; i < 2000; ++i) hits += augment_triplet(data, index, t, cfg, rng).outcome == 3;
  EXPECT_GT(hits, 0);
}

TEST(Augment, SingleTrajectoryKeepsFutureSupport) {
  TrajectoryDataset data;
  data.metadata.num_states = 7;
  data.metadata.num_actions = 1;
  data.episodes.push_back({{0, 1, 2, 3, 4, 5, 6}, {0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0}, 0});
  const auto index = exact_state_grouping(data);
  AugmentationConfig cfg;
  cfg.epsilon_prob = 1.0;
  cfg.discount = 0.7;
  AugmentedSampler aug(data, index, cfg, Rng(19));
  TripletSampler plain(data, SamplerConfig{0.7}, Rng(20));
  std::map<int, std::set<int>> a, p;
  for (int i = 0; i < 50000; ++i) {
    const Triplet x = aug.next();
    const Triplet y = plain.next();
    a[x.state].insert(x.outcome);
    p[y.state].insert(y.outcome);
  }
  EXPECT_EQ(a, p);
}

TEST(Augment, EpsilonZeroMatchesZeroSwitchGoals) {
  auto s = didactic_setup(0.2, 5000, 21);
  AugmentationConfig cfg;
  cfg.epsilon_prob = 0.0;
  cfg.discount = s.inst.cmp.discount;
  const auto rows = aug_stats(s.data, s.index, s.inst.cmp, s.inst.set, cfg, 200000, 500, 22);
  ASSERT_FALSE(rows.empty());
  for (const auto& r : rows) EXPECT_LT(r.tv_zero_step, 0.05) << r.state << "," << r.action;
}

TEST(Augment, EpsilonZeroIsThePlainSampler) {
  auto s = didactic_setup(0.2, 500, 23);
  AugmentationConfig cfg;
  cfg.epsilon_prob = 0.0;
  cfg.discount = 0.9;
  AugmentedSampler aug(s.data, s.index, cfg, Rng(24));
  TripletSampler plain(s.data, SamplerConfig{0.9}, Rng(25));
  std::map<std::pair<int, int>, double> ha, hp;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Triplet x = aug.next();
    const Triplet y = plain.next();
    ha[{x.state, x.outcome}] += 1.0 / n;
    hp[{y.state, y.outcome}] += 1.0 / n;
  }
  double tv = 0.0;
  for (auto& [k, v] : ha) tv += std::abs(v - hp[k]);
  for (auto& [k, v] : hp)
    if (!ha.count(k)) tv += v;
  EXPECT_LT(tv / 2, 0.02);
}

TEST(Augment, CounterexampleFullAugmentationMatchesOneSwitch) {
  const auto inst = fig1_counterexample();
  const auto data = generate_dataset(inst.cmp, inst.set, 5000, 10, 26);
  const auto index = exact_state_grouping(data);
  AugmentationConfig cfg;
  cfg.epsilon_prob = 1.0;
  cfg.discount = inst.cmp.discount;
  const auto rows = aug_stats(data, index, inst.cmp, inst.set, cfg, 200000, 500, 27);
  bool found = false;
  for (const auto& r : rows) {
    if (r.state != 1 || r.action != fig1::kUp) continue;
    found = true;
    EXPECT_LT(r.tv_one_step, 0.05);
  }
  EXPECT_TRUE(found);
}
