#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "stitchlab/augmentation.hpp"
#include "stitchlab/clustering.hpp"
#include "stitchlab/envs.hpp"
#include "stitchlab/occupancy.hpp"

namespace stitchlab {

struct CheckResult {
  std::string name;
  bool pass = false;
  /// key/value pairs, printed in order
  std::vector<std::pair<std::string, std::string>> values;

  void add(const std::string& key, double v) { values.emplace_back(key, detail::fmt_double(v)); }
  void add(const std::string& key, const std::string& v) { values.emplace_back(key, v); }
};

/// Monte Carlo estimate of p_+^pi(s) p_+^pi(g | s) from the start law `start`.
/// Both offsets are geometric from 0; absorbing states hold.
inline double mc_joint(const TabularCMP& cmp, const StationaryPolicy& policy,
                       std::span<const double> start, StateId state, StateId goal,
                       std::size_t rollouts, Rng& rng, std::int64_t max_steps = 100000) {
  std::size_t hits = 0;
  const double stop = 1.0 - cmp.discount;
  for (std::size_t i = 0; i < rollouts; ++i) {
    const std::int64_t t1 = rng.geometric(stop);
    const std::int64_t t2 = t1 + rng.geometric(stop);
    auto s = static_cast<StateId>(rng.categorical(start));
    StateId at_t1 = -1;
    for (std::int64_t t = 0; t <= max_steps; ++t) {
      if (t == t1) at_t1 = s;
      if (t == t2) break;
      if (cmp.is_absorbing(s)) {
        if (at_t1 < 0) at_t1 = s;
        break;
      }
      const auto a = static_cast<ActionId>(rng.categorical(policy.row(s)));
      s = static_cast<StateId>(rng.categorical(cmp.row(s, a)));
    }
    if (at_t1 == state && s == goal) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rollouts);
}

struct LemmaSuiteConfig {
  double gamma = 0.9;
  std::size_t mc_rollouts = 100000;
  int random_instances = 50;
  int monotonicity_instances = 20;
  std::size_t aug_samples = 100000;
  std::size_t aug_min_samples = 500;
  std::size_t aug_episodes = 5000;
  std::uint64_t seed = 0;
};

inline CheckResult check_counterexample_joint(const LemmaSuiteConfig& cfg) {
  const Instance inst = fig1_counterexample(cfg.gamma);
  const StateId s = 1, g = 3;
  const auto joint = train_test_joint(inst.cmp, inst.set, s, g);
  const double closed = (1.0 - cfg.gamma) * cfg.gamma * cfg.gamma / 4.0;
  Rng rng = Rng(cfg.seed).split("mc-joint");
  const double mc = mc_joint(inst.cmp, bc_policy(inst.cmp, inst.set),
                             mixture_start_dist(inst.cmp, inst.set), s, g, cfg.mc_rollouts, rng);
  CheckResult r{"counterexample_joint", false, {}};
  r.add("train_joint", joint.train_joint);
  r.add("test_joint", joint.test_joint);
  r.add("closed_form", closed);
  r.add("mc_test_joint", mc);
  r.pass = joint.train_joint == 0.0 && std::abs(joint.test_joint - closed) <= 1e-12 &&
           std::abs(mc - joint.test_joint) <= 0.01;
  return r;
}

inline CheckResult check_mixture_lemma(const LemmaSuiteConfig& cfg) {
  CheckResult r{"mixture_marginal", true, {}};
  double worst = verify_mixture_lemma(fig1_counterexample(cfg.gamma).cmp,
                                      fig1_counterexample(cfg.gamma).set, 1e-9).max_gap;
  r.add("fig1_max_gap", worst);
  Rng root = Rng(cfg.seed).split("mixture-instances");
  double worst_random = 0.0;
  for (int i = 0; i < cfg.random_instances; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const Instance inst = random_instance(rng, 8, 3, 3, cfg.gamma);
    worst_random = std::max(worst_random, verify_mixture_lemma(inst.cmp, inst.set, 1e-9).max_gap);
  }
  worst = std::max(worst, worst_random);
  r.add("random_instances", static_cast<double>(cfg.random_instances));
  r.add("random_max_gap", worst_random);
  r.pass = worst < 1e-9;
  return r;
}

inline CheckResult check_support_monotonicity(const LemmaSuiteConfig& cfg) {
  CheckResult r{"support_monotonicity", true, {}};
  const Instance fig = fig1_counterexample(cfg.gamma);
  const auto rep = support_monotonicity_check(fig.cmp, fig.set, 3);
  const bool strict = std::any_of(rep.strict_growth.begin(), rep.strict_growth.end(), [](const auto& x) {
    return x[0] == 1 && x[1] == fig1::kUp && x[2] == 0;
  });
  bool all = rep.holds;
  Rng root = Rng(cfg.seed).split("monotonicity-instances");
  for (int i = 0; i < cfg.monotonicity_instances; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const Instance inst = random_instance(rng, 8, 3, 3, cfg.gamma);
    all = all && support_monotonicity_check(inst.cmp, inst.set, 3).holds;
  }
  r.add("fig1_holds", rep.holds ? "true" : "false");
  r.add("fig1_strict_at_start_up", strict ? "true" : "false");
  r.add("random_instances", static_cast<double>(cfg.monotonicity_instances));
  r.add("all_hold", all ? "true" : "false");
  r.pass = all && strict;
  return r;
}

/// Worst TV between the exact-grouping, epsilon = 1 augmented stream and the
/// one-switch goal distribution.
inline double augmentation_tv(const Instance& inst, const LemmaSuiteConfig& cfg, std::uint64_t seed,
                              std::size_t& cells) {
  Rng gen(seed);
  const auto data = generate_dataset(inst.cmp, inst.set, cfg.aug_episodes, 200, gen.split("data").seed());
  const ClusterIndex index = exact_state_grouping(data);
  AugmentationConfig ac;
  ac.epsilon_prob = 1.0;
  ac.discount = inst.cmp.discount;
  const auto rows = aug_stats(data, index, inst.cmp, inst.set, ac, cfg.aug_samples, cfg.aug_min_samples,
                              gen.split("aug").seed());
  cells = rows.size();
  double worst = 0.0;
  for (const auto& row : rows) worst = std::max(worst, row.tv_one_step);
  return worst;
}

inline CheckResult check_augmentation_matches_stitching(const LemmaSuiteConfig& cfg) {
  CheckResult r{"augmentation_one_step", false, {}};
  std::size_t fig_cells = 0, did_cells = 0;
  const Rng root = Rng(cfg.seed).split("augmentation");
  const double fig_tv = augmentation_tv(fig1_counterexample(cfg.gamma), cfg, root.split(0).seed(), fig_cells);
  const double did_tv = augmentation_tv(didactic(didactic_v1_config()).instance, cfg,
                                        root.split(1).seed(), did_cells);
  r.add("fig1_cells", static_cast<double>(fig_cells));
  r.add("fig1_max_tv", fig_tv);
  r.add("didactic_cells", static_cast<double>(did_cells));
  r.add("didactic_max_tv", did_tv);
  r.pass = fig_cells > 0 && did_cells > 0 && fig_tv < 0.05 && did_tv < 0.05;
  return r;
}

inline std::vector<CheckResult> verify_lemmas(const LemmaSuiteConfig& cfg) {
  return {check_counterexample_joint(cfg), check_mixture_lemma(cfg), check_support_monotonicity(cfg),
          check_augmentation_matches_stitching(cfg)};
}

}  // namespace stitchlab
