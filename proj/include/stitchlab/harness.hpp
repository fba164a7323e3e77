#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "stitchlab/augmentation.hpp"
#include "stitchlab/clustering.hpp"
#include "stitchlab/config.hpp"
#include "stitchlab/dataset.hpp"
#include "stitchlab/envs.hpp"
#include "stitchlab/ocbc.hpp"
#include "stitchlab/occupancy.hpp"

namespace stitchlab {

// ---------------------------------------------------------------------------
// Evaluation

struct PairResult {
  TaskPair pair;
  int successes = 0;
  int episodes = 0;
  double rate() const { return episodes > 0 ? static_cast<double>(successes) / episodes : 0.0; }
};

struct EvalResult {
  double train_success = 0.0;
  double test_success = 0.0;
  double gap = 0.0;  // test - train
  std::vector<PairResult> per_pair;
  int episodes_per_pair = 0;
  int horizon = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline void aggregate(EvalResult& result) {
  double sums[2] = {0.0, 0.0};
  int counts[2] = {0, 0};
  for (const auto& p : result.per_pair) {
    const int i = p.pair.split == Split::test ? 1 : 0;
    sums[i] += p.rate();
    ++counts[i];
  }
  result.train_success = counts[0] > 0 ? sums[0] / counts[0] : 0.0;
  result.test_success = counts[1] > 0 ? sums[1] / counts[1] : 0.0;
  result.gap = result.test_success - result.train_success;
}

}  // namespace detail

/// Rolls out pi(. | ., goal) from each pair's start for at most `horizon`
/// actions; success iff the goal state is reached.
template <OutcomePolicy Policy>
EvalResult evaluate_success(const TabularCMP& cmp, const Policy& policy,
                            const std::vector<TaskPair>& pairs, int horizon, int episodes_per_pair,
                            ActMode mode, std::uint64_t seed) {
  if (episodes_per_pair < 1) throw std::invalid_argument("episodes_per_pair must be >= 1");
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  EvalResult result;
  result.episodes_per_pair = episodes_per_pair;
  result.horizon = horizon;
  result.seed = seed;
  const Rng root(seed);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const TaskPair& pair = pairs[i];
    PairResult row{pair, 0, episodes_per_pair};
    const Rng pair_rng = root.split(static_cast<std::uint64_t>(i));
    for (int e = 0; e < episodes_per_pair; ++e) {
      Rng rng = pair_rng.split(static_cast<std::uint64_t>(e));
      StateId s = pair.start;
      bool reached = s == pair.goal;
      for (int t = 0; t < horizon && !reached; ++t) {
        const ActionId a = act(policy, s, pair.goal, mode, rng);
        s = static_cast<StateId>(rng.categorical(cmp.row(s, a)));
        reached = s == pair.goal;
      }
      if (reached) ++row.successes;
    }
    result.per_pair.push_back(row);
  }
  detail::aggregate(result);
  return result;
}

template <OutcomePolicy Policy>
EvalResult generalization_gap(const TabularCMP& cmp, const Policy& policy,
                              const std::vector<std::pair<StateId, StateId>>& train_pairs,
                              const std::vector<std::pair<StateId, StateId>>& test_pairs, int horizon,
                              int episodes_per_pair, ActMode mode, std::uint64_t seed) {
  std::vector<TaskPair> pairs;
  for (auto [s, g] : train_pairs) pairs.push_back({s, g, Split::train});
  for (auto [s, g] : test_pairs) pairs.push_back({s, g, Split::test});
  return evaluate_success(cmp, policy, pairs, horizon, episodes_per_pair, mode, seed);
}

/// Achieved return when commanding `target`: the command drops by every
/// collected reward, success iff the achieved return reaches the target.
template <OutcomePolicy Policy>
PairResult evaluate_return(const CollectTask& task, const Policy& policy, int target, int horizon,
                           int episodes, ActMode mode, std::uint64_t seed, Split split) {
  const auto& m = task.maze;
  PairResult row{{m.start, target, split}, 0, episodes};
  const Rng root(seed);
  for (int e = 0; e < episodes; ++e) {
    Rng rng = root.split(static_cast<std::uint64_t>(e));
    std::vector<char> collected(m.keys.size(), 0);
    StateId s = m.start;
    int command = target;
    int achieved = 0;
    for (int t = 0; t < horizon && achieved < target; ++t) {
      const ActionId a = act(policy, s, command, mode, rng);
      s = m.move(s, a);
      for (std::size_t k = 0; k < m.keys.size(); ++k) {
        if (m.keys[k] == s && !collected[k]) {
          collected[k] = 1;
          ++achieved;
          command = std::max(0, command - 1);
        }
      }
    }
    if (achieved >= target) ++row.successes;
  }
  return row;
}

// ---------------------------------------------------------------------------
// Invariance probes

enum class ProbeInput { state, goal };

struct ProbeResult {
  ProbeInput probed = ProbeInput::goal;
  double invariance_fraction = 1.0;
  /// (fixed input, probed value 1, probed value 2) with different greedy actions.
  std::vector<std::array<int, 3>> witnesses;
};

/// For every fixed value of the other input, the fraction of probed-value
/// pairs with the same greedy action, pooled over all fixed values.
template <OutcomePolicy Policy>
ProbeResult invariance_probe(const Policy& policy, ProbeInput probe, const std::vector<StateId>& states,
                             const std::vector<int>& outcomes) {
  ProbeResult out;
  out.probed = probe;
  const auto& fixed = probe == ProbeInput::state ? outcomes : states;
  const auto& varied = probe == ProbeInput::state ? states : outcomes;
  Rng unused(0);
  std::size_t same = 0;
  std::size_t total = 0;
  for (int u : fixed) {
    std::vector<ActionId> actions;
    for (int v : varied) {
      const StateId s = probe == ProbeInput::state ? v : u;
      const int o = probe == ProbeInput::state ? u : v;
      actions.push_back(act(policy, s, o, ActMode::greedy, unused));
    }
    for (std::size_t i = 0; i < actions.size(); ++i) {
      for (std::size_t j = i + 1; j < actions.size(); ++j) {
        ++total;
        if (actions[i] == actions[j]) ++same;
        else out.witnesses.push_back({u, varied[i], varied[j]});
      }
    }
  }
  out.invariance_fraction = total > 0 ? static_cast<double>(same) / static_cast<double>(total) : 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Environments behind a config name

class Environment {
 public:
  enum class Kind { instance, maze, collect };

  static std::unique_ptr<Environment> make(const Config& cfg) {
    auto env = std::unique_ptr<Environment>(new Environment());
    env->name_ = cfg.get("env");
    const std::string gamma_text = cfg.get("gamma");
    const auto& n = env->name_;
    if (n == "fig1" || n == "didactic_v1" || n == "didactic_stochastic") {
      env->kind_ = Kind::instance;
      const double gamma = gamma_text.empty() ? 0.9 : cfg.get_double("gamma");
      if (n == "fig1") {
        env->instance_ = fig1_counterexample(gamma);
      } else {
        DidacticConfig dc = n == "didactic_v1" ? didactic_v1_config() : didactic_stochastic_config();
        dc.discount = gamma;
        env->instance_ = didactic(dc).instance;
      }
      env->data_horizon_ = static_cast<int>(cfg.get_int("data_horizon"));
    } else if (n == "umaze" || n == "medium" || n == "large") {
      env->kind_ = Kind::maze;
      env->maze_ = build_maze(stock_layout(n));
      env->instance_.cmp = maze_cmp(env->maze_, gamma_text.empty() ? 0.99 : cfg.get_double("gamma"));
      RegionPolicyConfig rc;
      rc.noise = cfg.get_double("noise");
      env->navigator_ = std::make_unique<RegionGenerator>(env->maze_, rc);
    } else if (n == "collect") {
      env->kind_ = Kind::collect;
      env->collect_ = collect_task();
      env->maze_ = env->collect_.maze;
      env->instance_.cmp = env->collect_.cmp;
      if (!gamma_text.empty()) env->instance_.cmp.discount = cfg.get_double("gamma");
    } else {
      throw ConfigError("unknown env '" + n + "'");
    }
    return env;
  }

  Environment(const Environment&) = delete;
  Environment& operator=(const Environment&) = delete;

  const std::string& name() const { return name_; }
  Kind kind() const { return kind_; }
  const TabularCMP& cmp() const { return instance_.cmp; }
  const Instance& instance() const { return instance_; }
  const GridMaze& maze() const { return maze_; }
  const CollectTask& collect() const { return collect_; }
  double discount() const { return instance_.cmp.discount; }

  OutcomeMode outcome_mode() const {
    return kind_ == Kind::collect ? OutcomeMode::return_to_go : OutcomeMode::goal;
  }

  PolicyShape policy_shape() const {
    const int S = instance_.cmp.num_states;
    const int O = kind_ == Kind::collect ? static_cast<int>(collect_.maze.keys.size()) + 1 : S;
    return {S, O, instance_.cmp.num_actions};
  }

  /// `transitions` > 0 overrides the episode count.
  TrajectoryDataset generate(std::size_t episodes, std::size_t transitions, std::uint64_t seed) const {
    DatasetMetadata meta{cmp_fingerprint(instance_.cmp), name_, seed, instance_.cmp.num_states,
                         instance_.cmp.num_actions, instance_.cmp.absorbing};
    auto run = [&](const auto& generator) {
      return transitions > 0 ? generate_dataset_transitions(generator, transitions, seed, std::move(meta))
                             : generate_dataset(generator, episodes, seed, std::move(meta));
    };
    switch (kind_) {
      case Kind::instance:
        return run(MixtureGenerator{&instance_.cmp, &instance_.set, data_horizon_});
      case Kind::maze:
        return run(*navigator_);
      case Kind::collect:
        return run(CollectGenerator{&collect_});
    }
    throw std::logic_error("unreachable");
  }

  TrajectoryDataset generate(const Config& cfg, std::uint64_t seed) const {
    const auto scale = cfg.get_uint("dataset_scale");
    return generate(cfg.get_uint("episodes") * scale, cfg.get_uint("transitions") * scale, seed);
  }

  FeatureMap features(const std::string& which) const {
    if (which == "onehot" || kind_ == Kind::instance) return FeatureMap::one_hot(instance_.cmp.num_states);
    if (which == "coords") return coordinate_features(maze_);
    throw ConfigError("unknown feature map '" + which + "'");
  }

  int default_clusters() const { return kind_ == Kind::maze ? default_k(name_) : 0; }

  /// Certified task pairs; maze test pairs are checked against `data`.
  Certification task_pairs(const TrajectoryDataset& data, std::size_t num_train, std::size_t num_test,
                           Rng& rng) const {
    switch (kind_) {
      case Kind::instance: {
        std::vector<std::pair<StateId, StateId>> all;
        for (StateId s = 0; s < instance_.cmp.num_states; ++s) {
          if (instance_.cmp.is_absorbing(s)) continue;
          for (StateId g = 0; g < instance_.cmp.num_states; ++g) {
            if (g != s) all.emplace_back(s, g);
          }
        }
        Certification cert = certify_task_split(instance_.cmp, instance_.set, all);
        // only pairs the data actually supports count as train
        const CoOccurrence co = co_occurrence(data);
        std::vector<TaskPair> kept;
        for (const auto& p : cert.pairs) {
          if (p.split == Split::test || co(p.start, p.goal)) kept.push_back(p);
        }
        cert.pairs = std::move(kept);
        return cert;
      }
      case Kind::maze: {
        const CoOccurrence co = co_occurrence(data);
        auto proposed = sample_train_pairs(data, discount(), num_train, rng);
        const auto test = sample_cross_region_pairs(maze_, num_test, rng);
        proposed.insert(proposed.end(), test.begin(), test.end());
        return certify_task_split(maze_, co, proposed);
      }
      case Kind::collect:
        break;
    }
    throw std::logic_error("task pairs are return-based for the collect task");
  }

 private:
  Environment() = default;

  std::string name_;
  Kind kind_ = Kind::instance;
  Instance instance_;
  GridMaze maze_;
  CollectTask collect_;
  std::unique_ptr<RegionGenerator> navigator_;
  int data_horizon_ = 50;
};

// ---------------------------------------------------------------------------
// Pipeline: data -> grouping -> learner -> evaluation

struct SeedStreams {
  std::uint64_t data, sampler, pairs, eval, learner;
  explicit SeedStreams(std::uint64_t seed) {
    const Rng root(seed);
    data = root.split("data").seed();
    sampler = root.split("sampler").seed();
    pairs = root.split("pairs").seed();
    eval = root.split("eval").seed();
    learner = root.split("learner").seed();
  }
};

inline ActMode act_mode(const Config& cfg) {
  const auto& m = cfg.get("eval_mode");
  if (m == "greedy") return ActMode::greedy;
  if (m == "sample") return ActMode::sample;
  throw ConfigError("unknown eval_mode '" + m + "'");
}

inline AugmentationConfig augmentation_config(const Config& cfg, const Environment& env) {
  AugmentationConfig ac;
  ac.epsilon_prob = cfg.get_double("epsilon");
  ac.discount = env.discount();
  ac.outcome_mode = env.outcome_mode();
  ac.iterations = static_cast<int>(cfg.get_int("iterations"));
  if (!(ac.epsilon_prob >= 0.0 && ac.epsilon_prob <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (ac.iterations < 1) throw ConfigError("iterations must be >= 1");
  return ac;
}

inline ClusterIndex build_index(const Config& cfg, const Environment& env, const TrajectoryDataset& data,
                                std::uint64_t seed) {
  const auto& grouping = cfg.get("grouping");
  if (grouping == "exact") return exact_state_grouping(data);
  if (grouping != "kmeans") throw ConfigError("unknown grouping '" + grouping + "'");
  int k = static_cast<int>(cfg.get_int("k"));
  if (k == 0) k = env.default_clusters();
  // no stock k outside the mazes
  if (k == 0) return exact_state_grouping(data);
  if (k < 0) throw ConfigError("k must be non-negative");
  return cluster_dataset(data, env.features(cfg.get("features")),
                         GroupingConfig{GroupingMode::kmeans, k, 0.0, seed, 300});
}

inline SoftmaxConfig softmax_config(const Config& cfg, std::uint64_t seed) {
  SoftmaxConfig sc;
  sc.steps = static_cast<int>(cfg.get_int("steps"));
  sc.batch_size = static_cast<int>(cfg.get_int("batch_size"));
  sc.learning_rate = cfg.get_double("learning_rate");
  sc.l2_coef = cfg.get_double("l2");
  sc.outer_product = cfg.get_bool("outer_product");
  sc.seed = seed;
  return sc;
}

struct TrainedPolicy {
  AnyPolicy policy;
  std::optional<TrainReport> report;
};

inline TrainedPolicy train_policy(const Config& cfg, const Environment& env, const TrajectoryDataset& data,
                                  const ClusterIndex& index, std::uint64_t sampler_seed,
                                  std::uint64_t learner_seed) {
  AugmentationConfig ac = augmentation_config(cfg, env);
  const auto& offset = cfg.get("offset");
  if (offset != "geometric" && offset != "uniform") throw ConfigError("unknown offset '" + offset + "'");
  AugmentedSampler sampler(data, index, ac, Rng(sampler_seed),
                           offset == "uniform" ? OffsetMode::uniform : OffsetMode::geometric);
  const PolicyShape shape = env.policy_shape();
  const auto& learner = cfg.get("learner");
  if (learner == "tabular") {
    return {fit_tabular(sampler, cfg.get_uint("triplets"), cfg.get_double("smoothing"), shape), std::nullopt};
  }
  if (learner == "softmax") {
    auto [policy, report] = fit_softmax(sampler, shape, softmax_config(cfg, learner_seed));
    return {std::move(policy), std::move(report)};
  }
  throw ConfigError("unknown learner '" + learner + "'");
}

/// Evaluates a trained policy on the environment's certified pairs (or, for
/// the collect task, on the seen return 1 as train and the target as test).
inline EvalResult evaluate_policy(const Config& cfg, const Environment& env, const AnyPolicy& policy,
                                  const TrajectoryDataset& data, std::uint64_t pairs_seed,
                                  std::uint64_t eval_seed) {
  const PolicyRef ref{&policy};
  const int horizon = static_cast<int>(cfg.get_int("eval_horizon"));
  const int episodes = static_cast<int>(cfg.get_int("eval_episodes"));
  const ActMode mode = act_mode(cfg);
  if (env.kind() == Environment::Kind::collect) {
    const int target = static_cast<int>(cfg.get_int("target_return"));
    const auto split = certify_return_outcome(data, env.collect(), target, horizon);
    if (!split) throw ConfigError("target_return is not achievable in the collect task");
    EvalResult result;
    result.episodes_per_pair = episodes;
    result.horizon = horizon;
    result.seed = eval_seed;
    const Rng root(eval_seed);
    result.per_pair.push_back(evaluate_return(env.collect(), ref, 1, horizon, episodes, mode,
                                              root.split(std::uint64_t{0}).seed(), Split::train));
    result.per_pair.push_back(evaluate_return(env.collect(), ref, target, horizon, episodes, mode,
                                              root.split(std::uint64_t{1}).seed(), *split));
    detail::aggregate(result);
    return result;
  }
  Rng pair_rng(pairs_seed);
  const Certification cert = env.task_pairs(data, cfg.get_uint("train_pairs"), cfg.get_uint("test_pairs"), pair_rng);
  return evaluate_success(env.cmp(), ref, cert.pairs, horizon, episodes, mode, eval_seed);
}

/// One full run for one seed.
inline EvalResult run_pipeline(const Config& cfg, std::uint64_t seed) {
  const auto env = Environment::make(cfg);
  const SeedStreams streams(seed);
  const TrajectoryDataset data = env->generate(cfg, streams.data);
  const ClusterIndex index = cfg.get_double("epsilon") > 0.0 ? build_index(cfg, *env, data, streams.data)
                                                             : ClusterIndex{};
  const TrainedPolicy trained = train_policy(cfg, *env, data, index, streams.sampler, streams.learner);
  EvalResult result = evaluate_policy(cfg, *env, trained.policy, data, streams.pairs, streams.eval);
  result.seed = seed;
  return result;
}

/// Runs seeds base, base+1, ... in parallel; results come back in seed order.
inline std::vector<EvalResult> run_seeds(const Config& cfg, std::uint64_t base_seed, int num_seeds) {
  std::vector<std::future<EvalResult>> jobs;
  for (int i = 0; i < num_seeds; ++i) {
    jobs.push_back(std::async(std::launch::async, [cfg, base_seed, i] {
      return run_pipeline(cfg, base_seed + static_cast<std::uint64_t>(i));
    }));
  }
  std::vector<EvalResult> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

struct SeedSummary {
  double train_success = 0.0;
  double test_success = 0.0;
  double gap = 0.0;
};

inline SeedSummary summarize(const std::vector<EvalResult>& runs) {
  SeedSummary s;
  for (const auto& r : runs) {
    s.train_success += r.train_success;
    s.test_success += r.test_success;
  }
  if (!runs.empty()) {
    s.train_success /= static_cast<double>(runs.size());
    s.test_success /= static_cast<double>(runs.size());
  }
  s.gap = s.test_success - s.train_success;
  return s;
}

struct AblationRow {
  std::string value;
  std::vector<EvalResult> runs;
  SeedSummary summary;
};

/// One pipeline run per (axis value, seed).
inline std::vector<AblationRow> ablate(const Config& base, const std::string& axis,
                                       const std::vector<std::string>& values, std::uint64_t base_seed,
                                       int num_seeds) {
  std::vector<AblationRow> rows;
  for (const auto& v : values) {
    Config cfg = base;
    cfg.set(axis, v);
    AblationRow row{v, run_seeds(cfg, base_seed, num_seeds), {}};
    row.summary = summarize(row.runs);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV writers

inline std::string csv_double(double x) { return detail::fmt_double(x); }

inline void write_eval_csv(const EvalResult& r, std::ostream& out) {
  out << "start,goal,split,successes,episodes,rate\n";
  for (const auto& p : r.per_pair) {
    out << p.pair.start << ',' << p.pair.goal << ',' << (p.pair.split == Split::test ? "test" : "train") << ','
        << p.successes << ',' << p.episodes << ',' << csv_double(p.rate()) << '\n';
  }
  out << "# train_success," << csv_double(r.train_success) << '\n';
  out << "# test_success," << csv_double(r.test_success) << '\n';
  out << "# gap," << csv_double(r.gap) << '\n';
  out << "# horizon," << r.horizon << ",episodes_per_pair," << r.episodes_per_pair << ",seed," << r.seed << '\n';
}

inline void write_ablation_csv(const std::string& axis, const std::vector<AblationRow>& rows, std::ostream& out) {
  out << axis << ",seed,train_success,test_success,gap\n";
  for (const auto& row : rows) {
    for (const auto& r : row.runs) {
      out << row.value << ',' << r.seed << ',' << csv_double(r.train_success) << ',' << csv_double(r.test_success)
          << ',' << csv_double(r.gap) << '\n';
    }
    out << row.value << ",mean," << csv_double(row.summary.train_success) << ','
        << csv_double(row.summary.test_success) << ',' << csv_double(row.summary.gap) << '\n';
  }
}

inline void write_loss_csv(const TrainReport& report, std::ostream& out) {
  out << "step,loss\n";
  for (auto [step, loss] : report.loss_curve) out << step << ',' << csv_double(loss) << '\n';
}

}  // namespace stitchlab
