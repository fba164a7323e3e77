#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "stitchlab/clustering.hpp"
#include "stitchlab/dataset.hpp"
#include "stitchlab/occupancy.hpp"

namespace stitchlab {

struct AugmentationConfig {
  double epsilon_prob = 0.5;
  double discount = 0.9;
  OutcomeMode outcome_mode = OutcomeMode::goal;
  /// Number of waypoint hops per augmented triplet.
  int iterations = 1;
  int max_resample = 100;
};

inline void validate_augmentation(const AugmentationConfig& config) {
  if (!(config.epsilon_prob >= 0.0 && config.epsilon_prob <= 1.0))
    throw std::invalid_argument("epsilon_prob must lie in [0, 1]");
  if (!(config.discount > 0.0 && config.discount < 1.0))
    throw std::invalid_argument("discount must lie in (0, 1)");
  if (config.iterations < 1) throw std::invalid_argument("iterations must be >= 1");
}

namespace detail {

/// Uniform occurrence from the group of `state` that still has a future (or
/// sits in an absorbed episode). Empty when every try hits a dead end.
inline std::optional<Occurrence> pick_waypoint(const TrajectoryDataset& data,
                                               const ClusterIndex& index, StateId state,
                                               bool need_future, int max_resample, Rng& rng) {
  const auto& occ = waypoint_candidates(index, index.group_of(state));
  for (int attempt = 0; attempt < max_resample; ++attempt) {
    const Occurrence w = occ[rng.uniform_index(occ.size())];
    const std::size_t last = data.episodes[w.episode].states.size() - 1;
    if (!need_future || w.timestep < last || data.ends_absorbed(w.episode)) return w;
  }
  return std::nullopt;
}

}  // namespace detail

/// With probability epsilon, replaces the goal by a future state of a random
/// same-group waypoint. The future offset from the waypoint is geometric and
/// may be 0, so the waypoint itself is a possible goal. State and action are
/// never modified.
inline Triplet augment_triplet(const TrajectoryDataset& data, const ClusterIndex& index,
                               const Triplet& triplet, const AugmentationConfig& config, Rng& rng) {
  if (!rng.bernoulli(config.epsilon_prob)) return triplet;
  const SamplerConfig future{config.discount, config.outcome_mode, OffsetMode::geometric,
                             config.max_resample};
  Triplet out = triplet;

  if (config.outcome_mode == OutcomeMode::return_to_go) {
    // reward along the original episode up to the goal position, then the
    // waypoint's own return-to-go
    const Trajectory& ep = data.episodes[triplet.episode];
    double so_far = 0.0;
    for (std::size_t i = triplet.timestep; i < triplet.goal_timestep; ++i) so_far += ep.rewards[i];
    const StateId goal_state = ep.states[triplet.goal_timestep];
    auto w = detail::pick_waypoint(data, index, goal_state, false, config.max_resample, rng);
    if (!w) return triplet;
    out.outcome = return_bucket(so_far + return_to_go(data.episodes[w->episode], w->timestep));
    out.goal_episode = w->episode;
    out.goal_timestep = w->timestep;
    out.provenance = Provenance::augmented;
    return out;
  }

  StateId goal = triplet.outcome;
  for (int hop = 0; hop < config.iterations; ++hop) {
    auto w = detail::pick_waypoint(data, index, goal, true, config.max_resample, rng);
    if (!w) return hop == 0 ? triplet : out;
    const std::size_t g = detail::sample_future_index(data, w->episode, w->timestep, 0, future, rng);
    goal = data.episodes[w->episode].states[g];
    out.outcome = goal;
    out.goal_episode = w->episode;
    out.goal_timestep = g;
    out.provenance = Provenance::augmented;
  }
  return out;
}

/// Triplet stream: plain future sampling followed by augmentation, both
/// driven by one seeded stream.
class AugmentedSampler {
 public:
  AugmentedSampler(const TrajectoryDataset& data, const ClusterIndex& index,
                   AugmentationConfig config, Rng rng, OffsetMode offset = OffsetMode::geometric)
      : base_(data, SamplerConfig{config.discount, config.outcome_mode, offset}, Rng(0)),
        index_(&index),
        config_(config),
        rng_(rng) {
    validate_augmentation(config_);
  }

  Triplet next() {
    const Triplet t = base_.draw(rng_);
    return augment_triplet(base_.dataset(), *index_, t, config_, rng_);
  }

  const AugmentationConfig& config() const { return config_; }

 private:
  TripletSampler base_;
  const ClusterIndex* index_;
  AugmentationConfig config_;
  Rng rng_;
};

/// Conditional outcome histogram for one (state, action) cell.
struct EmpiricalDistribution {
  std::map<int, double> probs;
  std::size_t matches = 0;
  std::size_t draws = 0;
};

template <TripletSource Source>
EmpiricalDistribution empirical_goal_distribution(Source& sampler, StateId state, ActionId action,
                                                  std::size_t n_samples) {
  if (n_samples < 1) throw std::invalid_argument("empirical_goal_distribution: n_samples must be >= 1");
  EmpiricalDistribution out;
  out.draws = n_samples;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Triplet t = sampler.next();
    if (t.state != state || t.action != action) continue;
    out.probs[t.outcome] += 1.0;
    ++out.matches;
  }
  if (out.matches == 0)
    throw std::domain_error("empirical_goal_distribution: no triplet matched (state, action)");
  for (auto& [o, p] : out.probs) p /= static_cast<double>(out.matches);
  return out;
}

/// Histograms for every (state, action) cell from a single pass over the stream.
template <TripletSource Source>
std::map<std::pair<StateId, ActionId>, EmpiricalDistribution> empirical_goal_table(
    Source& sampler, std::size_t n_samples) {
  std::map<std::pair<StateId, ActionId>, EmpiricalDistribution> table;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Triplet t = sampler.next();
    auto& cell = table[{t.state, t.action}];
    cell.probs[t.outcome] += 1.0;
    ++cell.matches;
  }
  for (auto& [key, cell] : table) {
    cell.draws = n_samples;
    for (auto& [o, p] : cell.probs) p /= static_cast<double>(cell.matches);
  }
  return table;
}

/// Total variation between a sparse histogram and a dense distribution.
inline double tv_distance(const std::map<int, double>& empirical, const std::vector<double>& exact) {
  double total = 0.0;
  for (std::size_t g = 0; g < exact.size(); ++g) {
    auto it = empirical.find(static_cast<int>(g));
    total += std::abs((it == empirical.end() ? 0.0 : it->second) - exact[g]);
  }
  for (auto [o, p] : empirical) {
    if (o < 0 || static_cast<std::size_t>(o) >= exact.size()) total += p;
  }
  return 0.5 * total;
}

struct AugStatsRow {
  StateId state = 0;
  ActionId action = 0;
  std::size_t samples = 0;
  double tv_zero_step = 0.0;
  double tv_one_step = 0.0;
};

/// Per-(s, a) TV distances from the augmented stream to the exact 0- and
/// 1-step stitching goal distributions; cells with fewer than `min_samples`
/// matches are skipped.
inline std::vector<AugStatsRow> aug_stats(const TrajectoryDataset& data, const ClusterIndex& index,
                                          const TabularCMP& cmp, const ContextPolicySet& set,
                                          const AugmentationConfig& config, std::size_t n_samples,
                                          std::size_t min_samples, std::uint64_t seed) {
  AugmentedSampler sampler(data, index, config, Rng(seed));
  const auto table = empirical_goal_table(sampler, n_samples);
  StitchingAnalysis exact(cmp, set, 1);
  std::vector<AugStatsRow> rows;
  for (const auto& [key, cell] : table) {
    if (cell.matches < min_samples) continue;
    AugStatsRow row{key.first, key.second, cell.matches, 0.0, 0.0};
    row.tv_zero_step = tv_distance(cell.probs, exact.distribution(key.first, key.second, 0));
    row.tv_one_step = tv_distance(cell.probs, exact.distribution(key.first, key.second, 1));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace stitchlab
