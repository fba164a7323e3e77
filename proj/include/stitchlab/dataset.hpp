#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stitchlab/mdp.hpp"

namespace stitchlab {

inline constexpr const char* kTrajectoryFormat = "stitchlab-traj-v1";

struct DatasetMetadata {
  std::string cmp_fingerprint;
  std::string generator;
  std::uint64_t seed = 0;
  int num_states = 0;
  int num_actions = 0;
  /// Episodes whose last state is listed here continue forever in that state.
  std::vector<StateId> absorbing;

  bool operator==(const DatasetMetadata&) const = default;
};

struct TrajectoryDataset {
  std::vector<Trajectory> episodes;
  DatasetMetadata metadata;

  bool is_absorbing(StateId s) const {
    return std::binary_search(metadata.absorbing.begin(), metadata.absorbing.end(), s);
  }
  /// True when the recorded episode ends by entering an absorbing state.
  bool ends_absorbed(std::size_t episode) const {
    return is_absorbing(episodes[episode].states.back());
  }
  std::size_t num_state_occurrences() const {
    std::size_t n = 0;
    for (const auto& e : episodes) n += e.states.size();
    return n;
  }
  bool operator==(const TrajectoryDataset&) const = default;
};

/// Anything that produces one episode per call.
template <typename G>
concept EpisodeGenerator = requires(const G& g, Rng& rng) {
  { g.sample(rng) } -> std::convertible_to<Trajectory>;
};

/// Episode generator for a context-policy mixture on a tabular CMP.
struct MixtureGenerator {
  const TabularCMP* cmp;
  const ContextPolicySet* policies;
  int horizon = 200;

  Trajectory sample(Rng& rng) const { return rollout_mixture(*cmp, *policies, horizon, rng); }
};

/// `num_episodes` independent episodes; episode i uses stream split(i) of the
/// seed, so the dataset is a pure function of (generator, seed).
template <EpisodeGenerator Generator>
TrajectoryDataset generate_dataset(const Generator& generator, std::size_t num_episodes,
                                   std::uint64_t seed, DatasetMetadata metadata) {
  if (num_episodes < 1) throw std::invalid_argument("generate_dataset: num_episodes must be >= 1");
  const Rng root(seed);
  TrajectoryDataset data;
  data.metadata = std::move(metadata);
  data.metadata.seed = seed;
  std::sort(data.metadata.absorbing.begin(), data.metadata.absorbing.end());
  data.episodes.reserve(num_episodes);
  for (std::size_t i = 0; i < num_episodes; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    data.episodes.push_back(generator.sample(rng));
  }
  return data;
}

/// Episodes from streams split(0), split(1), ... until the dataset holds at
/// least `min_transitions` actions.
template <EpisodeGenerator Generator>
TrajectoryDataset generate_dataset_transitions(const Generator& generator, std::size_t min_transitions,
                                               std::uint64_t seed, DatasetMetadata metadata) {
  if (min_transitions < 1) throw std::invalid_argument("generate_dataset: min_transitions must be >= 1");
  const Rng root(seed);
  TrajectoryDataset data;
  data.metadata = std::move(metadata);
  data.metadata.seed = seed;
  std::sort(data.metadata.absorbing.begin(), data.metadata.absorbing.end());
  std::size_t total = 0;
  for (std::uint64_t i = 0; total < min_transitions; ++i) {
    Rng rng = root.split(i);
    data.episodes.push_back(generator.sample(rng));
    total += data.episodes.back().actions.size();
  }
  return data;
}

inline TrajectoryDataset generate_dataset(const TabularCMP& cmp, const ContextPolicySet& set,
                                          std::size_t num_episodes, int horizon,
                                          std::uint64_t seed) {
  DatasetMetadata meta{cmp_fingerprint(cmp), "mixture", seed, cmp.num_states, cmp.num_actions,
                       cmp.absorbing};
  return generate_dataset(MixtureGenerator{&cmp, &set, horizon}, num_episodes, seed,
                          std::move(meta));
}

// ---------------------------------------------------------------------------
// Triplet sampling

enum class OutcomeMode { goal, return_to_go };
enum class OffsetMode { geometric, uniform };
enum class Provenance { original, augmented };

/// One (state, action, outcome) training example. `episode`, `timestep` and
/// `goal_timestep` locate the sample in the dataset; in goal mode the outcome
/// is the state at `goal_timestep`, in return mode it is a return bucket.
struct Triplet {
  StateId state = 0;
  ActionId action = 0;
  int outcome = 0;
  Provenance provenance = Provenance::original;
  std::size_t episode = 0;
  std::size_t timestep = 0;
  std::size_t goal_episode = 0;
  std::size_t goal_timestep = 0;

  bool operator==(const Triplet&) const = default;
};

/// Undiscounted sum of rewards from `t` to the end of the episode.
inline double return_to_go(const Trajectory& episode, std::size_t t) {
  if (t > episode.rewards.size()) throw std::out_of_range("return_to_go: timestep outside episode");
  double total = 0.0;
  for (std::size_t i = t; i < episode.rewards.size(); ++i) total += episode.rewards[i];
  return total;
}

/// Integer return bucket; the task rewards are integer valued.
inline int return_bucket(double value) {
  return static_cast<int>(std::max<long>(0L, std::lround(value)));
}

struct SamplerConfig {
  double discount = 0.9;
  OutcomeMode outcome_mode = OutcomeMode::goal;
  OffsetMode offset_mode = OffsetMode::geometric;
  int max_resample = 100;
};

namespace detail {

/// Offset d >= min_offset into the future of `timestep`. Geometric offsets
/// that run past the end of an absorbed episode land on its final absorbing
/// state; otherwise they are redrawn until they fit, falling back to uniform.
inline std::size_t sample_future_index(const TrajectoryDataset& data, std::size_t episode,
                                       std::size_t timestep, std::size_t min_offset,
                                       const SamplerConfig& config, Rng& rng) {
  const std::size_t last = data.episodes[episode].states.size() - 1;
  if (timestep + min_offset > last && !data.ends_absorbed(episode))
    throw std::logic_error("sample_future_index: no future within the episode");
  if (config.offset_mode == OffsetMode::uniform) {
    if (timestep + min_offset > last) return last;
    return timestep + min_offset + rng.uniform_index(last - timestep - min_offset + 1);
  }
  const bool absorbed = data.ends_absorbed(episode);
  for (int attempt = 0; attempt < config.max_resample; ++attempt) {
    const auto offset = min_offset + static_cast<std::size_t>(rng.geometric(1.0 - config.discount));
    if (timestep + offset <= last) return timestep + offset;
    if (absorbed) return last;
  }
  return timestep + min_offset + rng.uniform_index(last - timestep - min_offset + 1);
}

}  // namespace detail

/// Uniform over all transitions in the dataset, then a future goal at
/// offset >= 1. Never reads the episode's hidden context.
class TripletSampler {
 public:
  TripletSampler(const TrajectoryDataset& data, SamplerConfig config, Rng rng)
      : data_(&data), config_(config), rng_(rng) {
    std::size_t total = 0;
    for (const auto& ep : data.episodes) {
      total += ep.actions.size();
      ends_.push_back(total);
    }
    if (total == 0)
      throw std::invalid_argument("sample_triplet: dataset has no episode with a transition");
  }

  const TrajectoryDataset& dataset() const { return *data_; }
  const SamplerConfig& config() const { return config_; }
  Rng& rng() { return rng_; }

  Triplet next() { return draw(rng_); }

  /// One draw using an external stream; the sampler's own stream is untouched.
  Triplet draw(Rng& rng) const {
    const std::size_t k = rng.uniform_index(ends_.back());
    const auto it = std::upper_bound(ends_.begin(), ends_.end(), k);
    const auto e = static_cast<std::size_t>(it - ends_.begin());
    const Trajectory& ep = data_->episodes[e];
    const std::size_t t = k - (e == 0 ? 0 : ends_[e - 1]);
    const std::size_t g = detail::sample_future_index(*data_, e, t, 1, config_, rng);
    Triplet out;
    out.state = ep.states[t];
    out.action = ep.actions[t];
    out.episode = e;
    out.timestep = t;
    out.goal_episode = e;
    out.goal_timestep = g;
    out.outcome = config_.outcome_mode == OutcomeMode::goal ? ep.states[g]
                                                            : return_bucket(return_to_go(ep, t));
    return out;
  }

 private:
  const TrajectoryDataset* data_;
  SamplerConfig config_;
  Rng rng_;
  std::vector<std::size_t> ends_;  // cumulative transition counts
};

inline Triplet sample_triplet(const TrajectoryDataset& data, double discount, Rng& rng,
                              OutcomeMode mode = OutcomeMode::goal) {
  return TripletSampler(data, SamplerConfig{discount, mode}, Rng(0)).draw(rng);
}

template <typename S>
concept TripletSource = requires(S& s) {
  { s.next() } -> std::convertible_to<Triplet>;
};

// ---------------------------------------------------------------------------
// Line-delimited trajectory files

struct DatasetParseError : std::runtime_error {
  DatasetParseError(std::size_t line, const std::string& field, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", field '" + field + "': " + what),
        line_number(line),
        field_name(field) {}
  std::size_t line_number;
  std::string field_name;
};

inline void write_dataset(const TrajectoryDataset& data, std::ostream& out) {
  nlohmann::ordered_json header;
  header["format"] = kTrajectoryFormat;
  header["generator"] = data.metadata.generator;
  header["seed"] = data.metadata.seed;
  header["cmp_fingerprint"] = data.metadata.cmp_fingerprint;
  header["num_states"] = data.metadata.num_states;
  header["num_actions"] = data.metadata.num_actions;
  header["absorbing"] = data.metadata.absorbing;
  header["num_episodes"] = data.episodes.size();
  out << header.dump() << '\n';
  for (const auto& ep : data.episodes) {
    nlohmann::ordered_json line;
    line["states"] = ep.states;
    line["actions"] = ep.actions;
    line["rewards"] = ep.rewards;
    line["context"] = ep.hidden_context;
    out << line.dump() << '\n';
  }
}

inline void write_dataset(const TrajectoryDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_dataset(data, out);
  if (!out) throw std::runtime_error("failed writing " + path);
}

inline std::string serialize_dataset(const TrajectoryDataset& data) {
  std::ostringstream out;
  write_dataset(data, out);
  return out.str();
}

namespace detail {

template <typename T>
T json_field(const nlohmann::json& obj, const char* name, std::size_t line) {
  if (!obj.contains(name)) throw DatasetParseError(line, name, "missing");
  try {
    return obj.at(name).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetParseError(line, name, e.what());
  }
}

}  // namespace detail

inline TrajectoryDataset read_dataset(std::istream& in) {
  TrajectoryDataset data;
  std::string text;
  std::size_t line_no = 0;
  if (!std::getline(in, text)) throw DatasetParseError(1, "format", "empty file");
  ++line_no;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetParseError(line_no, "header", e.what());
  }
  if (detail::json_field<std::string>(header, "format", line_no) != kTrajectoryFormat)
    throw DatasetParseError(line_no, "format", "unsupported format version");
  auto& meta = data.metadata;
  meta.generator = detail::json_field<std::string>(header, "generator", line_no);
  meta.seed = detail::json_field<std::uint64_t>(header, "seed", line_no);
  meta.cmp_fingerprint = detail::json_field<std::string>(header, "cmp_fingerprint", line_no);
  meta.num_states = detail::json_field<int>(header, "num_states", line_no);
  meta.num_actions = detail::json_field<int>(header, "num_actions", line_no);
  meta.absorbing = detail::json_field<std::vector<StateId>>(header, "absorbing", line_no);
  const auto expected = detail::json_field<std::size_t>(header, "num_episodes", line_no);

  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetParseError(line_no, "record", e.what());
    }
    Trajectory ep;
    ep.states = detail::json_field<std::vector<StateId>>(obj, "states", line_no);
    ep.actions = detail::json_field<std::vector<ActionId>>(obj, "actions", line_no);
    ep.rewards = detail::json_field<std::vector<double>>(obj, "rewards", line_no);
    ep.hidden_context = detail::json_field<ContextId>(obj, "context", line_no);
    if (ep.states.empty()) throw DatasetParseError(line_no, "states", "empty episode");
    if (ep.actions.size() + 1 != ep.states.size())
      throw DatasetParseError(line_no, "actions", "length must be one less than states");
    if (ep.rewards.size() != ep.actions.size())
      throw DatasetParseError(line_no, "rewards", "length must equal actions");
    for (StateId s : ep.states) {
      if (s < 0 || s >= meta.num_states) throw DatasetParseError(line_no, "states", "id out of range");
    }
    for (ActionId a : ep.actions) {
      if (a < 0 || a >= meta.num_actions)
        throw DatasetParseError(line_no, "actions", "id out of range");
    }
    data.episodes.push_back(std::move(ep));
  }
  if (data.episodes.size() != expected) {
    throw DatasetParseError(line_no + 1, "num_episodes",
                            "header declares " + std::to_string(expected) + " episodes, found " +
                                std::to_string(data.episodes.size()));
  }
  return data;
}

inline TrajectoryDataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_dataset(in);
}

/// Validates every recorded transition against the CMP; returns messages.
inline std::vector<std::string> validate_dataset(const TrajectoryDataset& data,
                                                 const TabularCMP& cmp) {
  std::vector<std::string> report;
  for (std::size_t e = 0; e < data.episodes.size(); ++e) {
    const auto& ep = data.episodes[e];
    for (std::size_t t = 0; t < ep.actions.size(); ++t) {
      if (!(cmp.p(ep.states[t], ep.actions[t], ep.states[t + 1]) > 0.0)) {
        report.push_back("episode " + std::to_string(e) + " step " + std::to_string(t) +
                         ": transition has zero probability");
      }
    }
  }
  return report;
}

inline std::uint64_t dataset_checksum(const TrajectoryDataset& data) {
  return fnv1a64(serialize_dataset(data));
}

}  // namespace stitchlab
