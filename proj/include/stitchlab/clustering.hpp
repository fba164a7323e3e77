#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "stitchlab/dataset.hpp"
#include "stitchlab/random.hpp"

namespace stitchlab {

using Point = std::vector<double>;

inline constexpr const char* kIndexFormat = "stitchlab-idx-v1";

inline double squared_distance(const Point& a, const Point& b) {
  if (a.size() != b.size()) throw std::invalid_argument("feature dimension mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

/// Per-state feature vectors; identical states always map to identical features.
struct FeatureMap {
  std::string name;
  std::vector<Point> features;

  const Point& operator()(StateId s) const { return features.at(static_cast<std::size_t>(s)); }
  int num_states() const { return static_cast<int>(features.size()); }

  static FeatureMap one_hot(int num_states) {
    FeatureMap map{"onehot", {}};
    map.features.assign(static_cast<std::size_t>(num_states),
                        Point(static_cast<std::size_t>(num_states), 0.0));
    for (int s = 0; s < num_states; ++s) map.features[s][s] = 1.0;
    return map;
  }
};

/// Nearest centroid by L2 distance; ties go to the lowest group id.
inline int assign(const std::vector<Point>& centroids, const Point& x) {
  if (centroids.empty()) throw std::invalid_argument("assign: no centroids");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(centroids[c], x);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

struct KMeansFit {
  std::vector<Point> centroids;
  std::vector<int> labels;
  /// Within-cluster sum of squares after each assignment step.
  std::vector<double> wcss_history;
  int iterations = 0;
  bool converged = false;
};

inline std::size_t count_distinct(const std::vector<Point>& points) {
  std::vector<Point> sorted = points;
  std::sort(sorted.begin(), sorted.end());
  return static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

/// Weighted Lloyd iterations from a k-means++ seeding. Weights act as
/// occurrence counts, so clustering distinct points with their counts equals
/// clustering every occurrence.
inline KMeansFit kmeans_fit(const std::vector<Point>& points, const std::vector<double>& weights,
                            int k, std::uint64_t seed, int max_iters = 300) {
  if (k < 1) throw std::invalid_argument("kmeans_fit: k must be >= 1");
  if (points.size() != weights.size()) throw std::invalid_argument("kmeans_fit: weight count");
  if (points.empty()) throw std::invalid_argument("kmeans_fit: no points");
  const std::size_t distinct = count_distinct(points);
  if (static_cast<std::size_t>(k) > distinct) {
    throw std::invalid_argument("kmeans_fit: k = " + std::to_string(k) + " exceeds the " +
                                std::to_string(distinct) + " distinct points");
  }
  const std::size_t n = points.size();
  Rng rng(seed);
  KMeansFit fit;

  // k-means++ seeding
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  fit.centroids.push_back(points[rng.categorical(weights)]);
  while (static_cast<int>(fit.centroids.size()) < k) {
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points[i], fit.centroids.back()));
      score[i] = weights[i] * d2[i];
    }
    fit.centroids.push_back(points[rng.categorical(score)]);
  }

  fit.labels.assign(n, -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = assign(fit.centroids, points[i]);
      if (c != fit.labels[i]) changed = true;
      fit.labels[i] = c;
      wcss += weights[i] * squared_distance(points[i], fit.centroids[c]);
    }
    fit.wcss_history.push_back(wcss);
    fit.iterations = iter + 1;
    if (!changed && iter > 0) {
      fit.converged = true;
      break;
    }

    // update step
    const std::size_t dim = points.front().size();
    std::vector<Point> sums(static_cast<std::size_t>(k), Point(dim, 0.0));
    std::vector<double> mass(static_cast<std::size_t>(k), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(fit.labels[i]);
      mass[c] += weights[i];
      for (std::size_t j = 0; j < dim; ++j) sums[c][j] += weights[i] * points[i][j];
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      if (mass[c] > 0.0) {
        for (std::size_t j = 0; j < dim; ++j) fit.centroids[c][j] = sums[c][j] / mass[c];
        continue;
      }
      // Empty cluster: move it onto the point farthest from its own centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = squared_distance(points[i], fit.centroids[fit.labels[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      fit.centroids[c] = points[far];
      fit.labels[far] = static_cast<int>(c);
    }
  }
  return fit;
}

inline KMeansFit kmeans_fit(const std::vector<Point>& points, int k, std::uint64_t seed,
                            int max_iters = 300) {
  return kmeans_fit(points, std::vector<double>(points.size(), 1.0), k, seed, max_iters);
}

/// Greedy nearest-neighbour pairing: candidate pairs with distance <= eps are
/// taken in ascending (distance, i, j) order while both points are unpaired.
/// Returns a group label per point; every group holds at most two points.
inline std::vector<int> epsilon_nn_grouping(const std::vector<Point>& points, double eps) {
  if (eps < 0.0) throw std::invalid_argument("epsilon_nn_grouping: eps must be >= 0");
  const std::size_t n = points.size();
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  const double eps2 = eps * eps;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = squared_distance(points[i], points[j]);
      if (d <= eps2) pairs.emplace_back(d, i, j);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<std::size_t> partner(n, n);
  for (auto [d, i, j] : pairs) {
    if (partner[i] == n && partner[j] == n) {
      partner[i] = j;
      partner[j] = i;
    }
  }
  std::vector<int> labels(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= 0) continue;
    labels[i] = next;
    if (partner[i] != n) labels[partner[i]] = next;
    ++next;
  }
  return labels;
}

enum class GroupingMode { kmeans, epsilon_nn };

struct Occurrence {
  std::size_t episode = 0;
  std::size_t timestep = 0;
  bool operator==(const Occurrence&) const = default;
};

/// State grouping over a dataset: group per state plus every occurrence of
/// each group, in (episode, timestep) order.
struct ClusterIndex {
  GroupingMode mode = GroupingMode::kmeans;
  std::vector<Point> centroids;        // k-means centroids or representative features
  std::vector<int> state_group;        // -1 for states absent from the dataset
  std::vector<std::vector<Occurrence>> occurrences;
  std::vector<double> wcss_history;

  int num_groups() const { return static_cast<int>(occurrences.size()); }
  int group_of(StateId s) const {
    if (s < 0 || static_cast<std::size_t>(s) >= state_group.size() || state_group[s] < 0)
      throw std::out_of_range("state " + std::to_string(s) + " is not indexed");
    return state_group[s];
  }
  bool operator==(const ClusterIndex&) const = default;
};

struct GroupingConfig {
  GroupingMode mode = GroupingMode::kmeans;
  int k = 40;
  double eps = 0.0;
  std::uint64_t seed = 0;
  int max_iters = 300;
};

namespace detail {

inline void fill_occurrences(const TrajectoryDataset& data, ClusterIndex& index) {
  index.occurrences.assign(index.centroids.size(), {});
  for (std::size_t e = 0; e < data.episodes.size(); ++e) {
    const auto& states = data.episodes[e].states;
    for (std::size_t t = 0; t < states.size(); ++t)
      index.occurrences[index.state_group[states[t]]].push_back({e, t});
  }
}

}  // namespace detail

/// Groups the states that occur in `data` under the given feature map.
inline ClusterIndex cluster_dataset(const TrajectoryDataset& data, const FeatureMap& features,
                                    const GroupingConfig& config) {
  std::map<StateId, double> counts;
  for (const auto& ep : data.episodes) {
    for (StateId s : ep.states) counts[s] += 1.0;
  }
  std::vector<StateId> states;
  std::vector<Point> points;
  std::vector<double> weights;
  for (auto [s, c] : counts) {
    states.push_back(s);
    points.push_back(features(s));
    weights.push_back(c);
  }
  ClusterIndex index;
  index.mode = config.mode;
  index.state_group.assign(static_cast<std::size_t>(features.num_states()), -1);
  if (config.mode == GroupingMode::kmeans) {
    KMeansFit fit = kmeans_fit(points, weights, config.k, config.seed, config.max_iters);
    index.centroids = std::move(fit.centroids);
    index.wcss_history = std::move(fit.wcss_history);
    for (std::size_t i = 0; i < states.size(); ++i) index.state_group[states[i]] = fit.labels[i];
  } else {
    const std::vector<int> labels = epsilon_nn_grouping(points, config.eps);
    const int groups = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    index.centroids.assign(static_cast<std::size_t>(groups), Point{});
    for (std::size_t i = 0; i < states.size(); ++i) {
      index.state_group[states[i]] = labels[i];
      if (index.centroids[labels[i]].empty()) index.centroids[labels[i]] = points[i];
    }
  }
  detail::fill_occurrences(data, index);
  return index;
}

/// Every distinct state in its own group (eps-NN on one-hot features, eps = 0).
inline ClusterIndex exact_state_grouping(const TrajectoryDataset& data) {
  return cluster_dataset(data, FeatureMap::one_hot(data.metadata.num_states),
                         GroupingConfig{GroupingMode::epsilon_nn, 0, 0.0, 0, 0});
}

inline const std::vector<Occurrence>& waypoint_candidates(const ClusterIndex& index, int group) {
  if (group < 0 || group >= index.num_groups())
    throw std::out_of_range("unknown group " + std::to_string(group));
  return index.occurrences[static_cast<std::size_t>(group)];
}

// ---------------------------------------------------------------------------
// Index files

inline void write_index(const ClusterIndex& index, std::ostream& out) {
  nlohmann::ordered_json header;
  header["format"] = kIndexFormat;
  header["mode"] = index.mode == GroupingMode::kmeans ? "kmeans" : "epsilon_nn";
  header["num_groups"] = index.num_groups();
  header["state_group"] = index.state_group;
  header["wcss_history"] = index.wcss_history;
  out << header.dump() << '\n';
  for (int g = 0; g < index.num_groups(); ++g) {
    nlohmann::ordered_json line;
    line["group"] = g;
    line["centroid"] = index.centroids[g];
    std::vector<std::array<std::size_t, 2>> occ;
    occ.reserve(index.occurrences[g].size());
    for (const auto& o : index.occurrences[g]) occ.push_back({o.episode, o.timestep});
    line["occurrences"] = occ;
    out << line.dump() << '\n';
  }
}

inline void write_index(const ClusterIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_index(index, out);
}

inline ClusterIndex read_index(std::istream& in) {
  std::string text;
  std::size_t line_no = 1;
  if (!std::getline(in, text)) throw DatasetParseError(1, "format", "empty file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetParseError(1, "header", e.what());
  }
  if (detail::json_field<std::string>(header, "format", 1) != kIndexFormat)
    throw DatasetParseError(1, "format", "unsupported format version");
  ClusterIndex index;
  const auto mode = detail::json_field<std::string>(header, "mode", 1);
  index.mode = mode == "kmeans" ? GroupingMode::kmeans : GroupingMode::epsilon_nn;
  index.state_group = detail::json_field<std::vector<int>>(header, "state_group", 1);
  index.wcss_history = detail::json_field<std::vector<double>>(header, "wcss_history", 1);
  const int groups = detail::json_field<int>(header, "num_groups", 1);
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetParseError(line_no, "record", e.what());
    }
    const int g = detail::json_field<int>(obj, "group", line_no);
    if (g != index.num_groups()) throw DatasetParseError(line_no, "group", "groups out of order");
    index.centroids.push_back(detail::json_field<Point>(obj, "centroid", line_no));
    std::vector<Occurrence> occ;
    for (const auto& pair :
         detail::json_field<std::vector<std::array<std::size_t, 2>>>(obj, "occurrences", line_no))
      occ.push_back({pair[0], pair[1]});
    index.occurrences.push_back(std::move(occ));
  }
  if (index.num_groups() != groups)
    throw DatasetParseError(line_no + 1, "num_groups", "group count does not match header");
  return index;
}

inline ClusterIndex read_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_index(in);
}

}  // namespace stitchlab
