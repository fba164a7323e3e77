#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "stitchlab/clustering.hpp"
#include "stitchlab/envs.hpp"

using namespace stitchlab;

namespace {

double wcss_of(const std::vector<Point>& pts, const std::vector<int>& labels, int k) {
  const std::size_t dim = pts.front().size();
  std::vector<Point> sum(k, Point(dim, 0.0));
  std::vector<double> n(k, 0.0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    n[labels[i]] += 1;
    for (std::size_t j = 0; j < dim; ++j) sum[labels[i]][j] += pts[i][j];
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Point c = sum[labels[i]];
    for (double& x : c) x /= n[labels[i]];
    total += squared_distance(pts[i], c);
  }
  return total;
}

// Minimum WCSS over every assignment of points to k non-empty groups.
double brute_force_wcss(const std::vector<Point>& pts, int k) {
  std::vector<int> labels(pts.size(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, int)> rec = [&](std::size_t i, int used) {
    if (i == pts.size()) {
      if (used == k) best = std::min(best, wcss_of(pts, labels, k));
      return;
    }
    for (int c = 0; c < std::min(k, used + 1); ++c) {
      labels[i] = c;
      rec(i + 1, std::max(used, c + 1));
    }
  };
  rec(0, 0);
  return best;
}

std::vector<Point> blobs(std::uint64_t seed, int per_blob, const std::vector<Point>& centers, double spread) {
  Rng rng(seed);
  std::vector<Point> pts;
  for (const auto& c : centers) {
    for (int i = 0; i < per_blob; ++i) {
      Point p = c;
      for (double& x : p) x += spread * (rng.uniform() - 0.5);
      pts.push_back(p);
    }
  }
  return pts;
}

}  // namespace

TEST(KMeans, MatchesExhaustiveOptimumOnSeparatedBlobs) {
  const auto pts = blobs(1, 3, {{0, 0}, {10, 0}, {0, 10}}, 1.0);
  const double best = brute_force_wcss(pts, 3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto fit = kmeans_fit(pts, 3, seed);
    EXPECT_TRUE(fit.converged);
    EXPECT_NEAR(fit.wcss_history.back(), best, 1e-9);
    EXPECT_NEAR(wcss_of(pts, fit.labels, 3), best, 1e-9);
  }
}

TEST(KMeans, NeverBeatsExhaustiveOptimum) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Point> pts;
    for (int i = 0; i < 7; ++i) pts.push_back({rng.uniform(), rng.uniform()});
    const double best = brute_force_wcss(pts, 2);
    const auto fit = kmeans_fit(pts, 2, trial);
    EXPECT_GE(fit.wcss_history.back(), best - 1e-12);
  }
}

TEST(KMeans, WcssNonIncreasing) {
  const auto pts = blobs(2, 40, {{0, 0}, {3, 1}, {1, 4}, {5, 5}}, 4.0);
  const auto fit = kmeans_fit(pts, 6, 7);
  for (std::size_t i = 1; i < fit.wcss_history.size(); ++i)
    EXPECT_LE(fit.wcss_history[i], fit.wcss_history[i - 1] + 1e-9);
}

TEST(KMeans, DeterministicPerSeed) {
  const auto pts = blobs(3, 30, {{0, 0}, {2, 2}}, 3.0);
  const auto a = kmeans_fit(pts, 4, 11);
  const auto b = kmeans_fit(pts, 4, 11);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.centroids, b.centroids);
}

TEST(KMeans, WeightsEqualDuplicates) {
  const std::vector<Point> distinct{{0, 0}, {1, 0}, {5, 5}, {6, 5}, {9, 0}};
  const std::vector<double> w{3, 1, 2, 2, 1};
  std::vector<Point> expanded;
  for (std::size_t i = 0; i < distinct.size(); ++i)
    for (int r = 0; r < static_cast<int>(w[i]); ++r) expanded.push_back(distinct[i]);
  const auto weighted = kmeans_fit(distinct, w, 3, 5);
  double expanded_wcss = 0.0;
  for (const auto& p : expanded) expanded_wcss += squared_distance(p, weighted.centroids[assign(weighted.centroids, p)]);
  EXPECT_NEAR(weighted.wcss_history.back(), expanded_wcss, 1e-12);
}

TEST(KMeans, RejectsTooManyClusters) {
  const std::vector<Point> pts{{0}, {0}, {1}};
  EXPECT_THROW(kmeans_fit(pts, 3, 0), std::invalid_argument);
  EXPECT_NO_THROW(kmeans_fit(pts, 2, 0));
  EXPECT_THROW(squared_distance({0, 1}, {0}), std::invalid_argument);
}

TEST(Assign, TiesGoToLowestId) {
  const std::vector<Point> c{{1, 0}, {-1, 0}};
  EXPECT_EQ(assign(c, {0, 0}), 0);
  EXPECT_EQ(assign(c, {-0.5, 0}), 1);
}

TEST(EpsilonNn, PairsAreValidAndMaximal) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Point> pts;
    for (int i = 0; i < 12; ++i) pts.push_back({rng.uniform() * 4, rng.uniform() * 4});
    const double eps = 0.8;
    const auto labels = epsilon_nn_grouping(pts, eps);
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < pts.size(); ++i) groups[labels[i]].push_back(i);
    std::vector<char> single(pts.size(), 0);
    for (const auto& [g, m] : groups) {
      ASSERT_LE(m.size(), 2u);
      if (m.size() == 2) EXPECT_LE(std::sqrt(squared_distance(pts[m[0]], pts[m[1]])), eps + 1e-12);
      else single[m[0]] = 1;
    }
    // no two unpaired points may still be within eps
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j)
        if (single[i] && single[j]) EXPECT_GT(std::sqrt(squared_distance(pts[i], pts[j])), eps);
  }
}

TEST(EpsilonNn, ClosestPairWinsFirst) {
  // 1 is closer to 2 than to 0
  const std::vector<Point> pts{{0.0}, {1.0}, {1.5}};
  const auto labels = epsilon_nn_grouping(pts, 1.0);
  EXPECT_EQ(labels[1], labels[2]);
  EXPECT_NE(labels[0], labels[1]);
  EXPECT_THROW(epsilon_nn_grouping(pts, -1.0), std::invalid_argument);
}

TEST(ClusterIndex, OccurrencesCoverDataset) {
  const auto maze = build_maze(stock_layout("umaze"));
  RegionGenerator gen(maze, RegionPolicyConfig{});
  DatasetMetadata meta;
  meta.num_states = maze.num_states();
  meta.num_actions = 4;
  const auto data = generate_dataset(gen, 300, 5, meta);
  const auto index = cluster_dataset(data, coordinate_features(maze), GroupingConfig{GroupingMode::kmeans, 10, 0, 3, 300});
  EXPECT_EQ(index.num_groups(), 10);
  std::size_t total = 0;
  for (int g = 0; g < index.num_groups(); ++g) {
    for (const auto& o : index.occurrences[g]) {
      EXPECT_EQ(index.group_of(data.episodes[o.episode].states[o.timestep]), g);
      ++total;
    }
  }
  EXPECT_EQ(total, data.num_state_occurrences());
}

TEST(ClusterIndex, ExactGroupingIsOneStatePerGroup) {
  const auto inst = fig1_counterexample();
  const auto data = generate_dataset(inst.cmp, inst.set, 50, 10, 1);
  const auto index = exact_state_grouping(data);
  std::set<int> groups;
  for (StateId s = 0; s < 5; ++s) groups.insert(index.group_of(s));
  EXPECT_EQ(groups.size(), 5u);
  for (int g = 0; g < index.num_groups(); ++g) {
    std::set<StateId> members;
    for (const auto& o : index.occurrences[g]) members.insert(data.episodes[o.episode].states[o.timestep]);
    EXPECT_EQ(members.size(), 1u);
  }
}

TEST(ClusterIndex, AbsentStateThrows) {
  const auto inst = fig1_counterexample();
  TrajectoryDataset data;
  data.metadata.num_states = 5;
  data.episodes.push_back({{0, 2, 3}, {0, 0}, {0, 0}, 1});
  const auto index = exact_state_grouping(data);
  EXPECT_THROW(index.group_of(1), std::out_of_range);
  EXPECT_THROW(index.group_of(7), std::out_of_range);
  EXPECT_THROW(waypoint_candidates(index, 99), std::out_of_range);
}

TEST(ClusterIndex, FileRoundTrip) {
  const auto maze = build_maze(stock_layout("umaze"));
  RegionGenerator gen(maze, RegionPolicyConfig{});
  DatasetMetadata meta;
  meta.num_states = maze.num_states();
  meta.num_actions = 4;
  const auto data = generate_dataset(gen, 100, 5, meta);
  const auto index = cluster_dataset(data, coordinate_features(maze), GroupingConfig{GroupingMode::kmeans, 8, 0, 1, 300});
  std::stringstream buf;
  write_index(index, buf);
  EXPECT_EQ(read_index(buf), index);
}

TEST(KMeans, OneClusterPerDistinctPointHasZeroWcss) {
  const std::vector<Point> pts{{0, 0}, {1, 0}, {0, 1}, {1, 0}, {5, 5}};
  const auto fit = kmeans_fit(pts, 4, 3);
  EXPECT_NEAR(fit.wcss_history.back(), 0.0, 1e-12);
}

TEST(KMeans, SingleClusterIsTheMean) {
  const auto pts = blobs(6, 30, {{1.0, 2.0}, {4.0, -1.0}}, 2.0);
  Point mean(2, 0.0);
  for (const auto& p : pts)
    for (int j = 0; j < 2; ++j) mean[j] += p[j] / pts.size();
  const auto fit = kmeans_fit(pts, 1, 0);
  ASSERT_EQ(fit.centroids.size(), 1u);
  EXPECT_NEAR(fit.centroids[0][0], mean[0], 1e-12);
  EXPECT_NEAR(fit.centroids[0][1], mean[1], 1e-12);
}

TEST(KMeans, DistantBlobsSeparatePerfectly) {
  const auto pts = blobs(7, 25, {{0.0, 0.0}, {10.0, 0.0}}, 1.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto fit = kmeans_fit(pts, 2, seed);
    for (int i = 1; i < 25; ++i) EXPECT_EQ(fit.labels[i], fit.labels[0]);
    for (int i = 26; i < 50; ++i) EXPECT_EQ(fit.labels[i], fit.labels[25]);
    EXPECT_NE(fit.labels[0], fit.labels[25]);
  }
}

TEST(Assign, MatchesLinearScan) {
  const auto cents = blobs(8, 7, {{0.0, 0.0}}, 6.0);
  const auto queries = blobs(9, 50, {{0.0, 0.0}}, 8.0);
  for (const auto& q : queries) {
    int best = 0;
    for (int c = 1; c < 7; ++c)
      if (squared_distance(cents[c], q) < squared_distance(cents[best], q)) best = c;
    EXPECT_EQ(assign(cents, q), best);
  }
}

TEST(EpsilonNn, ZeroEpsKeepsDistinctPointsApart) {
  const std::vector<Point> pts{{0}, {1}, {2}, {3.5}};
  EXPECT_EQ(epsilon_nn_grouping(pts, 0.0), (std::vector<int>{0, 1, 2, 3}));
}

TEST(EpsilonNn, CoincidentPointsShareAGroup) {
  const std::vector<Point> pts{{2, 2}, {7, 1}, {2, 2}};
  const auto labels = epsilon_nn_grouping(pts, 0.0);
  EXPECT_EQ(labels[0], labels[2]);
  EXPECT_NE(labels[0], labels[1]);
}

TEST(EpsilonNn, MatchesMinimumMatchingOnClusteredLine) {
  Rng rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    // tight pairs and loners spread along a line
    std::vector<Point> pts;
    double x = 0.0;
    while (pts.size() < 8) {
      pts.push_back({x});
      if (rng.uniform() < 0.7 && pts.size() < 8) pts.push_back({x + 0.1 + 0.3 * rng.uniform()});
      x += 5.0 + rng.uniform();
    }
    const double eps = 1.0;
    // brute force: most pairs within eps, then least total distance
    const std::size_t n = pts.size();
    std::vector<int> partner(n, -1), best_partner;
    std::pair<int, double> best{-1, 0.0};
    std::function<void(std::size_t, int, double)> rec = [&](std::size_t i, int count, double cost) {
      while (i < n && partner[i] >= 0) ++i;
      if (i == n) {
        if (count > best.first || (count == best.first && cost < best.second)) {
          best = {count, cost};
          best_partner = partner;
        }
        return;
      }
      partner[i] = static_cast<int>(i);
      rec(i + 1, count, cost);
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = std::abs(pts[i][0] - pts[j][0]);
        if (partner[j] >= 0 || d > eps) continue;
        partner[i] = static_cast<int>(j);
        partner[j] = static_cast<int>(i);
        rec(i + 1, count + 1, cost + d);
        partner[j] = -1;
      }
      partner[i] = -1;
    };
    rec(0, 0, 0.0);
    const auto labels = epsilon_nn_grouping(pts, eps);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) EXPECT_EQ(labels[i] == labels[j], best_partner[i] == static_cast<int>(j));
  }
}

TEST(ClusterIndex, SharedStateCollectsBothContexts) {
  const auto inst = fig1_counterexample();
  const auto data = generate_dataset(inst.cmp, inst.set, 200, 10, 11);
  const auto index = exact_state_grouping(data);
  std::set<int> contexts;
  for (const auto& occ : waypoint_candidates(index, index.group_of(2)))
    contexts.insert(data.episodes[occ.episode].hidden_context);
  EXPECT_EQ(contexts, (std::set<int>{0, 1}));
}
