#pragma once

#include <algorithm>
#include <array>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stitchlab/clustering.hpp"
#include "stitchlab/dataset.hpp"
#include "stitchlab/occupancy.hpp"

namespace stitchlab {

/// A CMP together with the data-collecting context mixture.
struct Instance {
  TabularCMP cmp;
  ContextPolicySet set;
};

// ---------------------------------------------------------------------------
// Five-state counterexample. Ids 0..4; actions 0 = right, 1 = up.
//   0 -right-> 2 -right-> 3        1 -up-> 2 -up-> 4
// Moves not drawn in the picture leave the state unchanged; 3 and 4 absorb.
// Context 0 always goes up from state 1, context 1 always goes right from 0.

namespace fig1 {
inline constexpr ActionId kRight = 0;
inline constexpr ActionId kUp = 1;
}  // namespace fig1

inline Instance fig1_counterexample(double gamma = 0.9) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
  using namespace fig1;
  Instance inst{TabularCMP(5, 2, gamma), {}};
  auto& cmp = inst.cmp;
  cmp.p(0, kRight, 2) = 1.0;
  cmp.p(0, kUp, 0) = 1.0;
  cmp.p(1, kUp, 2) = 1.0;
  cmp.p(1, kRight, 1) = 1.0;
  cmp.p(2, kRight, 3) = 1.0;
  cmp.p(2, kUp, 4) = 1.0;
  cmp.set_absorbing(3);
  cmp.set_absorbing(4);
  cmp.initial_dist = {0.5, 0.5, 0.0, 0.0, 0.0};

  const std::vector<ActionId> up(5, kUp);
  const std::vector<ActionId> right(5, kRight);
  inst.set.prior = {0.5, 0.5};
  inst.set.policies = {StationaryPolicy::deterministic(2, up), StationaryPolicy::deterministic(2, right)};
  inst.set.start_dists = {{0, 1, 0, 0, 0}, {1, 0, 0, 0, 0}};
  return inst;
}

// ---------------------------------------------------------------------------
// Fixed-horizon didactic MDPs, encoded as (base state, step) products.

struct DidacticContext {
  StateId start = 0;
  std::vector<ActionId> action;  // one per base state
};

struct DidacticConfig {
  int num_base_states = 0;
  int num_actions = 2;
  std::vector<std::vector<StateId>> next;  // [base][action]
  std::vector<DidacticContext> contexts;
  std::vector<double> prior;
  int horizon = 2;
  double discount = 0.9;
  /// Data policies take another action with `flip_prob` at these base states.
  std::vector<StateId> flip_states;
  double flip_prob = 0.0;
};

struct Didactic {
  Instance instance;
  int num_base_states = 0;
  int horizon = 0;

  StateId encode(StateId base, int step) const { return step * num_base_states + base; }
  StateId base_of(StateId s) const { return s % num_base_states; }
  int step_of(StateId s) const { return s / num_base_states; }
};

inline Didactic didactic(const DidacticConfig& config) {
  const int B = config.num_base_states;
  const int A = config.num_actions;
  if (B < 1 || A < 1) throw std::invalid_argument("didactic: empty state or action set");
  if (config.horizon < 1) throw std::invalid_argument("didactic: horizon must be >= 1");
  if (config.next.size() != static_cast<std::size_t>(B))
    throw std::invalid_argument("didactic: transition table needs one row per base state");
  for (const auto& row : config.next) {
    if (row.size() != static_cast<std::size_t>(A))
      throw std::invalid_argument("didactic: transition row needs one entry per action");
    for (StateId n : row) {
      if (n < 0 || n >= B) throw std::invalid_argument("didactic: successor out of range");
    }
  }
  if (config.contexts.empty() || config.prior.size() != config.contexts.size() ||
      !detail::is_distribution(config.prior))
    throw std::invalid_argument("didactic: context prior does not match the contexts");
  if (!(config.flip_prob >= 0.0 && config.flip_prob <= 1.0))
    throw std::invalid_argument("didactic: flip_prob outside [0, 1]");

  Didactic d;
  d.num_base_states = B;
  d.horizon = config.horizon;
  const int S = B * (config.horizon + 1);
  auto& cmp = d.instance.cmp;
  cmp = TabularCMP(S, A, config.discount);
  for (int step = 0; step < config.horizon; ++step) {
    for (StateId b = 0; b < B; ++b) {
      for (ActionId a = 0; a < A; ++a) cmp.p(d.encode(b, step), a, d.encode(config.next[b][a], step + 1)) = 1.0;
    }
  }
  for (StateId b = 0; b < B; ++b) cmp.set_absorbing(d.encode(b, config.horizon));

  auto& set = d.instance.set;
  set.prior = config.prior;
  for (const auto& ctx : config.contexts) {
    if (ctx.start < 0 || ctx.start >= B || ctx.action.size() != static_cast<std::size_t>(B))
      throw std::invalid_argument("didactic: context needs a valid start and one action per state");
    StationaryPolicy pi(S, A);
    for (StateId s = 0; s < S; ++s) {
      const StateId b = d.base_of(s);
      const ActionId chosen = ctx.action[b];
      if (chosen < 0 || chosen >= A) throw std::invalid_argument("didactic: action out of range");
      const bool flips = A > 1 && std::find(config.flip_states.begin(), config.flip_states.end(), b) !=
                                      config.flip_states.end();
      for (ActionId a = 0; a < A; ++a) {
        if (!flips) pi(s, a) = a == chosen ? 1.0 : 0.0;
        else pi(s, a) = a == chosen ? 1.0 - config.flip_prob : config.flip_prob / (A - 1);
      }
    }
    set.policies.push_back(std::move(pi));
    std::vector<double> start(static_cast<std::size_t>(S), 0.0);
    start[d.encode(ctx.start, 0)] = 1.0;
    set.start_dists.push_back(std::move(start));
  }
  cmp.initial_dist = mixture_start_dist(cmp, set);
  return d;
}

namespace didactic_ids {
inline constexpr ActionId kRight = 0;
inline constexpr ActionId kUp = 1;
}  // namespace didactic_ids

/// Five cells (x, y): 0 (0,1), 1 (1,0), 2 (1,1), 3 (1,2), 4 (2,1); moves off
/// the cell set are no-ops. Context 0 starts at 1 and goes up twice,
/// context 1 starts at 0 and goes right twice. Both pass through 2 at step 1.
inline DidacticConfig didactic_v1_config() {
  using namespace didactic_ids;
  DidacticConfig c;
  c.num_base_states = 5;
  c.num_actions = 2;
  //         right up
  c.next = {{2, 0}, {1, 2}, {4, 3}, {3, 3}, {4, 4}};
  c.contexts = {{1, {kUp, kUp, kUp, kUp, kUp}}, {0, {kRight, kRight, kRight, kRight, kRight}}};
  c.prior = {0.5, 0.5};
  c.horizon = 2;
  c.discount = 0.9;
  return c;
}

inline DidacticConfig didactic_stochastic_config(double flip_prob = 0.2) {
  DidacticConfig c = didactic_v1_config();
  c.flip_states = {0, 1};
  c.flip_prob = flip_prob;
  return c;
}

// ---------------------------------------------------------------------------
// Random small instances

/// Random CMP with dense-ish random dynamics, random stochastic context
/// policies and per-context start distributions.
inline Instance random_instance(Rng& rng, int max_states = 8, int max_actions = 3,
                                int max_contexts = 3, double gamma = 0.9) {
  const int S = 2 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(max_states - 1)));
  const int A = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(max_actions)));
  const int H = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(max_contexts)));
  auto random_dist = [&rng](int n, double zero_prob) {
    std::vector<double> p(static_cast<std::size_t>(n));
    double total = 0.0;
    for (double& x : p) {
      x = rng.bernoulli(zero_prob) ? 0.0 : rng.uniform() + 1e-3;
      total += x;
    }
    if (total == 0.0) {
      p[rng.uniform_index(p.size())] = 1.0;
      return p;
    }
    for (double& x : p) x /= total;
    return p;
  };
  Instance inst{TabularCMP(S, A, gamma), {}};
  for (StateId s = 0; s < S; ++s) {
    for (ActionId a = 0; a < A; ++a) {
      const auto row = random_dist(S, 0.5);
      for (StateId n = 0; n < S; ++n) inst.cmp.p(s, a, n) = row[n];
    }
  }
  if (rng.bernoulli(0.5)) inst.cmp.set_absorbing(static_cast<StateId>(rng.uniform_index(S)));
  inst.set.prior = random_dist(H, 0.0);
  for (ContextId h = 0; h < H; ++h) {
    StationaryPolicy pi(S, A);
    for (StateId s = 0; s < S; ++s) {
      const auto row = random_dist(A, 0.3);
      for (ActionId a = 0; a < A; ++a) pi(s, a) = row[a];
    }
    inst.set.policies.push_back(std::move(pi));
    inst.set.start_dists.push_back(random_dist(S, 0.5));
  }
  inst.cmp.initial_dist = mixture_start_dist(inst.cmp, inst.set);
  return inst;
}

// ---------------------------------------------------------------------------
// Grid mazes

namespace grid {
inline constexpr ActionId kUp = 0;
inline constexpr ActionId kDown = 1;
inline constexpr ActionId kLeft = 2;
inline constexpr ActionId kRight = 3;
inline constexpr int kNumActions = 4;
inline constexpr int kRowDelta[4] = {-1, 1, 0, 0};
inline constexpr int kColDelta[4] = {0, 0, -1, 1};
}  // namespace grid

struct Cell {
  int row = 0;
  int col = 0;
  auto operator<=>(const Cell&) const = default;
};

/// Layout characters: '#' wall, '.' free, '1'..'6' region cells, 'K' key,
/// 'S' start. Non-digit free cells join every region they touch, which is how
/// overlap corridors are drawn.
struct GridMaze {
  int width = 0;
  int height = 0;
  std::vector<std::string> layout;
  std::vector<StateId> cell_state;  // row * width + col, -1 for walls
  std::vector<Cell> cells;          // per state, row-major order
  std::vector<std::vector<StateId>> regions;
  std::vector<std::vector<char>> membership;  // [region][state]
  std::vector<StateId> keys;
  StateId start = -1;

  int num_states() const { return static_cast<int>(cells.size()); }
  int num_regions() const { return static_cast<int>(regions.size()); }

  StateId state_at(int row, int col) const {
    if (row < 0 || row >= height || col < 0 || col >= width) return -1;
    return cell_state[static_cast<std::size_t>(row) * width + col];
  }
  StateId move(StateId s, ActionId a) const {
    const Cell c = cells[s];
    const StateId n = state_at(c.row + grid::kRowDelta[a], c.col + grid::kColDelta[a]);
    return n < 0 ? s : n;
  }
  bool in_region(int region, StateId s) const { return membership[region][s] != 0; }
  std::vector<int> regions_of(StateId s) const {
    std::vector<int> out;
    for (int r = 0; r < num_regions(); ++r) {
      if (in_region(r, s)) out.push_back(r);
    }
    return out;
  }
};

namespace detail {

/// BFS distances to `goal` over states accepted by `allowed` (-1 if unreachable).
template <typename Allowed>
std::vector<int> bfs_to(const GridMaze& maze, StateId goal, Allowed&& allowed) {
  std::vector<int> dist(static_cast<std::size_t>(maze.num_states()), -1);
  std::deque<StateId> queue{goal};
  dist[goal] = 0;
  while (!queue.empty()) {
    const StateId s = queue.front();
    queue.pop_front();
    for (ActionId a = 0; a < grid::kNumActions; ++a) {
      const StateId n = maze.move(s, a);
      if (dist[n] >= 0 || !allowed(n)) continue;
      dist[n] = dist[s] + 1;
      queue.push_back(n);
    }
  }
  return dist;
}

template <typename Allowed>
bool connected(const GridMaze& maze, const std::vector<StateId>& states, Allowed&& allowed) {
  if (states.empty()) return true;
  const auto dist = bfs_to(maze, states.front(), allowed);
  return std::all_of(states.begin(), states.end(), [&](StateId s) { return dist[s] >= 0; });
}

}  // namespace detail

inline GridMaze build_maze(std::string_view text) {
  GridMaze maze;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) maze.layout.push_back(line);
  }
  if (maze.layout.empty()) throw std::invalid_argument("maze layout is empty");
  maze.height = static_cast<int>(maze.layout.size());
  maze.width = static_cast<int>(maze.layout.front().size());
  for (const auto& row : maze.layout) {
    if (static_cast<int>(row.size()) != maze.width) throw std::invalid_argument("maze layout is not rectangular");
  }
  maze.cell_state.assign(static_cast<std::size_t>(maze.width) * maze.height, -1);
  int max_region = 0;
  for (int r = 0; r < maze.height; ++r) {
    for (int c = 0; c < maze.width; ++c) {
      const char ch = maze.layout[r][c];
      if (ch == '#') continue;
      if (ch != '.' && ch != 'K' && ch != 'S' && !(ch >= '1' && ch <= '6'))
        throw std::invalid_argument(std::string("unknown layout character '") + ch + "'");
      const auto s = static_cast<StateId>(maze.cells.size());
      maze.cell_state[static_cast<std::size_t>(r) * maze.width + c] = s;
      maze.cells.push_back({r, c});
      if (ch >= '1' && ch <= '6') max_region = std::max(max_region, ch - '0');
      if (ch == 'K') maze.keys.push_back(s);
      if (ch == 'S') {
        if (maze.start >= 0) throw std::invalid_argument("layout has more than one start cell");
        maze.start = s;
      }
    }
  }
  if (maze.cells.empty()) throw std::invalid_argument("maze has no free cells");
  const int S = maze.num_states();
  maze.membership.assign(static_cast<std::size_t>(max_region), std::vector<char>(static_cast<std::size_t>(S), 0));
  for (StateId s = 0; s < S; ++s) {
    const Cell cell = maze.cells[s];
    const char ch = maze.layout[cell.row][cell.col];
    if (ch >= '1' && ch <= '6') {
      maze.membership[ch - '1'][s] = 1;
      continue;
    }
    for (ActionId a = 0; a < grid::kNumActions; ++a) {
      const int r = cell.row + grid::kRowDelta[a];
      const int c = cell.col + grid::kColDelta[a];
      if (maze.state_at(r, c) < 0) continue;
      const char nb = maze.layout[r][c];
      if (nb >= '1' && nb <= '6') maze.membership[nb - '1'][s] = 1;
    }
  }
  for (int region = 0; region < max_region; ++region) {
    std::vector<StateId> members;
    for (StateId s = 0; s < S; ++s) {
      if (maze.membership[region][s]) members.push_back(s);
    }
    if (members.empty())
      throw std::invalid_argument("region " + std::to_string(region + 1) + " has no cells");
    maze.regions.push_back(std::move(members));
  }

  std::vector<StateId> all(static_cast<std::size_t>(S));
  for (StateId s = 0; s < S; ++s) all[s] = s;
  if (!detail::connected(maze, all, [](StateId) { return true; }))
    throw std::invalid_argument("maze free space is disconnected");
  for (int region = 0; region < maze.num_regions(); ++region) {
    if (!detail::connected(maze, maze.regions[region], [&](StateId s) { return maze.in_region(region, s); }))
      throw std::invalid_argument("region " + std::to_string(region + 1) + " is disconnected");
  }
  if (maze.num_regions() > 1) {
    // regions linked through shared overlap cells must form one component
    std::vector<int> seen{0};
    std::vector<char> mark(static_cast<std::size_t>(maze.num_regions()), 0);
    mark[0] = 1;
    for (std::size_t i = 0; i < seen.size(); ++i) {
      for (int other = 0; other < maze.num_regions(); ++other) {
        if (mark[other]) continue;
        const bool share = std::any_of(maze.regions[other].begin(), maze.regions[other].end(),
                                       [&](StateId s) { return maze.in_region(seen[i], s); });
        if (share) {
          mark[other] = 1;
          seen.push_back(other);
        }
      }
    }
    if (static_cast<int>(seen.size()) != maze.num_regions())
      throw std::invalid_argument("some regions share no overlap cell with the others");
  }
  return maze;
}

/// Deterministic grid dynamics with a uniform start law and no absorbing states.
inline TabularCMP maze_cmp(const GridMaze& maze, double gamma = 0.99) {
  const int S = maze.num_states();
  TabularCMP cmp(S, grid::kNumActions, gamma);
  for (StateId s = 0; s < S; ++s) {
    for (ActionId a = 0; a < grid::kNumActions; ++a) cmp.p(s, a, maze.move(s, a)) = 1.0;
  }
  std::fill(cmp.initial_dist.begin(), cmp.initial_dist.end(), 1.0 / S);
  return cmp;
}

/// (row, col) coordinates per state.
inline FeatureMap coordinate_features(const GridMaze& maze) {
  FeatureMap map{"coords", {}};
  for (const Cell& c : maze.cells) map.features.push_back({static_cast<double>(c.row), static_cast<double>(c.col)});
  return map;
}

inline constexpr std::string_view kUmazeLayout = R"(
##########
#11111111#
#1#11##11#
#11111111#
######...#
#22222222#
#2##22#22#
#22222222#
##########
)";

inline constexpr std::string_view kMediumLayout = R"(
#############
#11111.22222#
#1#111.22#22#
#111#1.2#222#
#11111.22222#
#.....#.....#
#33333.44444#
#3#333.4#444#
#333#3.44#44#
#33333.44444#
#############
)";

inline constexpr std::string_view kLargeLayout = R"(
###################
#11111.22222.33333#
#1#111.22#22.3#333#
#111#1.2#222.33#33#
#11111.22222.33333#
#.....#.....#.....#
#44444.55555.66666#
#4#444.5#555.6#666#
#444#4.55#55.66#66#
#44444.55555.66666#
###################
)";

inline std::string_view stock_layout(std::string_view name) {
  if (name == "umaze") return kUmazeLayout;
  if (name == "medium") return kMediumLayout;
  if (name == "large") return kLargeLayout;
  throw std::invalid_argument("unknown maze '" + std::string(name) + "'");
}

/// k-means cluster count paired with each stock maze.
inline int default_k(std::string_view name) {
  if (name == "umaze") return 20;
  if (name == "medium") return 40;
  if (name == "large") return 80;
  throw std::invalid_argument("unknown maze '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Region navigators

struct RegionPolicyConfig {
  std::vector<double> region_prior;  // empty = uniform
  double noise = 0.1;
  int max_steps = 0;  // 0 = four times the region size
};

/// Episodes: region ~ prior, start and goal uniform in the region, then the
/// in-region shortest path (lowest action id among distance-decreasing moves)
/// with probability `noise` of a random in-region move instead. The episode
/// stops at the goal. The region id is the hidden context.
class RegionGenerator {
 public:
  RegionGenerator(const GridMaze& maze, RegionPolicyConfig config)
      : maze_(&maze), config_(std::move(config)) {
    if (!(config_.noise >= 0.0 && config_.noise <= 0.5)) throw std::invalid_argument("noise must lie in [0, 0.5]");
    const int R = maze.num_regions();
    if (R < 1) throw std::invalid_argument("maze has no regions");
    if (config_.region_prior.empty()) config_.region_prior.assign(static_cast<std::size_t>(R), 1.0 / R);
    if (config_.region_prior.size() != static_cast<std::size_t>(R) || !detail::is_distribution(config_.region_prior))
      throw std::invalid_argument("region prior does not match the regions");
    dist_.resize(static_cast<std::size_t>(R));
    for (int r = 0; r < R; ++r) {
      for (StateId g : maze.regions[r]) {
        auto d = detail::bfs_to(maze, g, [&](StateId s) { return maze.in_region(r, s); });
        for (StateId s : maze.regions[r]) {
          if (d[s] < 0) throw std::invalid_argument("in-region goal unreachable");
        }
        dist_[r][g] = std::move(d);
      }
    }
  }

  const GridMaze& maze() const { return *maze_; }

  /// Shortest-path action toward `goal` inside `region`.
  ActionId path_action(int region, StateId s, StateId goal) const {
    const auto& d = dist_[region].at(goal);
    for (ActionId a = 0; a < grid::kNumActions; ++a) {
      const StateId n = maze_->move(s, a);
      if (maze_->in_region(region, n) && d[n] == d[s] - 1) return a;
    }
    throw std::logic_error("no distance-decreasing move");
  }

  Trajectory sample(Rng& rng) const {
    const auto region = static_cast<int>(rng.categorical(config_.region_prior));
    const auto& cells = maze_->regions[region];
    const StateId start = cells[rng.uniform_index(cells.size())];
    const StateId goal = cells[rng.uniform_index(cells.size())];
    return episode(region, start, goal, rng);
  }

  Trajectory episode(int region, StateId start, StateId goal, Rng& rng) const {
    const int cap = config_.max_steps > 0 ? config_.max_steps
                                          : 4 * static_cast<int>(maze_->regions[region].size());
    Trajectory traj;
    traj.hidden_context = region;
    traj.states.push_back(start);
    StateId s = start;
    for (int step = 0; step < cap && s != goal; ++step) {
      ActionId a = path_action(region, s, goal);
      if (config_.noise > 0.0 && rng.bernoulli(config_.noise)) {
        std::vector<ActionId> options;
        for (ActionId b = 0; b < grid::kNumActions; ++b) {
          if (maze_->in_region(region, maze_->move(s, b))) options.push_back(b);
        }
        a = options[rng.uniform_index(options.size())];
      }
      s = maze_->move(s, a);
      traj.actions.push_back(a);
      traj.rewards.push_back(0.0);
      traj.states.push_back(s);
    }
    return traj;
  }

 private:
  const GridMaze* maze_;
  RegionPolicyConfig config_;
  std::vector<std::map<StateId, std::vector<int>>> dist_;
};

// ---------------------------------------------------------------------------
// Train/test certification

enum class Split { train, test };

struct TaskPair {
  StateId start = 0;
  StateId goal = 0;
  Split split = Split::train;
  bool operator==(const TaskPair&) const = default;
};

struct Certification {
  std::vector<TaskPair> pairs;
  std::vector<std::pair<std::pair<StateId, StateId>, std::string>> rejected;

  std::vector<TaskPair> of(Split split) const {
    std::vector<TaskPair> out;
    for (const auto& p : pairs) {
      if (p.split == split) out.push_back(p);
    }
    return out;
  }
};

/// Exact certificate: test iff the mixture never produces the pair while the
/// BC policy does.
inline Certification certify_task_split(const TabularCMP& cmp, const ContextPolicySet& set,
                                        const std::vector<std::pair<StateId, StateId>>& pairs) {
  const JointTables tables = joint_tables(cmp, set);
  Certification out;
  for (auto [s, g] : pairs) {
    if (!cmp.valid_state(s) || !cmp.valid_state(g)) {
      out.rejected.push_back({{s, g}, "state id out of range"});
      continue;
    }
    const auto idx = static_cast<std::size_t>(s) * cmp.num_states + g;
    if (tables.train[idx] > 0.0) {
      out.pairs.push_back({s, g, Split::train});
    } else if (tables.test[idx] > 0.0) {
      out.pairs.push_back({s, g, Split::test});
    } else {
      out.rejected.push_back({{s, g}, "goal unreachable under the BC policy"});
    }
  }
  return out;
}

/// seen[s * S + g] is true when g occurs strictly after s in some episode.
struct CoOccurrence {
  int num_states = 0;
  std::vector<char> seen;
  bool operator()(StateId s, StateId g) const {
    return seen[static_cast<std::size_t>(s) * num_states + g] != 0;
  }
};

inline CoOccurrence co_occurrence(const TrajectoryDataset& data) {
  const int S = data.metadata.num_states;
  CoOccurrence co{S, std::vector<char>(static_cast<std::size_t>(S) * S, 0)};
  std::vector<char> later(static_cast<std::size_t>(S));
  for (const auto& ep : data.episodes) {
    std::fill(later.begin(), later.end(), 0);
    std::vector<StateId> later_list;
    for (std::size_t t = ep.states.size(); t-- > 0;) {
      const StateId s = ep.states[t];
      for (StateId g : later_list) co.seen[static_cast<std::size_t>(s) * S + g] = 1;
      if (!later[s]) {
        later[s] = 1;
        later_list.push_back(s);
      }
    }
  }
  return co;
}

/// Empirical certificate for generator-style data: test iff the pair never
/// co-occurs in the dataset and the goal is reachable in the maze.
inline Certification certify_task_split(const GridMaze& maze, const CoOccurrence& co,
                                        const std::vector<std::pair<StateId, StateId>>& pairs) {
  Certification out;
  for (auto [s, g] : pairs) {
    if (s < 0 || g < 0 || s >= maze.num_states() || g >= maze.num_states()) {
      out.rejected.push_back({{s, g}, "state id out of range"});
      continue;
    }
    if (s == g) {
      out.rejected.push_back({{s, g}, "start equals goal"});
      continue;
    }
    const auto dist = detail::bfs_to(maze, g, [](StateId) { return true; });
    if (dist[s] < 0) {
      out.rejected.push_back({{s, g}, "goal unreachable"});
      continue;
    }
    out.pairs.push_back({s, g, co(s, g) ? Split::train : Split::test});
  }
  return out;
}

/// Region pairs that share at least one overlap cell.
inline std::vector<std::pair<int, int>> adjacent_regions(const GridMaze& maze) {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a < maze.num_regions(); ++a) {
    for (int b = 0; b < maze.num_regions(); ++b) {
      if (a == b) continue;
      const auto& cells = maze.regions[a];
      if (std::any_of(cells.begin(), cells.end(), [&](StateId s) { return maze.in_region(b, s); }))
        out.emplace_back(a, b);
    }
  }
  return out;
}

/// Random cross-region tasks: an ordered pair of adjacent regions, a start
/// that belongs only to the first and a goal that belongs only to the second.
inline std::vector<std::pair<StateId, StateId>> sample_cross_region_pairs(const GridMaze& maze,
                                                                          std::size_t count, Rng& rng) {
  const auto links = adjacent_regions(maze);
  if (links.empty()) throw std::invalid_argument("maze has no adjacent regions");
  auto exclusive = [&](int region) {
    std::vector<StateId> out;
    for (StateId s : maze.regions[region]) {
      if (maze.regions_of(s).size() == 1) out.push_back(s);
    }
    return out;
  };
  std::vector<std::pair<StateId, StateId>> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto [a, b] = links[rng.uniform_index(links.size())];
    const auto from = exclusive(a);
    const auto to = exclusive(b);
    if (from.empty() || to.empty()) throw std::invalid_argument("region has no exclusive cells");
    out.emplace_back(from[rng.uniform_index(from.size())], to[rng.uniform_index(to.size())]);
  }
  return out;
}

/// Distinct (state, later goal) pairs drawn from plain triplets, s != g.
inline std::vector<std::pair<StateId, StateId>> sample_train_pairs(const TrajectoryDataset& data,
                                                                   double discount, std::size_t count,
                                                                   Rng& rng) {
  TripletSampler sampler(data, SamplerConfig{discount}, Rng(0));
  std::set<std::pair<StateId, StateId>> seen;
  std::vector<std::pair<StateId, StateId>> out;
  for (std::size_t tries = 0; out.size() < count && tries < 100 * count + 1000; ++tries) {
    const Triplet t = sampler.draw(rng);
    if (t.state == t.outcome) continue;
    if (seen.insert({t.state, t.outcome}).second) out.emplace_back(t.state, t.outcome);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Two-key collect task

inline constexpr std::string_view kCollectLayout = R"(
#######
#K...K#
#.#.#.#
#.#.#.#
#..S..#
#######
)";

/// Cells visited in order along lowest-action-id shortest paths.
struct ScriptedRoute {
  std::vector<StateId> route;
  ContextId context = 0;
};

/// Reward 1 on the first entry to each key cell.
inline Trajectory scripted_episode(const GridMaze& maze, const ScriptedRoute& script) {
  Trajectory traj;
  traj.hidden_context = script.context;
  StateId s = script.route.front();
  traj.states.push_back(s);
  std::vector<char> collected(maze.keys.size(), 0);
  for (std::size_t i = 1; i < script.route.size(); ++i) {
    const auto dist = detail::bfs_to(maze, script.route[i], [](StateId) { return true; });
    while (s != script.route[i]) {
      ActionId a = 0;
      while (dist[maze.move(s, a)] != dist[s] - 1) ++a;
      s = maze.move(s, a);
      double r = 0.0;
      for (std::size_t k = 0; k < maze.keys.size(); ++k) {
        if (maze.keys[k] == s && !collected[k]) {
          collected[k] = 1;
          r = 1.0;
        }
      }
      traj.actions.push_back(a);
      traj.rewards.push_back(r);
      traj.states.push_back(s);
    }
  }
  return traj;
}

struct CollectTask {
  GridMaze maze;
  TabularCMP cmp;  // cell dynamics; key rewards are tracked by the episode
  std::array<ScriptedRoute, 2> routes;
};

/// Keys at the two top corners, start at the bottom middle. Route A goes round
/// the left column to key 1 and back down the middle; route B goes up the
/// middle to key 2 and back round the right column. Each collects one key.
inline CollectTask collect_task() {
  CollectTask task;
  task.maze = build_maze(kCollectLayout);
  task.cmp = maze_cmp(task.maze, 0.9);
  const auto& m = task.maze;
  if (m.keys.size() != 2 || m.start < 0) throw std::logic_error("collect layout needs two keys and a start");
  const StateId S = m.start;
  const StateId junction = m.state_at(1, 3);
  task.routes[0] = {{S, m.state_at(4, 1), m.keys[0], junction, S}, 0};
  task.routes[1] = {{S, junction, m.keys[1], m.state_at(4, 5), S}, 1};
  return task;
}

/// Uniform mixture over the two scripted routes.
struct CollectGenerator {
  const CollectTask* task;
  Trajectory sample(Rng& rng) const {
    return scripted_episode(task->maze, task->routes[rng.uniform_index(2)]);
  }
};

/// Highest return reachable under the grid dynamics (search over cell and
/// collected-key mask).
inline int max_achievable_return(const CollectTask& task, int horizon) {
  const auto& m = task.maze;
  const int K = static_cast<int>(m.keys.size());
  const int masks = 1 << K;
  std::vector<char> seen(static_cast<std::size_t>(m.num_states()) * masks, 0);
  std::vector<std::pair<StateId, int>> frontier{{m.start, 0}};
  seen[static_cast<std::size_t>(m.start) * masks] = 1;
  int best = 0;
  for (int step = 0; step < horizon && !frontier.empty(); ++step) {
    std::vector<std::pair<StateId, int>> next;
    for (auto [s, mask] : frontier) {
      for (ActionId a = 0; a < grid::kNumActions; ++a) {
        const StateId n = m.move(s, a);
        int nm = mask;
        for (int k = 0; k < K; ++k) {
          if (m.keys[k] == n) nm |= 1 << k;
        }
        auto& flag = seen[static_cast<std::size_t>(n) * masks + nm];
        if (flag) continue;
        flag = 1;
        best = std::max(best, __builtin_popcount(static_cast<unsigned>(nm)));
        next.emplace_back(n, nm);
      }
    }
    frontier = std::move(next);
  }
  return best;
}

/// test iff no timestep of any episode has return-to-go equal to `outcome`
/// while the task can still achieve it.
inline std::optional<Split> certify_return_outcome(const TrajectoryDataset& data, const CollectTask& task,
                                                   int outcome, int horizon) {
  if (outcome > max_achievable_return(task, horizon)) return std::nullopt;
  for (const auto& ep : data.episodes) {
    for (std::size_t t = 0; t < ep.states.size(); ++t) {
      if (return_bucket(return_to_go(ep, t)) == outcome) return Split::train;
    }
  }
  return Split::test;
}

}  // namespace stitchlab
