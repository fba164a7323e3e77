#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stitchlab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` document. Blank lines and lines starting with '#' are
/// skipped. Every key must appear in the schema; `version` is required.
class Config {
 public:
  static constexpr int kVersion = 1;

  struct Key {
    const char* name;
    const char* fallback;
    const char* help;
  };

  static const std::vector<Key>& schema() {
    static const std::vector<Key> keys = {
        {"version", "", "config schema version (1)"},
        {"env", "medium", "fig1 | didactic_v1 | didactic_stochastic | umaze | medium | large | collect"},
        {"seed", "0", "base seed"},
        {"seeds", "5", "number of seeds for ablate"},
        {"gamma", "", "discount; empty picks the environment default"},
        {"episodes", "2000", "episodes per dataset"},
        {"transitions", "0", "if > 0, generate episodes until this many transitions"},
        {"data_horizon", "50", "max actions per mixture rollout"},
        {"noise", "0.1", "maze navigator noise"},
        {"triplets", "100000", "training triplets drawn from the sampler"},
        {"dataset_scale", "1", "multiplies episodes and transitions"},
        {"offset", "geometric", "goal offset law: geometric | uniform"},
        {"epsilon", "0", "augmentation probability"},
        {"iterations", "1", "waypoint hops per augmentation"},
        {"grouping", "kmeans", "kmeans | exact"},
        {"k", "0", "k-means clusters; 0 picks the maze default"},
        {"features", "coords", "coords | onehot"},
        {"learner", "tabular", "tabular | softmax"},
        {"smoothing", "1", "tabular additive smoothing"},
        {"steps", "2000", "softmax gradient steps"},
        {"batch_size", "64", "softmax batch size"},
        {"learning_rate", "0.5", "softmax step size"},
        {"l2", "0", "softmax l2 coefficient"},
        {"outer_product", "false", "softmax state x outcome features"},
        {"eval_horizon", "200", "max actions per evaluation episode"},
        {"eval_episodes", "50", "episodes per task pair"},
        {"eval_mode", "greedy", "greedy | sample"},
        {"train_pairs", "6", "train pairs sampled from the data"},
        {"test_pairs", "6", "cross-region test pairs per maze run"},
        {"target_return", "2", "return commanded in the collect task"},
        {"aug_samples", "100000", "draws for aug-stats"},
        {"aug_min_samples", "500", "min matches per (s, a) row in aug-stats"},
        {"mc_rollouts", "100000", "Monte Carlo samples in verify-lemmas"},
        {"random_instances", "50", "random instances in verify-lemmas"},
        {"data", "", "dataset path"},
        {"index", "", "cluster index path"},
        {"policy", "", "policy path"},
        {"out", "", "output path; empty writes to stdout"},
        {"ablate_axis", "epsilon", "config key varied by ablate"},
        {"ablate_values", "0|0.5|1", "'|'-separated values for ablate_axis"},
    };
    return keys;
  }

  Config() {
    for (const auto& k : schema()) values_[k.name] = k.fallback;
  }

  static Config parse(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    bool has_version = false;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string trimmed = trim(line);
      if (trimmed.empty() || trimmed.front() == '#') continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      cfg.set(key, trim(trimmed.substr(eq + 1)));
      if (key == "version") has_version = true;
    }
    if (!has_version) throw ConfigError("missing required key 'version'");
    if (cfg.get_int("version") != kVersion)
      throw ConfigError("unsupported config version " + cfg.get("version"));
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }

  /// Applies one `key=value` override.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  long long get_int(const std::string& key) const {
    const std::string& v = get(key);
    long long out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
      throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
    return out;
  }

  unsigned long long get_uint(const std::string& key) const {
    const long long v = get_int(key);
    if (v < 0) throw ConfigError("key '" + key + "' must be non-negative");
    return static_cast<unsigned long long>(v);
  }

  double get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
      std::size_t used = 0;
      const double out = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': '" + v + "' is not a number");
    }
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
  }

  std::vector<std::string> get_list(const std::string& key, char sep = '|') const {
    std::vector<std::string> out;
    std::istringstream in(get(key));
    std::string item;
    while (std::getline(in, item, sep)) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace stitchlab
