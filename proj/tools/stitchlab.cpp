// stitchlab command-line driver.
//
//   stitchlab <command> <config> [key=value ...]
//
// Exit codes: 0 ok, 1 runtime failure (or a failed check), 2 bad usage/config.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "stitchlab/harness.hpp"
#include "stitchlab/lemmas.hpp"

using namespace stitchlab;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config cfg = Config::load(path);
  for (const auto& o : overrides) cfg.apply_override(o);
  return cfg;
}

// Writes to `out`, or stdout when it is empty. Files are written whole.
template <typename Fn>
void emit(const Config& cfg, Fn&& write) {
  const std::string& path = cfg.get("out");
  if (path.empty()) {
    write(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  write(f);
  if (!f) throw std::runtime_error("write failed for " + path);
}

const std::string& required(const Config& cfg, const char* key) {
  const std::string& v = cfg.get(key);
  if (v.empty()) throw ConfigError(std::string("key '") + key + "' is required for this command");
  return v;
}

TrajectoryDataset load_data(const Config& cfg, const Environment& env) {
  TrajectoryDataset data = read_dataset(required(cfg, "data"));
  if (data.metadata.cmp_fingerprint != cmp_fingerprint(env.cmp()))
    throw std::runtime_error("dataset was generated for a different environment");
  return data;
}

int cmd_gen_data(const Config& cfg) {
  const auto env = Environment::make(cfg);
  const auto data = env->generate(cfg, SeedStreams(cfg.get_uint("seed")).data);
  emit(cfg, [&](std::ostream& out) { write_dataset(data, out); });
  return 0;
}

int cmd_cluster(const Config& cfg) {
  const auto env = Environment::make(cfg);
  const auto data = load_data(cfg, *env);
  const auto index = build_index(cfg, *env, data, SeedStreams(cfg.get_uint("seed")).data);
  emit(cfg, [&](std::ostream& out) { write_index(index, out); });
  return 0;
}

int cmd_train(const Config& cfg) {
  const auto env = Environment::make(cfg);
  const auto data = load_data(cfg, *env);
  const SeedStreams streams(cfg.get_uint("seed"));
  ClusterIndex index;
  if (cfg.get_double("epsilon") > 0.0) {
    index = cfg.get("index").empty() ? build_index(cfg, *env, data, streams.data) : read_index(cfg.get("index"));
  }
  const auto trained = train_policy(cfg, *env, data, index, streams.sampler, streams.learner);
  emit(cfg, [&](std::ostream& out) { write_policy(trained.policy, out); });
  if (trained.report) {
    const std::string& path = cfg.get("out");
    if (!path.empty()) {
      std::ofstream loss(path + ".loss.csv", std::ios::binary);
      write_loss_csv(*trained.report, loss);
    }
    if (trained.report->diverged) {
      std::cerr << "training diverged\n";
      return 1;
    }
  }
  return 0;
}

int cmd_eval(const Config& cfg) {
  const auto env = Environment::make(cfg);
  const auto data = load_data(cfg, *env);
  const AnyPolicy policy = read_policy(required(cfg, "policy"));
  const PolicyShape want = env->policy_shape();
  const PolicyShape got = policy_shape(policy);
  if (got.num_states != want.num_states || got.num_outcomes != want.num_outcomes ||
      got.num_actions != want.num_actions)
    throw std::runtime_error("policy shape does not match the environment");
  const SeedStreams streams(cfg.get_uint("seed"));
  auto result = evaluate_policy(cfg, *env, policy, data, streams.pairs, streams.eval);
  result.seed = cfg.get_uint("seed");
  emit(cfg, [&](std::ostream& out) { write_eval_csv(result, out); });
  return 0;
}

int cmd_verify_lemmas(const Config& cfg) {
  LemmaSuiteConfig lc;
  if (!cfg.get("gamma").empty()) lc.gamma = cfg.get_double("gamma");
  lc.mc_rollouts = cfg.get_uint("mc_rollouts");
  lc.random_instances = static_cast<int>(cfg.get_int("random_instances"));
  lc.aug_samples = cfg.get_uint("aug_samples");
  lc.aug_min_samples = cfg.get_uint("aug_min_samples");
  lc.seed = cfg.get_uint("seed");
  const auto results = verify_lemmas(lc);
  bool ok = true;
  emit(cfg, [&](std::ostream& out) {
    for (const auto& r : results) {
      out << (r.pass ? "PASS " : "FAIL ") << r.name;
      for (const auto& [k, v] : r.values) out << ' ' << k << '=' << v;
      out << '\n';
      ok = ok && r.pass;
    }
  });
  return ok ? 0 : 1;
}

int cmd_aug_stats(const Config& cfg) {
  const auto env = Environment::make(cfg);
  if (env->kind() != Environment::Kind::instance)
    throw ConfigError("aug-stats needs an environment with known contexts (fig1, didactic_*)");
  const SeedStreams streams(cfg.get_uint("seed"));
  const auto data = cfg.get("data").empty() ? env->generate(cfg, streams.data) : load_data(cfg, *env);
  const auto index = build_index(cfg, *env, data, streams.data);
  const auto rows = aug_stats(data, index, env->cmp(), env->instance().set, augmentation_config(cfg, *env),
                              cfg.get_uint("aug_samples"), cfg.get_uint("aug_min_samples"), streams.sampler);
  emit(cfg, [&](std::ostream& out) {
    out << "state,action,samples,tv_zero_step,tv_one_step\n";
    for (const auto& r : rows) {
      out << r.state << ',' << r.action << ',' << r.samples << ',' << csv_double(r.tv_zero_step) << ','
          << csv_double(r.tv_one_step) << '\n';
    }
  });
  return 0;
}

int cmd_ablate(const Config& cfg) {
  const std::string& axis = cfg.get("ablate_axis");
  const auto values = cfg.get_list("ablate_values");
  if (values.empty()) throw ConfigError("ablate_values is empty");
  for (const auto& v : values) Config(cfg).set(axis, v);
  const auto rows = ablate(cfg, axis, values, cfg.get_uint("seed"), static_cast<int>(cfg.get_int("seeds")));
  emit(cfg, [&](std::ostream& out) { write_ablation_csv(axis, rows, out); });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular outcome-conditioned BC with temporal goal augmentation"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Config&);
  };
  const Command commands[] = {
      {"gen-data", "generate a trajectory dataset", cmd_gen_data},
      {"cluster", "group dataset states into waypoint clusters", cmd_cluster},
      {"train", "fit an outcome-conditioned policy", cmd_train},
      {"eval", "evaluate a policy on train/test tasks", cmd_eval},
      {"verify-lemmas", "run the exact and Monte Carlo occupancy checks", cmd_verify_lemmas},
      {"aug-stats", "compare augmented goals to the exact stitching distributions", cmd_aug_stats},
      {"ablate", "sweep one config key over several seeds", cmd_ablate},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("config", config_path, "config file")->required();
    sub->add_option("overrides", overrides, "key=value overrides");
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const Config cfg = load_config(config_path, overrides);
    for (const auto& [sub, c] : subs) {
      if (sub->parsed()) return c->run(cfg);
    }
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
