#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "stitchlab/dataset.hpp"

namespace stitchlab {

inline constexpr const char* kPolicyFormat = "stitchlab-pol-v1";

struct PolicyShape {
  int num_states = 0;
  int num_outcomes = 0;
  int num_actions = 0;
  bool operator==(const PolicyShape&) const = default;
};

namespace detail {
inline void check_triplet(const PolicyShape& shape, const Triplet& t) {
  if (t.state < 0 || t.state >= shape.num_states || t.action < 0 || t.action >= shape.num_actions ||
      t.outcome < 0 || t.outcome >= shape.num_outcomes)
    throw std::out_of_range("triplet outside the policy shape");
}
}  // namespace detail

/// Count table c[s][o][a] with additive smoothing.
struct TabularOcbcPolicy {
  PolicyShape shape;
  double smoothing = 1.0;
  std::vector<std::uint64_t> counts;

  TabularOcbcPolicy() = default;
  TabularOcbcPolicy(PolicyShape sh, double alpha)
      : shape(sh),
        smoothing(alpha),
        counts(static_cast<std::size_t>(sh.num_states) * sh.num_outcomes * sh.num_actions, 0) {
    if (alpha < 0.0) throw std::invalid_argument("smoothing must be >= 0");
  }

  std::size_t offset(StateId s, int o) const {
    return (static_cast<std::size_t>(s) * shape.num_outcomes + o) * shape.num_actions;
  }
  std::uint64_t count(StateId s, int o, ActionId a) const { return counts[offset(s, o) + a]; }
  std::uint64_t cell_total(StateId s, int o) const {
    std::uint64_t n = 0;
    for (ActionId a = 0; a < shape.num_actions; ++a) n += count(s, o, a);
    return n;
  }

  void add(const Triplet& t) {
    detail::check_triplet(shape, t);
    ++counts[offset(t.state, t.outcome) + t.action];
  }

  /// Unseen cells, or outcomes outside the table, give the uniform row.
  std::vector<double> action_probs(StateId s, int o) const {
    const auto A = static_cast<std::size_t>(shape.num_actions);
    std::vector<double> p(A, 1.0 / static_cast<double>(A));
    if (s < 0 || s >= shape.num_states || o < 0 || o >= shape.num_outcomes) return p;
    const double total = static_cast<double>(cell_total(s, o)) + smoothing * static_cast<double>(A);
    if (!(total > 0.0)) return p;
    for (std::size_t a = 0; a < A; ++a)
      p[a] = (static_cast<double>(count(s, o, static_cast<ActionId>(a))) + smoothing) / total;
    return p;
  }

  bool operator==(const TabularOcbcPolicy&) const = default;
};

template <TripletSource Source>
TabularOcbcPolicy fit_tabular(Source& sampler, std::size_t n_samples, double smoothing,
                              PolicyShape shape) {
  if (n_samples < 1) throw std::invalid_argument("fit_tabular: n_samples must be >= 1");
  TabularOcbcPolicy policy(shape, smoothing);
  for (std::size_t i = 0; i < n_samples; ++i) policy.add(sampler.next());
  return policy;
}

// ---------------------------------------------------------------------------
// Softmax-linear learner

/// Logits W * phi(s, o), phi = onehot(s) ⊕ onehot(o) [⊕ onehot(s, o)].
struct SoftmaxOcbcPolicy {
  PolicyShape shape;
  bool outer_product = false;
  double l2_coef = 0.0;
  Eigen::MatrixXd weights;  // actions x features

  SoftmaxOcbcPolicy() = default;
  SoftmaxOcbcPolicy(PolicyShape sh, double l2, bool outer = false)
      : shape(sh), outer_product(outer), l2_coef(l2) {
    if (l2 < 0.0) throw std::invalid_argument("l2_coef must be >= 0");
    weights = Eigen::MatrixXd::Zero(sh.num_actions, num_features());
  }

  Eigen::Index num_features() const {
    Eigen::Index f = shape.num_states + shape.num_outcomes;
    if (outer_product) f += static_cast<Eigen::Index>(shape.num_states) * shape.num_outcomes;
    return f;
  }

  /// Indices of the active (value 1) features.
  std::vector<Eigen::Index> active_features(StateId s, int o) const {
    std::vector<Eigen::Index> idx{s, static_cast<Eigen::Index>(shape.num_states) + o};
    if (outer_product)
      idx.push_back(static_cast<Eigen::Index>(shape.num_states) + shape.num_outcomes +
                    static_cast<Eigen::Index>(s) * shape.num_outcomes + o);
    return idx;
  }

  Eigen::VectorXd logits(StateId s, int o) const {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(shape.num_actions);
    for (Eigen::Index f : active_features(s, o)) z += weights.col(f);
    return z;
  }

  std::vector<double> action_probs(StateId s, int o) const {
    const auto A = static_cast<std::size_t>(shape.num_actions);
    if (s < 0 || s >= shape.num_states || o < 0 || o >= shape.num_outcomes)
      return std::vector<double>(A, 1.0 / static_cast<double>(A));
    const Eigen::VectorXd z = logits(s, o);
    const double m = z.maxCoeff();
    std::vector<double> p(A);
    double total = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      p[a] = std::exp(z[static_cast<Eigen::Index>(a)] - m);
      total += p[a];
    }
    for (double& x : p) x /= total;
    return p;
  }

  bool operator==(const SoftmaxOcbcPolicy& o) const {
    return shape == o.shape && outer_product == o.outer_product && l2_coef == o.l2_coef &&
           weights == o.weights;
  }
};

/// Mean negative log-likelihood plus 0.5 * l2 * ||W||^2, and its gradient.
inline std::pair<double, Eigen::MatrixXd> loss_and_grad(const SoftmaxOcbcPolicy& policy,
                                                        std::span<const Triplet> batch) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(policy.weights.rows(), policy.weights.cols());
  double nll = 0.0;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const Triplet& t : batch) {
    detail::check_triplet(policy.shape, t);
    const Eigen::VectorXd z = policy.logits(t.state, t.outcome);
    const double m = z.maxCoeff();
    const double log_sum = m + std::log((z.array() - m).exp().sum());
    nll += log_sum - z[t.action];
    Eigen::VectorXd delta = (z.array() - log_sum).exp().matrix();
    delta[t.action] -= 1.0;
    for (Eigen::Index f : policy.active_features(t.state, t.outcome)) grad.col(f) += inv_n * delta;
  }
  const double loss = nll * inv_n + 0.5 * policy.l2_coef * policy.weights.squaredNorm();
  grad += policy.l2_coef * policy.weights;
  return {loss, std::move(grad)};
}

struct SoftmaxConfig {
  int steps = 2000;
  int batch_size = 64;
  double learning_rate = 0.5;
  double l2_coef = 0.0;
  std::uint64_t seed = 0;
  bool outer_product = false;
  int log_every = 50;
};

struct TrainReport {
  int steps = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<std::pair<int, double>> loss_curve;
  std::uint64_t seed = 0;
  bool diverged = false;
};

/// Plain fixed-step gradient descent on fresh mini-batches from the stream.
/// Weights start at zero; divergence (loss above 10x the initial loss) stops
/// training and is flagged in the report.
template <TripletSource Source>
std::pair<SoftmaxOcbcPolicy, TrainReport> fit_softmax(Source& sampler, PolicyShape shape,
                                                      const SoftmaxConfig& config) {
  if (config.steps < 1) throw std::invalid_argument("fit_softmax: steps must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("fit_softmax: batch_size must be >= 1");
  SoftmaxOcbcPolicy policy(shape, config.l2_coef, config.outer_product);
  TrainReport report;
  report.seed = config.seed;
  std::vector<Triplet> batch(static_cast<std::size_t>(config.batch_size));
  for (int step = 0; step < config.steps; ++step) {
    for (auto& t : batch) t = sampler.next();
    auto [loss, grad] = loss_and_grad(policy, batch);
    if (step == 0) report.initial_loss = loss;
    report.final_loss = loss;
    report.steps = step + 1;
    if (step % std::max(1, config.log_every) == 0) report.loss_curve.emplace_back(step, loss);
    if (!std::isfinite(loss) || loss > 10.0 * report.initial_loss) {
      report.diverged = true;
      break;
    }
    policy.weights -= config.learning_rate * grad;
  }
  if (report.loss_curve.empty() || report.loss_curve.back().first != report.steps - 1)
    report.loss_curve.emplace_back(report.steps - 1, report.final_loss);
  return {std::move(policy), std::move(report)};
}

// ---------------------------------------------------------------------------
// Acting

enum class ActMode { greedy, sample };

/// Greedy picks the argmax with the lowest action id on ties.
template <OutcomePolicy Policy>
ActionId act(const Policy& policy, StateId state, int outcome, ActMode mode, Rng& rng) {
  const std::vector<double> p = policy.action_probs(state, outcome);
  if (mode == ActMode::sample) return static_cast<ActionId>(rng.categorical(p));
  return static_cast<ActionId>(std::max_element(p.begin(), p.end()) - p.begin());
}

// ---------------------------------------------------------------------------
// Policy files

using AnyPolicy = std::variant<TabularOcbcPolicy, SoftmaxOcbcPolicy>;

inline std::vector<double> action_probs(const AnyPolicy& policy, StateId s, int o) {
  return std::visit([&](const auto& p) { return p.action_probs(s, o); }, policy);
}

inline const PolicyShape& policy_shape(const AnyPolicy& policy) {
  return std::visit([](const auto& p) -> const PolicyShape& { return p.shape; }, policy);
}

/// Adapter so a variant satisfies OutcomePolicy.
struct PolicyRef {
  const AnyPolicy* policy;
  std::vector<double> action_probs(StateId s, int o) const { return stitchlab::action_probs(*policy, s, o); }
};

namespace detail {
inline nlohmann::ordered_json shape_json(const PolicyShape& s) {
  nlohmann::ordered_json j;
  j["num_states"] = s.num_states;
  j["num_outcomes"] = s.num_outcomes;
  j["num_actions"] = s.num_actions;
  return j;
}
}  // namespace detail

inline void write_policy(const AnyPolicy& any, std::ostream& out) {
  nlohmann::ordered_json header;
  header["format"] = kPolicyFormat;
  if (const auto* tab = std::get_if<TabularOcbcPolicy>(&any)) {
    header["kind"] = "tabular";
    header["shape"] = detail::shape_json(tab->shape);
    header["smoothing"] = tab->smoothing;
    out << header.dump() << '\n';
    for (StateId s = 0; s < tab->shape.num_states; ++s) {
      for (int o = 0; o < tab->shape.num_outcomes; ++o) {
        if (tab->cell_total(s, o) == 0) continue;
        nlohmann::ordered_json line;
        line["s"] = s;
        line["o"] = o;
        const auto first = tab->counts.begin() + static_cast<std::ptrdiff_t>(tab->offset(s, o));
        line["counts"] = std::vector<std::uint64_t>(first, first + tab->shape.num_actions);
        out << line.dump() << '\n';
      }
    }
    return;
  }
  const auto& soft = std::get<SoftmaxOcbcPolicy>(any);
  header["kind"] = "softmax";
  header["shape"] = detail::shape_json(soft.shape);
  header["l2_coef"] = soft.l2_coef;
  header["outer_product"] = soft.outer_product;
  out << header.dump() << '\n';
  for (Eigen::Index a = 0; a < soft.weights.rows(); ++a) {
    nlohmann::ordered_json line;
    line["a"] = a;
    std::vector<double> row(static_cast<std::size_t>(soft.weights.cols()));
    for (Eigen::Index f = 0; f < soft.weights.cols(); ++f) row[static_cast<std::size_t>(f)] = soft.weights(a, f);
    line["weights"] = row;
    out << line.dump() << '\n';
  }
}

inline void write_policy(const AnyPolicy& policy, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_policy(policy, out);
}

inline AnyPolicy read_policy(std::istream& in) {
  std::string text;
  if (!std::getline(in, text)) throw DatasetParseError(1, "format", "empty file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetParseError(1, "header", e.what());
  }
  if (detail::json_field<std::string>(header, "format", 1) != kPolicyFormat)
    throw DatasetParseError(1, "format", "unsupported format version");
  const auto shape_obj = detail::json_field<nlohmann::json>(header, "shape", 1);
  PolicyShape shape{detail::json_field<int>(shape_obj, "num_states", 1),
                    detail::json_field<int>(shape_obj, "num_outcomes", 1),
                    detail::json_field<int>(shape_obj, "num_actions", 1)};
  const auto kind = detail::json_field<std::string>(header, "kind", 1);
  std::size_t line_no = 1;
  if (kind == "tabular") {
    TabularOcbcPolicy policy(shape, detail::json_field<double>(header, "smoothing", 1));
    while (std::getline(in, text)) {
      ++line_no;
      if (text.empty()) continue;
      const auto obj = nlohmann::json::parse(text, nullptr, false);
      if (obj.is_discarded()) throw DatasetParseError(line_no, "record", "invalid json");
      const int s = detail::json_field<int>(obj, "s", line_no);
      const int o = detail::json_field<int>(obj, "o", line_no);
      const auto c = detail::json_field<std::vector<std::uint64_t>>(obj, "counts", line_no);
      if (s < 0 || s >= shape.num_states || o < 0 || o >= shape.num_outcomes ||
          c.size() != static_cast<std::size_t>(shape.num_actions))
        throw DatasetParseError(line_no, "counts", "cell outside the policy shape");
      std::copy(c.begin(), c.end(), policy.counts.begin() + static_cast<std::ptrdiff_t>(policy.offset(s, o)));
    }
    return policy;
  }
  if (kind != "softmax") throw DatasetParseError(1, "kind", "unknown policy kind");
  SoftmaxOcbcPolicy policy(shape, detail::json_field<double>(header, "l2_coef", 1),
                           detail::json_field<bool>(header, "outer_product", 1));
  Eigen::Index rows = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    const auto obj = nlohmann::json::parse(text, nullptr, false);
    if (obj.is_discarded()) throw DatasetParseError(line_no, "record", "invalid json");
    const auto a = detail::json_field<Eigen::Index>(obj, "a", line_no);
    const auto w = detail::json_field<std::vector<double>>(obj, "weights", line_no);
    if (a != rows || a >= policy.weights.rows() ||
        w.size() != static_cast<std::size_t>(policy.weights.cols()))
      throw DatasetParseError(line_no, "weights", "row outside the policy shape");
    for (Eigen::Index f = 0; f < policy.weights.cols(); ++f) policy.weights(a, f) = w[static_cast<std::size_t>(f)];
    ++rows;
  }
  if (rows != policy.weights.rows()) throw DatasetParseError(line_no, "weights", "missing rows");
  return policy;
}

inline AnyPolicy read_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_policy(in);
}

}  // namespace stitchlab
