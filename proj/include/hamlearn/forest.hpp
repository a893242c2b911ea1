#pragma once

// Random-forest regression baseline on flattened grouped records: bagged
// CART trees grown on variance reduction with sqrt(F) candidate features per
// split.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hamlearn/dataset.hpp"
#include "hamlearn/error.hpp"
#include "hamlearn/parallel.hpp"
#include "json.hpp"

namespace hamlearn {

enum class Flattening { RowMajor, ColumnMajor };

inline std::string flattening_name(Flattening f) { return f == Flattening::RowMajor ? "row_major" : "column_major"; }

inline Flattening parse_flattening(const std::string& s) {
  if (s == "row_major" || s == "row") return Flattening::RowMajor;
  if (s == "column_major" || s == "column" || s == "col") return Flattening::ColumnMajor;
  throw InvalidInput("unknown flattening '" + s + "'");
}

/// Row-major: each channel's whole sequence in turn.  Column-major: all
/// channels of one time step together.  `record` is steps x channels.
inline std::vector<double> flatten(const Eigen::Ref<const Eigen::MatrixXd>& record, Flattening order) {
  const auto steps = record.rows(), channels = record.cols();
  std::vector<double> out(static_cast<std::size_t>(steps * channels));
  for (Eigen::Index t = 0; t < steps; ++t)
    for (Eigen::Index c = 0; c < channels; ++c) {
      const auto idx = order == Flattening::RowMajor ? c * steps + t : t * channels + c;
      out[static_cast<std::size_t>(idx)] = record(t, c);
    }
  return out;
}

inline Eigen::MatrixXd unflatten(std::span<const double> features, std::size_t channels, Flattening order) {
  if (channels == 0 || features.size() % channels != 0) throw ShapeMismatch("unflatten: length not divisible by channels");
  const auto steps = Eigen::Index(features.size() / channels);
  Eigen::MatrixXd out(steps, Eigen::Index(channels));
  for (Eigen::Index t = 0; t < steps; ++t)
    for (Eigen::Index c = 0; c < Eigen::Index(channels); ++c)
      out(t, c) = features[static_cast<std::size_t>(order == Flattening::RowMajor ? c * steps + t : t * Eigen::Index(channels) + c)];
  return out;
}

inline std::vector<double> flatten(const GroupedSample& s, Flattening order) {
  const auto steps = Eigen::Index(s.steps()), channels = Eigen::Index(s.channels);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(s.mean_voltages.data(),
                                                                                                   steps, channels);
  return flatten(Eigen::MatrixXd(m), order);
}

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 25;
  std::size_t min_samples_leaf = 2;
  Flattening flattening = Flattening::ColumnMajor;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_trees < 1) throw InvalidInput("forest needs at least one tree");
    if (max_depth < 1) throw InvalidInput("max_depth must be at least 1");
    if (min_samples_leaf < 1) throw InvalidInput("min_samples_leaf must be at least 1");
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }

  std::size_t depth() const {
    std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
    std::size_t best = 0;
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      const auto& n = nodes[static_cast<std::size_t>(i)];
      if (n.feature >= 0) {
        stack.push_back({n.left, d + 1});
        stack.push_back({n.right, d + 1});
      }
    }
    return best;
  }
};

/// Row-major sample matrix: n rows of `features` values.
struct FeatureTable {
  std::size_t features = 0;
  std::vector<double> values;
  std::vector<double> labels;

  std::size_t rows() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * features, features);
  }

  void add(std::span<const double> x, double y) {
    if (features == 0 && labels.empty()) features = x.size();
    if (x.size() != features) throw ShapeMismatch("feature table: inconsistent feature length");
    values.insert(values.end(), x.begin(), x.end());
    labels.push_back(y);
  }
};

namespace detail {

inline Tree grow_tree(const FeatureTable& data, const ForestConfig& cfg, std::mt19937_64& rng) {
  const std::size_t n = data.rows();
  const std::size_t F = data.features;
  const std::size_t mtry = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(F)))));
  std::uniform_int_distribution<std::size_t> pick_row(0, n - 1);
  std::vector<std::size_t> sample(n);
  for (auto& s : sample) s = pick_row(rng);

  Tree tree;
  struct Pending {
    int node;
    std::size_t begin;
    std::size_t end;
    std::size_t depth;
  };
  tree.nodes.push_back({});
  std::vector<Pending> stack{{0, 0, n, 0}};
  std::vector<std::size_t> features(F);
  std::iota(features.begin(), features.end(), std::size_t{0});
  std::vector<std::pair<double, double>> column;  // (feature value, label)

  while (!stack.empty()) {
    const Pending job = stack.back();
    stack.pop_back();
    const std::size_t count = job.end - job.begin;
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = job.begin; i < job.end; ++i) {
      const double y = data.labels[sample[i]];
      sum += y;
      sq += y * y;
    }
    const double mean = sum / static_cast<double>(count);
    const double sse = sq - sum * mean;
    auto& node = tree.nodes[static_cast<std::size_t>(job.node)];
    node.value = mean;
    if (job.depth >= cfg.max_depth || count < 2 * cfg.min_samples_leaf || sse <= 1e-14 * std::max(1.0, sq)) continue;

    // Partial Fisher-Yates draw of mtry candidate features.
    for (std::size_t k = 0; k < mtry; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, F - 1);
      std::swap(features[k], features[pick(rng)]);
    }
    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    for (std::size_t k = 0; k < mtry; ++k) {
      const std::size_t f = features[k];
      column.clear();
      for (std::size_t i = job.begin; i < job.end; ++i)
        column.emplace_back(data.values[sample[i] * F + f], data.labels[sample[i]]);
      std::sort(column.begin(), column.end());
      double left_sum = 0.0;
      for (std::size_t i = 0; i + 1 < count; ++i) {
        left_sum += column[i].second;
        const std::size_t nl = i + 1, nr = count - nl;
        if (nl < cfg.min_samples_leaf || nr < cfg.min_samples_leaf) continue;
        if (column[i].first == column[i + 1].first) continue;
        const double right_sum = sum - left_sum;
        // SSE reduction = nl*ml^2 + nr*mr^2 - n*m^2
        const double gain = left_sum * left_sum / static_cast<double>(nl) +
                            right_sum * right_sum / static_cast<double>(nr) - sum * mean;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (column[i].first + column[i + 1].first);
        }
      }
    }
    if (best_feature < 0 || best_gain <= 1e-12 * std::max(1.0, sse)) continue;

    const auto mid = std::partition(sample.begin() + static_cast<std::ptrdiff_t>(job.begin),
                                    sample.begin() + static_cast<std::ptrdiff_t>(job.end), [&](std::size_t r) {
                                      return data.values[r * F + static_cast<std::size_t>(best_feature)] <= best_threshold;
                                    });
    const std::size_t split = static_cast<std::size_t>(mid - sample.begin());
    const int left = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    auto& parent = tree.nodes[static_cast<std::size_t>(job.node)];
    parent.feature = best_feature;
    parent.threshold = best_threshold;
    parent.left = left;
    parent.right = left + 1;
    stack.push_back({left + 1, split, job.end, job.depth + 1});
    stack.push_back({left, job.begin, split, job.depth + 1});
  }
  return tree;
}

}  // namespace detail

class Forest {
 public:
  Forest() = default;
  Forest(ForestConfig cfg, std::size_t features, std::vector<Tree> trees)
      : cfg_(cfg), features_(features), trees_(std::move(trees)) {}

  /// Trees are grown independently from seeds derived from cfg.seed, so the
  /// forest does not depend on the thread count.
  static Forest fit(const FeatureTable& data, const ForestConfig& cfg, unsigned threads = 1) {
    cfg.validate();
    if (data.rows() < 2) throw InvalidInput("forest fit needs at least two samples");
    std::vector<Tree> trees(cfg.n_trees);
    parallel_for(cfg.n_trees, threads, [&](std::size_t t) {
      std::mt19937_64 rng(derive_seed(cfg.seed, t));
      trees[t] = detail::grow_tree(data, cfg, rng);
    });
    return Forest(cfg, data.features, std::move(trees));
  }

  double predict(std::span<const double> x) const {
    if (x.size() != features_) throw ShapeMismatch("forest predict: feature length mismatch");
    double acc = 0.0;
    for (const auto& t : trees_) acc += t.predict(x);
    return acc / static_cast<double>(trees_.size());
  }

  const std::vector<Tree>& trees() const { return trees_; }
  const ForestConfig& config() const { return cfg_; }
  std::size_t features() const { return features_; }

  nlohmann::json to_json() const {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : trees_) {
      nlohmann::json f = nlohmann::json::array(), th = nlohmann::json::array(), l = nlohmann::json::array(),
                     r = nlohmann::json::array(), v = nlohmann::json::array();
      for (const auto& n : t.nodes) {
        f.push_back(n.feature);
        th.push_back(n.threshold);
        l.push_back(n.left);
        r.push_back(n.right);
        v.push_back(n.value);
      }
      trees.push_back({{"feature", f}, {"threshold", th}, {"left", l}, {"right", r}, {"value", v}});
    }
    return {{"format", "hamlearn-forest"},
            {"n_trees", cfg_.n_trees},
            {"max_depth", cfg_.max_depth},
            {"min_samples_leaf", cfg_.min_samples_leaf},
            {"flattening", flattening_name(cfg_.flattening)},
            {"seed", cfg_.seed},
            {"features", features_},
            {"trees", trees}};
  }

  static Forest from_json(const nlohmann::json& j) {
    try {
      ForestConfig cfg;
      cfg.n_trees = j.at("n_trees").get<std::size_t>();
      cfg.max_depth = j.at("max_depth").get<std::size_t>();
      cfg.min_samples_leaf = j.at("min_samples_leaf").get<std::size_t>();
      cfg.flattening = parse_flattening(j.at("flattening").get<std::string>());
      cfg.seed = j.at("seed").get<std::uint64_t>();
      std::vector<Tree> trees;
      for (const auto& t : j.at("trees")) {
        Tree tree;
        const auto& f = t.at("feature");
        for (std::size_t i = 0; i < f.size(); ++i)
          tree.nodes.push_back({f[i].get<int>(), t.at("threshold")[i].get<double>(), t.at("left")[i].get<int>(),
                                t.at("right")[i].get<int>(), t.at("value")[i].get<double>()});
        trees.push_back(std::move(tree));
      }
      return Forest(cfg, j.at("features").get<std::size_t>(), std::move(trees));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("malformed forest checkpoint: ") + e.what());
    }
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json().dump() << '\n';
  }

  static Forest load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("unreadable forest checkpoint: ") + e.what());
    }
    return from_json(j);
  }

 private:
  ForestConfig cfg_;
  std::size_t features_ = 0;
  std::vector<Tree> trees_;
};

}  // namespace hamlearn
