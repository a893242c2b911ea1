#pragma once

// Supervised and unsupervised training with the multi-run learning-rate
// schedule, random restarts with validation-only model selection, and
// shuffle evaluation on held-out pairs.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hamlearn/autoencoder.hpp"
#include "hamlearn/dataset.hpp"
#include "hamlearn/error.hpp"
#include "hamlearn/nn.hpp"
#include "hamlearn/parallel.hpp"
#include "json.hpp"

namespace hamlearn {

// ---------------------------------------------------------------------------
// Losses

/// (1/(p B)) sum_b |theta_hat_b - theta_b|^2 over rows of B x p matrices.
inline double loss_supervised(const Eigen::Ref<const Matrix>& predicted, const Eigen::Ref<const Matrix>& truth) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols() || predicted.size() == 0)
    throw ShapeMismatch("loss_supervised: batch shapes differ");
  return (predicted - truth).squaredNorm() / static_cast<double>(predicted.size());
}

/// Mean squared difference between each predicted record and its clean
/// target, normalized by groups, steps and channels.
inline double loss_unsupervised(std::span<const Matrix> predicted, std::span<const Matrix> targets) {
  if (predicted.size() != targets.size() || predicted.empty()) throw ShapeMismatch("loss_unsupervised: batch sizes differ");
  double acc = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i].rows() != targets[i].rows() || predicted[i].cols() != targets[i].cols())
      throw ShapeMismatch("loss_unsupervised: record shapes differ");
    acc += (predicted[i] - targets[i]).squaredNorm();
    count += static_cast<double>(predicted[i].size());
  }
  return acc / count;
}

// ---------------------------------------------------------------------------
// In-memory view of a dataset for training and evaluation

struct ViewOptions {
  std::size_t encoder_steps = 64;  // pooled sequence length seen by the encoder
  std::size_t train_limit = 0;     // use only the first train_limit trajectories at training pairs (0 = all)
};

/// Every trajectory pooled to the encoder resolution, plus full-resolution
/// clean targets (trajectory means) for training and validation pairs.
/// Group means of pooled records equal pooled group means, so grouping can
/// be redone cheaply every epoch.
class TrainingView {
 public:
  static TrainingView build(const std::filesystem::path& dir, const ViewOptions& opt = {}) {
    TrainingView v;
    v.manifest_ = read_manifest(dir);
    v.split_ = make_splits(v.manifest_.grid, v.manifest_.n);
    v.opt_ = opt;
    const auto& m = v.manifest_;
    const std::size_t steps = m.steps();
    if (opt.encoder_steps == 0 || steps % opt.encoder_steps != 0)
      throw InvalidInput("encoder length " + std::to_string(opt.encoder_steps) + " does not divide " +
                         std::to_string(steps) + " steps");
    v.window_ = steps / opt.encoder_steps;
    v.channels_ = m.channels();
    const std::size_t n_train = opt.train_limit == 0 ? m.n : std::min(opt.train_limit, m.n);
    v.train_count_ = n_train;
    const auto val_trajs = v.split_.val_trajectories();

    v.pooled_.assign(m.grid.size(), {});
    v.targets_.assign(m.grid.size(), Matrix());
    for (std::size_t k = 0; k < m.grid.size(); ++k) {
      const bool is_train = std::find(v.split_.train.begin(), v.split_.train.end(), k) != v.split_.train.end();
      const bool is_val = std::find(v.split_.val.begin(), v.split_.val.end(), k) != v.split_.val.end();
      const std::size_t target_count = is_train ? n_train : (is_val ? val_trajs.size() : 0);
      auto& pooled = v.pooled_[k];
      pooled.assign(m.n * opt.encoder_steps * v.channels_, 0.0);
      Matrix target = Matrix::Zero(Eigen::Index(steps), Eigen::Index(v.channels_));
      for (std::size_t c = 0; c < m.configs(); ++c) {
        const std::vector<float> block = read_block(dir, m, k, c);
        for (std::size_t traj = 0; traj < m.n; ++traj) {
          const float* rec = block.data() + traj * steps * 2;
          double* out = pooled.data() + traj * opt.encoder_steps * v.channels_;
          for (std::size_t t = 0; t < opt.encoder_steps; ++t)
            for (std::size_t q = 0; q < 2; ++q) {
              double acc = 0.0;
              for (std::size_t j = 0; j < v.window_; ++j) acc += rec[2 * (t * v.window_ + j) + q];
              out[t * v.channels_ + 2 * c + q] = acc / static_cast<double>(v.window_);
            }
          if (traj < target_count)
            for (std::size_t t = 0; t < steps; ++t)
              for (std::size_t q = 0; q < 2; ++q)
                target(Eigen::Index(t), Eigen::Index(2 * c + q)) += rec[2 * t + q];
        }
      }
      if (target_count > 0) v.targets_[k] = target / static_cast<double>(target_count);
    }
    return v;
  }

  const DatasetManifest& manifest() const { return manifest_; }
  const SplitSpec& split() const { return split_; }
  std::size_t channels() const { return channels_; }
  std::size_t encoder_steps() const { return opt_.encoder_steps; }
  std::size_t pool_window() const { return window_; }
  std::size_t train_count() const { return train_count_; }
  std::size_t steps() const { return manifest_.steps(); }

  std::vector<std::size_t> train_trajectories() const { return split_.train_trajectories(train_count_); }

  /// Mean of the pooled records of `trajs` at `pair`: encoder_steps x channels.
  Matrix group_mean(std::size_t pair, std::span<const std::size_t> trajs) const {
    if (trajs.empty()) throw InvalidInput("group_mean: empty group");
    const auto& pooled = pooled_.at(pair);
    const std::size_t len = opt_.encoder_steps * channels_;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(Eigen::Index(len));
    for (std::size_t i : trajs) {
      if (i >= manifest_.n) throw InvalidInput("group_mean: trajectory index out of range");
      acc += Eigen::Map<const Eigen::VectorXd>(pooled.data() + i * len, Eigen::Index(len));
    }
    acc /= static_cast<double>(trajs.size());
    // Stored step-major; return steps x channels.
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        acc.data(), Eigen::Index(opt_.encoder_steps), Eigen::Index(channels_));
  }

  /// Clean target of a training or validation pair sub-sampled by dt_factor.
  Matrix target(std::size_t pair, std::size_t dt_factor = 1) const {
    const Matrix& full = targets_.at(pair);
    if (full.size() == 0) throw InvalidInput("no clean target stored for pair " + std::to_string(pair));
    const auto f = Eigen::Index(dt_factor);
    if (f <= 0 || full.rows() % f != 0) throw InvalidInput("dt factor does not divide the record length");
    return nn::avg_pool_time(full, dt_factor);
  }

  GridPoint label(std::size_t pair) const { return manifest_.grid.pairs.at(pair); }

 private:
  DatasetManifest manifest_;
  SplitSpec split_;
  ViewOptions opt_;
  std::size_t window_ = 1;
  std::size_t channels_ = 2;
  std::size_t train_count_ = 0;
  std::vector<std::vector<double>> pooled_;
  std::vector<Matrix> targets_;
};

// ---------------------------------------------------------------------------
// Model construction from a dataset

struct ModelOptions {
  std::size_t dt_factor = 1;
  std::size_t encoder_hidden = 32;
  std::vector<std::size_t> encoder_dense{32, 16};
  std::size_t decoder_hidden = 32;
  std::optional<bool> include_relaxation;  // default: as in the dataset
  std::optional<double> gamma_s;           // default: as in the dataset
};

/// Parameters that vary across the grid are estimated; the rest are known.
inline std::vector<Param> varying_params(const ParameterGrid& grid) {
  std::vector<Param> out;
  for (Param q : {Param::Omega, Param::Epsilon}) {
    const double first = q == Param::Omega ? grid.pairs.front().omega : grid.pairs.front().epsilon;
    for (const auto& p : grid.pairs)
      if ((q == Param::Omega ? p.omega : p.epsilon) != first) {
        out.push_back(q);
        break;
      }
  }
  if (out.empty()) throw InvalidInput("grid does not vary any parameter");
  return out;
}

inline ModelConfig make_model_config(Mode mode, const TrainingView& view, const ModelOptions& opt = {}) {
  const auto& m = view.manifest();
  const auto params = varying_params(m.grid);
  const std::size_t steps = m.steps();
  if (opt.dt_factor == 0 || steps % opt.dt_factor != 0) throw InvalidInput("dt factor must divide the record length");
  const std::size_t coarse_steps = steps / opt.dt_factor;
  if (coarse_steps % view.encoder_steps() != 0)
    throw InvalidInput("encoder length must divide the sub-sampled record length");

  ModelConfig cfg;
  cfg.mode = mode;
  cfg.encoder.input_channels = m.channels();
  cfg.encoder.pool_window = coarse_steps / view.encoder_steps();
  cfg.encoder.lstm_hidden = opt.encoder_hidden;
  cfg.encoder.dense_sizes = opt.encoder_dense;
  cfg.encoder.dense_sizes.push_back(params.size());
  cfg.encoder.params = params;
  std::vector<std::vector<double>> values(params.size());
  for (std::size_t k : view.split().train)
    for (std::size_t j = 0; j < params.size(); ++j)
      values[j].push_back(params[j] == Param::Omega ? m.grid.pairs[k].omega : m.grid.pairs[k].epsilon);
  cfg.encoder.param_ranges = EncoderConfig::padded_ranges(values);

  if (mode != Mode::Supervised) {
    DecoderConfig d;
    d.dt = m.dt_us * static_cast<double>(opt.dt_factor);
    d.steps = coarse_steps;
    d.known = m.params(0);
    d.known.gamma_s = opt.gamma_s.value_or(m.gamma_s);
    d.estimated = params;
    d.correction_enabled = mode == Mode::UnsupervisedCorrected;
    d.lstm_hidden = opt.decoder_hidden;
    d.meas.clear();
    for (std::size_t c = 0; c < m.configs(); ++c) d.meas.push_back(m.measurement(c));
    d.include_relaxation = opt.include_relaxation.value_or(m.include_relaxation);
    cfg.decoder = d;
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Training

struct TrainPlan {
  Mode mode = Mode::Supervised;
  double lr0 = 3e-3;
  double decay = 0.99;
  std::size_t epochs_per_run = 100;
  std::size_t max_runs = 10;
  double run_stop_threshold = 0.05;
  std::size_t final_run_tail = 20;
  std::size_t restarts = 5;
  std::uint64_t seed = 0;
  std::size_t d = 1;
  std::size_t dt_factor = 1;
  unsigned threads = 1;

  void validate() const {
    if (!(lr0 > 0.0) || !(decay > 0.0) || epochs_per_run == 0 || max_runs == 0 || restarts == 0 || d == 0 ||
        dt_factor == 0 || !(run_stop_threshold > 0.0) || final_run_tail == 0 || final_run_tail >= epochs_per_run)
      throw InvalidInput("training plan hyperparameters must be positive");
  }

  double learning_rate(std::size_t epoch_in_run) const {
    return lr0 * std::pow(decay, static_cast<double>(epoch_in_run));
  }
};

struct EpochRecord {
  std::size_t run = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct RestartResult {
  std::uint64_t seed = 0;
  bool diverged = false;
  std::string message;
  double final_val_loss = std::numeric_limits<double>::infinity();
  std::size_t runs = 0;
  std::vector<EpochRecord> history;
  std::vector<double> weights;
  double decoder_delta_norm = 0.0;
};

struct TrainResult {
  std::vector<RestartResult> restarts;
  std::optional<std::size_t> best;  // restart with the smallest final validation loss

  bool all_diverged() const { return !best.has_value(); }

  nlohmann::json history_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : restarts) {
      nlohmann::json epochs = nlohmann::json::array();
      for (const auto& e : r.history)
        epochs.push_back({{"run", e.run}, {"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss}});
      rs.push_back({{"seed", r.seed},
                    {"diverged", r.diverged},
                    {"message", r.message},
                    {"final_val_loss", r.diverged ? nlohmann::json(nullptr) : nlohmann::json(r.final_val_loss)},
                    {"runs", r.runs},
                    {"decoder_delta_norm", r.decoder_delta_norm},
                    {"epochs", epochs}});
    }
    return {{"restarts", rs}, {"best_restart", best ? nlohmann::json(*best) : nlohmann::json(nullptr)}};
  }
};

/// Consecutive groups of d taken from `trajs`; a remainder smaller than d is dropped.
inline std::vector<std::vector<std::size_t>> fixed_groups(const std::vector<std::size_t>& trajs, std::size_t d) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t g = 0; (g + 1) * d <= trajs.size(); ++g)
    out.emplace_back(trajs.begin() + static_cast<std::ptrdiff_t>(g * d),
                     trajs.begin() + static_cast<std::ptrdiff_t>((g + 1) * d));
  return out;
}

/// Group size actually used on a dataset: noise-free sets hold one record per pair.
inline std::size_t effective_group_size(const TrainingView& view, std::size_t d) {
  return view.manifest().noise_free ? 1 : d;
}

namespace detail {

inline Vector label_vector(const ModelConfig& cfg, const GridPoint& p) {
  Vector v(Eigen::Index(cfg.encoder.params.size()));
  for (std::size_t j = 0; j < cfg.encoder.params.size(); ++j)
    v(Eigen::Index(j)) = cfg.encoder.params[j] == Param::Omega ? p.omega : p.epsilon;
  return v;
}

/// Loss of one group and (optionally) its gradient accumulated into g.
inline double sample_loss(const Model& model, const Matrix& input, const Vector& label, const Matrix* target,
                          double* g) {
  const double* w = model.weights().data();
  const auto& cfg = model.config();
  Encoder::Tape etape;
  const Vector theta = model.encoder().forward_pooled(w, input, g ? &etape : nullptr);
  if (cfg.mode == Mode::Supervised) {
    const Vector diff = theta - label;
    const double loss = diff.squaredNorm() / static_cast<double>(diff.size());
    if (g) model.encoder().backward(w, g, etape, (2.0 / static_cast<double>(diff.size())) * diff);
    return loss;
  }
  FlexDecoder::Tape dtape;
  const Matrix pred = model.decoder()->decode(w, theta, g ? &dtape : nullptr);
  const Matrix diff = pred - *target;
  const double norm = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / norm;
  if (g) {
    const Vector dtheta = model.decoder()->backward(w, g, dtape, (2.0 / norm) * diff);
    model.encoder().backward(w, g, etape, dtheta);
  }
  return loss;
}

}  // namespace detail

/// Loss on the validation split with fixed consecutive grouping.
inline double validation_loss(const Model& model, const TrainingView& view, std::size_t d, std::size_t dt_factor,
                              unsigned threads) {
  const auto& cfg = model.config();
  const std::size_t group = effective_group_size(view, d);
  struct Item {
    std::size_t pair;
    std::vector<std::size_t> trajs;
  };
  std::vector<Item> items;
  for (std::size_t k : view.split().val)
    for (auto& g : fixed_groups(view.split().val_trajectories(), group)) items.push_back({k, std::move(g)});
  if (items.empty()) throw InvalidInput("validation split smaller than one group");
  std::vector<Matrix> targets(view.manifest().grid.size());
  if (cfg.mode != Mode::Supervised)
    for (std::size_t k : view.split().val) targets[k] = view.target(k, dt_factor);
  std::vector<double> losses(items.size());
  parallel_for(items.size(), threads, [&](std::size_t i) {
    const auto& it = items[i];
    const Matrix input = view.group_mean(it.pair, it.trajs);
    losses[i] = detail::sample_loss(model, input, detail::label_vector(cfg, view.label(it.pair)),
                                    cfg.mode == Mode::Supervised ? nullptr : &targets[it.pair], nullptr);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

/// Trains `plan.restarts` independent models and selects the one with the
/// smallest final validation loss.  A restart whose loss turns non-finite (or
/// whose decoder diverges) is recorded and skipped.
inline TrainResult train(const TrainPlan& plan, const TrainingView& view, const ModelConfig& model_cfg) {
  plan.validate();
  if (model_cfg.mode != plan.mode) throw InvalidInput("model config mode differs from the training plan");
  const std::size_t d = effective_group_size(view, plan.d);
  const auto train_trajs = view.train_trajectories();
  if (train_trajs.size() % d != 0)
    throw InvalidInput("group size " + std::to_string(d) + " does not divide " + std::to_string(train_trajs.size()) +
                       " training trajectories");
  std::vector<Matrix> targets(view.manifest().grid.size());
  if (plan.mode != Mode::Supervised)
    for (std::size_t k : view.split().train) targets[k] = view.target(k, plan.dt_factor);

  TrainResult result;
  for (std::size_t restart = 0; restart < plan.restarts; ++restart) {
    RestartResult rr;
    rr.seed = derive_seed(plan.seed, restart, 0);
    Model model(model_cfg);
    model.init(rr.seed);
    const std::vector<double> init_weights = model.weights();
    std::mt19937_64 rng(derive_seed(plan.seed, restart, 1));
    nn::OptimizerState opt(model.weights().size());
    std::vector<double> val_curve;
    try {
      for (std::size_t run = 0; run < plan.max_runs; ++run) {
        for (std::size_t epoch = 0; epoch < plan.epochs_per_run; ++epoch) {
          const double lr = plan.learning_rate(epoch);
          std::vector<std::size_t> order = view.split().train;
          std::shuffle(order.begin(), order.end(), rng);
          double epoch_loss = 0.0;
          for (std::size_t k : order) {
            const auto groups = epoch_partition(train_trajs, d, rng);
            const Vector label = detail::label_vector(model_cfg, view.label(k));
            std::vector<std::vector<double>> grads(groups.size());
            std::vector<double> losses(groups.size());
            parallel_for(groups.size(), plan.threads, [&](std::size_t i) {
              grads[i].assign(model.weights().size(), 0.0);
              const Matrix input = view.group_mean(k, groups[i]);
              losses[i] = detail::sample_loss(model, input, label,
                                              plan.mode == Mode::Supervised ? nullptr : &targets[k], grads[i].data());
            });
            std::vector<double> total(model.weights().size(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t i = 0; i < groups.size(); ++i) {
              batch_loss += losses[i];
              for (std::size_t q = 0; q < total.size(); ++q) total[q] += grads[i][q];
            }
            const double inv = 1.0 / static_cast<double>(groups.size());
            for (double& v : total) v *= inv;
            batch_loss *= inv;
            if (!std::isfinite(batch_loss)) throw NonFinite("training loss is not finite");
            for (double v : total)
              if (!std::isfinite(v)) throw NonFinite("gradient is not finite");
            nn::optimizer_step(model.weights(), total, opt, lr);
            epoch_loss += batch_loss;
          }
          epoch_loss /= static_cast<double>(order.size());
          const double val = validation_loss(model, view, plan.d, plan.dt_factor, plan.threads);
          if (!std::isfinite(val)) throw NonFinite("validation loss is not finite");
          rr.history.push_back({run, epoch, lr, epoch_loss, val});
          val_curve.push_back(val);
        }
        rr.runs = run + 1;
        if (run == 0) continue;
        const std::size_t E = plan.epochs_per_run;
        const double end_now = val_curve.back();
        const double end_prev = val_curve[val_curve.size() - 1 - E];
        const double tail_start = val_curve[val_curve.size() - 1 - plan.final_run_tail];
        const double run_gain = (end_prev - end_now) / end_prev;
        const double tail_gain = (tail_start - end_now) / tail_start;
        if (run_gain < plan.run_stop_threshold && tail_gain < plan.run_stop_threshold) break;
      }
      rr.final_val_loss = val_curve.back();
    } catch (const NonFinite& e) {
      rr.diverged = true;
      rr.message = e.what();
    } catch (const DecodeDiverged& e) {
      rr.diverged = true;
      rr.message = e.what();
    }
    if (model.decoder()) {
      std::vector<double> delta(model.weights().size());
      for (std::size_t q = 0; q < delta.size(); ++q) delta[q] = model.weights()[q] - init_weights[q];
      rr.decoder_delta_norm = model.decoder_weight_norm(delta);
    }
    rr.weights = model.weights();
    result.restarts.push_back(std::move(rr));
  }
  for (std::size_t i = 0; i < result.restarts.size(); ++i) {
    const auto& r = result.restarts[i];
    if (r.diverged) continue;
    if (!result.best || r.final_val_loss < result.restarts[*result.best].final_val_loss) result.best = i;
  }
  return result;
}

/// The model of restart i of a training result.
inline Model restart_model(const ModelConfig& cfg, const RestartResult& r) {
  Model m(cfg);
  m.init(r.seed);
  m.weights() = r.weights;
  return m;
}

// ---------------------------------------------------------------------------
// Shuffle evaluation

enum class SplitKind { Validation, Test };

inline SplitKind parse_split(const std::string& s) {
  if (s == "val" || s == "validation") return SplitKind::Validation;
  if (s == "test") return SplitKind::Test;
  throw InvalidInput("unknown split '" + s + "'");
}

struct PairError {
  std::size_t pair = 0;
  GridPoint truth;
  double mean_estimate_omega = std::numeric_limits<double>::quiet_NaN();
  double mean_estimate_epsilon = std::numeric_limits<double>::quiet_NaN();
  double sq_error_omega = std::numeric_limits<double>::quiet_NaN();
  double sq_error_epsilon = std::numeric_limits<double>::quiet_NaN();
};

struct EvalReport {
  std::size_t repeats = 0;
  std::size_t d = 0;
  std::size_t groups_per_pair = 0;
  std::vector<PairError> pairs;
  double mse_omega = std::numeric_limits<double>::quiet_NaN();
  double mse_epsilon = std::numeric_limits<double>::quiet_NaN();

  double mse(Param p) const { return p == Param::Omega ? mse_omega : mse_epsilon; }

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json ps = nlohmann::json::array();
    for (const auto& p : pairs)
      ps.push_back({{"pair", p.pair},
                    {"omega", p.truth.omega},
                    {"epsilon", p.truth.epsilon},
                    {"mean_estimate_omega", num(p.mean_estimate_omega)},
                    {"mean_estimate_epsilon", num(p.mean_estimate_epsilon)},
                    {"sq_error_omega", num(p.sq_error_omega)},
                    {"sq_error_epsilon", num(p.sq_error_epsilon)}});
    return {{"repeats", repeats},         {"d", d},
            {"groups_per_pair", groups_per_pair}, {"mse_omega", num(mse_omega)},
            {"mse_epsilon", num(mse_epsilon)},    {"pairs", ps}};
  }
};

/// Averages parameter errors over `repeats` random regroupings of the chosen
/// held-out trajectories into groups of d.
/// `estimate(pooled group mean)` returns one value per entry of `params`.
template <class Estimator>
EvalReport shuffle_evaluate_with(Estimator&& estimate, const std::vector<Param>& params, const TrainingView& view,
                                 SplitKind split, std::size_t d, std::size_t repeats = 100, std::uint64_t seed = 0,
                                 unsigned threads = 1) {
  if (repeats == 0) throw InvalidInput("repeats must be positive");
  const std::size_t group = effective_group_size(view, d);
  const auto trajs = split == SplitKind::Test ? view.split().test_trajectories() : view.split().val_trajectories();
  if (group == 0 || group > trajs.size())
    throw InvalidInput("group size " + std::to_string(d) + " exceeds the " + std::to_string(trajs.size()) +
                       " held-out trajectories per pair");
  const auto& pairs = split == SplitKind::Test ? view.split().test : view.split().val;
  const std::size_t groups_per_pair = trajs.size() / group;

  // per repeat, per pair: sums of estimates and squared errors per parameter
  std::vector<std::vector<std::array<double, 4>>> acc(repeats, std::vector<std::array<double, 4>>(pairs.size()));
  parallel_for(repeats, threads, [&](std::size_t r) {
    std::mt19937_64 rng(derive_seed(seed, r));
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
      std::vector<std::size_t> order = trajs;
      std::shuffle(order.begin(), order.end(), rng);
      const GridPoint truth = view.label(pairs[pi]);
      std::array<double, 4> a{};
      for (const auto& g : fixed_groups(order, group)) {
        const Vector theta = estimate(view.group_mean(pairs[pi], g));
        for (std::size_t j = 0; j < params.size(); ++j) {
          const double t = params[j] == Param::Omega ? truth.omega : truth.epsilon;
          const std::size_t slot = params[j] == Param::Omega ? 0 : 1;
          a[slot] += theta(Eigen::Index(j));
          a[2 + slot] += (theta(Eigen::Index(j)) - t) * (theta(Eigen::Index(j)) - t);
        }
      }
      acc[r][pi] = a;
    }
  });

  EvalReport rep;
  rep.repeats = repeats;
  rep.d = group;
  rep.groups_per_pair = groups_per_pair;
  const double per_pair = static_cast<double>(repeats * groups_per_pair);
  std::array<double, 2> mse{0.0, 0.0};
  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    std::array<double, 4> s{};
    for (std::size_t r = 0; r < repeats; ++r)
      for (std::size_t q = 0; q < 4; ++q) s[q] += acc[r][pi][q];
    PairError pe;
    pe.pair = pairs[pi];
    pe.truth = view.label(pairs[pi]);
    for (Param p : params) {
      const std::size_t slot = p == Param::Omega ? 0 : 1;
      const double est = s[slot] / per_pair;
      const double err = s[2 + slot] / per_pair;
      (p == Param::Omega ? pe.mean_estimate_omega : pe.mean_estimate_epsilon) = est;
      (p == Param::Omega ? pe.sq_error_omega : pe.sq_error_epsilon) = err;
      mse[slot] += err;
    }
    rep.pairs.push_back(pe);
  }
  for (Param p : params) {
    const std::size_t slot = p == Param::Omega ? 0 : 1;
    (p == Param::Omega ? rep.mse_omega : rep.mse_epsilon) = mse[slot] / static_cast<double>(pairs.size());
  }
  return rep;
}

inline EvalReport shuffle_evaluate(const Model& model, const TrainingView& view, SplitKind split, std::size_t d,
                                   std::size_t repeats = 100, std::uint64_t seed = 0, unsigned threads = 1) {
  return shuffle_evaluate_with([&](const Matrix& pooled) { return model.encode_pooled(pooled); },
                               model.config().encoder.params, view, split, d, repeats, seed, threads);
}

}  // namespace hamlearn
