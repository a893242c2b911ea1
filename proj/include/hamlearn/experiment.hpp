#pragma once

// Experiment runner: trains and evaluates models over a grid of group sizes
// and sub-sampling factors and emits result tables; the report driver checks
// table cells against expectation bands.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hamlearn/autoencoder.hpp"
#include "hamlearn/dataset.hpp"
#include "hamlearn/error.hpp"
#include "hamlearn/forest.hpp"
#include "hamlearn/parallel.hpp"
#include "hamlearn/training.hpp"
#include "json.hpp"

namespace hamlearn {

inline constexpr double kInfiniteGroup = std::numeric_limits<double>::infinity();

struct ExperimentSpec {
  std::string name = "results";
  std::string mode = "sup";  // sup | unsup | unsup-corr | rf | table4
  std::filesystem::path dataset_path;
  std::optional<std::filesystem::path> noise_free_dataset_path;  // used for the d = inf row
  std::vector<double> d{250.0};                                   // kInfiniteGroup selects the noise-free set
  std::vector<std::size_t> dt_factor{1};
  std::size_t restarts = 5;
  std::uint64_t seed = 0;
  std::filesystem::path output_path;

  std::size_t repeats = 100;
  std::size_t train_limit = 0;
  std::size_t encoder_steps = 64;
  std::optional<std::size_t> epochs_per_run;
  std::optional<std::size_t> max_runs;
  Flattening flattening = Flattening::ColumnMajor;
  std::size_t rf_regroupings = 20;
  std::size_t rf_trees = 100;
  std::size_t rf_depth = 25;

  static ExperimentSpec from_json(const nlohmann::json& j) {
    ExperimentSpec s;
    try {
      s.name = j.value("name", s.name);
      s.mode = j.at("mode").get<std::string>();
      s.dataset_path = j.at("dataset_path").get<std::string>();
      if (j.contains("noise_free_dataset_path"))
        s.noise_free_dataset_path = j.at("noise_free_dataset_path").get<std::string>();
      s.d.clear();
      auto add_d = [&](const nlohmann::json& v) {
        if (v.is_string()) {
          if (v.get<std::string>() != "inf") throw InvalidInput("group size must be a positive integer or \"inf\"");
          s.d.push_back(kInfiniteGroup);
        } else {
          const auto n = v.get<std::int64_t>();
          if (n <= 0) throw InvalidInput("group size must be positive");
          s.d.push_back(static_cast<double>(n));
        }
      };
      const auto& d = j.at("d");
      if (d.is_array()) {
        for (const auto& v : d) add_d(v);
      } else {
        add_d(d);
      }
      const auto& f = j.value("dt_factor", nlohmann::json(1));
      s.dt_factor = f.is_array() ? f.get<std::vector<std::size_t>>() : std::vector<std::size_t>{f.get<std::size_t>()};
      s.restarts = j.value("restarts", s.restarts);
      s.seed = j.value("seed", s.seed);
      if (j.contains("output_path")) s.output_path = j.at("output_path").get<std::string>();
      s.repeats = j.value("repeats", s.repeats);
      s.train_limit = j.value("train_limit", s.train_limit);
      s.encoder_steps = j.value("encoder_steps", s.encoder_steps);
      if (j.contains("epochs_per_run")) s.epochs_per_run = j.at("epochs_per_run").get<std::size_t>();
      if (j.contains("max_runs")) s.max_runs = j.at("max_runs").get<std::size_t>();
      if (j.contains("flattening")) s.flattening = parse_flattening(j.at("flattening").get<std::string>());
      s.rf_regroupings = j.value("rf_regroupings", s.rf_regroupings);
      s.rf_trees = j.value("rf_trees", s.rf_trees);
      s.rf_depth = j.value("rf_depth", s.rf_depth);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(std::string("invalid experiment spec: ") + e.what());
    }
    static const std::vector<std::string> modes{"sup", "unsup", "unsup-corr", "rf", "table4"};
    if (std::find(modes.begin(), modes.end(), s.mode) == modes.end())
      throw InvalidInput("unknown experiment mode '" + s.mode + "'");
    if (s.d.empty() || s.dt_factor.empty()) throw InvalidInput("experiment needs at least one d and dt_factor");
    if (s.restarts == 0 || s.repeats == 0) throw InvalidInput("restarts and repeats must be positive");
    return s;
  }
};

struct ResultTable {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  nlohmann::json details = nlohmann::json::array();

  static std::string format(double v, bool integer = false) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    if (integer)
      std::snprintf(buf, sizeof buf, "%.0f", v);
    else
      std::snprintf(buf, sizeof buf, "%.6e", v);
    return buf;
  }

  std::string csv() const {
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
    out += '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) out += ',';
        if (i == 0) {
          out += format(r[i], true);
        } else if (i == 1) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%.10g", r[i]);
          out += buf;
        } else {
          out += format(r[i]);
        }
      }
      out += '\n';
    }
    return out;
  }

  void write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << csv();
  }

  std::optional<std::size_t> column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }
};

inline const std::vector<std::string>& results_header() {
  static const std::vector<std::string> h{"d",           "dt_us",           "best_mse_omega", "best_mse_eps",
                                          "median_mse_omega", "median_mse_eps", "mean_mse_omega", "mean_mse_eps"};
  return h;
}

struct RestartScore {
  double val = std::numeric_limits<double>::infinity();
  double mse_omega = std::numeric_limits<double>::quiet_NaN();
  double mse_epsilon = std::numeric_limits<double>::quiet_NaN();
};

/// best (by validation), median and mean over restarts for both parameters.
inline std::vector<double> summarize(const std::vector<RestartScore>& scores) {
  if (scores.empty()) throw Error("no restart produced a usable model");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i].val < scores[best].val) best = i;
  auto median = [](std::vector<double> v) {
    if (std::any_of(v.begin(), v.end(), [](double x) { return std::isnan(x); }))
      return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  auto mean = [](const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  };
  std::vector<double> om, ep;
  for (const auto& s : scores) {
    om.push_back(s.mse_omega);
    ep.push_back(s.mse_epsilon);
  }
  return {scores[best].mse_omega, scores[best].mse_epsilon, median(om), median(ep), mean(om), mean(ep)};
}

class ExperimentRunner {
 public:
  explicit ExperimentRunner(unsigned threads = 1, std::ostream* log = nullptr) : threads_(threads), log_(log) {}

  const TrainingView& view(const std::filesystem::path& dir, std::size_t encoder_steps, std::size_t train_limit) {
    const std::string key = dir.string() + "|" + std::to_string(encoder_steps) + "|" + std::to_string(train_limit);
    auto it = views_.find(key);
    if (it == views_.end()) {
      if (!std::filesystem::exists(dir / "manifest.json")) throw IoError("dataset not found: " + dir.string());
      say("loading " + dir.string());
      it = views_.emplace(key, TrainingView::build(dir, {encoder_steps, train_limit})).first;
    }
    return it->second;
  }

  /// Trains plan.restarts models and scores each restart on the test split.
  std::vector<RestartScore> score_autoencoder(const ExperimentSpec& spec, Mode mode, const TrainingView& v,
                                              std::size_t d, std::size_t factor, ModelOptions opt,
                                              nlohmann::json* detail = nullptr) {
    opt.dt_factor = factor;
    const ModelConfig cfg = make_model_config(mode, v, opt);
    TrainPlan plan;
    plan.mode = mode;
    plan.restarts = spec.restarts;
    plan.seed = derive_seed(spec.seed, d, factor, static_cast<std::uint64_t>(mode));
    plan.d = d;
    plan.dt_factor = factor;
    plan.threads = threads_;
    if (spec.epochs_per_run) plan.epochs_per_run = *spec.epochs_per_run;
    if (spec.max_runs) plan.max_runs = *spec.max_runs;
    if (plan.final_run_tail >= plan.epochs_per_run) plan.final_run_tail = std::max<std::size_t>(1, plan.epochs_per_run / 5);
    say("training " + mode_name(mode) + " d=" + std::to_string(d) + " dt_factor=" + std::to_string(factor));
    const TrainResult result = train(plan, v, cfg);
    std::vector<RestartScore> scores;
    nlohmann::json restarts = nlohmann::json::array();
    for (const auto& r : result.restarts) {
      nlohmann::json rj{{"diverged", r.diverged}, {"runs", r.runs}, {"decoder_delta_norm", r.decoder_delta_norm}};
      if (!r.diverged) {
        const Model m = restart_model(cfg, r);
        const EvalReport rep =
            shuffle_evaluate(m, v, SplitKind::Test, d, spec.repeats, derive_seed(spec.seed, 0x7e57), threads_);
        scores.push_back({r.final_val_loss, rep.mse_omega, rep.mse_epsilon});
        rj["val_loss"] = r.final_val_loss;
        rj["test"] = rep.to_json();
      } else {
        rj["message"] = r.message;
      }
      restarts.push_back(rj);
    }
    if (detail) *detail = {{"restarts", restarts}, {"best_restart", result.best ? nlohmann::json(*result.best) : nlohmann::json(nullptr)}};
    if (scores.empty()) throw Error("all restarts diverged");
    return scores;
  }

  std::vector<RestartScore> score_forest(const ExperimentSpec& spec, const TrainingView& v, std::size_t d,
                                         nlohmann::json* detail = nullptr) {
    const std::size_t group = effective_group_size(v, d);
    const auto trajs = v.train_trajectories();
    if (trajs.size() % group != 0) throw InvalidInput("group size does not divide the training trajectories");
    std::vector<RestartScore> scores;
    nlohmann::json restarts = nlohmann::json::array();
    for (std::size_t r = 0; r < spec.restarts; ++r) {
      ForestConfig fc;
      fc.n_trees = spec.rf_trees;
      fc.max_depth = spec.rf_depth;
      fc.flattening = spec.flattening;
      fc.seed = derive_seed(spec.seed, d, r, 0);
      FeatureTable table;
      std::mt19937_64 rng(derive_seed(spec.seed, d, r, 1));
      const std::size_t regroupings = v.manifest().noise_free ? 1 : spec.rf_regroupings;
      for (std::size_t g = 0; g < regroupings; ++g)
        for (std::size_t k : v.split().train)
          for (const auto& grp : epoch_partition(trajs, group, rng))
            table.add(flatten(v.group_mean(k, grp), fc.flattening), v.label(k).epsilon);
      say("fitting forest (" + flattening_name(fc.flattening) + ") d=" + std::to_string(d) + " on " +
          std::to_string(table.rows()) + " samples");
      const Forest forest = Forest::fit(table, fc, threads_);
      auto estimate = [&](const Matrix& pooled) {
        Vector out(1);
        out(0) = forest.predict(flatten(pooled, fc.flattening));
        return out;
      };
      const std::vector<Param> eps{Param::Epsilon};
      const EvalReport val = shuffle_evaluate_with(estimate, eps, v, SplitKind::Validation, d, 1, 0, threads_);
      const EvalReport test =
          shuffle_evaluate_with(estimate, eps, v, SplitKind::Test, d, spec.repeats, derive_seed(spec.seed, 0x7e57), threads_);
      scores.push_back({val.mse_epsilon, std::numeric_limits<double>::quiet_NaN(), test.mse_epsilon});
      restarts.push_back({{"val_mse_eps", val.mse_epsilon}, {"test", test.to_json()}});
    }
    if (detail) *detail = {{"restarts", restarts}};
    return scores;
  }

  ResultTable run(const ExperimentSpec& spec) {
    ResultTable table;
    table.name = spec.name;
    if (spec.mode == "table4") {
      char label[64];
      table.header = {"d", "dt_us"};
      const auto& probe = view(spec.dataset_path, spec.encoder_steps, spec.train_limit);
      std::snprintf(label, sizeof label, "γ_s=%g", probe.manifest().gamma_s);
      table.header.push_back(label);
      table.header.push_back("γ_s=0.0");
      table.header.push_back("γ_s=0.0 + correction");
    } else {
      table.header = results_header();
    }

    for (std::size_t factor : spec.dt_factor)
      for (double dv : spec.d) {
        const bool infinite = std::isinf(dv);
        if (infinite && !spec.noise_free_dataset_path)
          throw InvalidInput("d = inf requires noise_free_dataset_path");
        const auto& v = view(infinite ? *spec.noise_free_dataset_path : spec.dataset_path, spec.encoder_steps,
                             infinite ? 0 : spec.train_limit);
        const std::size_t d = infinite ? 1 : static_cast<std::size_t>(dv);
        const double dt_us = v.manifest().dt_us * static_cast<double>(factor);
        nlohmann::json detail{{"d", infinite ? nlohmann::json("inf") : nlohmann::json(d)}, {"dt_factor", factor}};
        if (spec.mode == "table4") {
          std::vector<double> row{dv, dt_us};
          const std::vector<std::pair<Mode, bool>> variants{
              {Mode::Unsupervised, true}, {Mode::Unsupervised, false}, {Mode::UnsupervisedCorrected, false}};
          nlohmann::json models = nlohmann::json::array();
          for (const auto& [mode, relax] : variants) {
            ModelOptions opt;
            opt.include_relaxation = relax;
            nlohmann::json dj;
            const auto scores = score_autoencoder(spec, mode, v, d, factor, opt, &dj);
            row.push_back(summarize(scores)[1]);
            dj["include_relaxation"] = relax;
            dj["mode"] = mode_name(mode);
            models.push_back(dj);
          }
          detail["models"] = models;
          table.rows.push_back(row);
        } else {
          std::vector<RestartScore> scores;
          nlohmann::json dj;
          if (spec.mode == "rf")
            scores = score_forest(spec, v, d, &dj);
          else
            scores = score_autoencoder(spec, parse_mode(spec.mode), v, d, factor, {}, &dj);
          std::vector<double> row{dv, dt_us};
          for (double x : summarize(scores)) row.push_back(x);
          detail["result"] = dj;
          table.rows.push_back(row);
        }
        table.details.push_back(detail);
      }
    if (!spec.output_path.empty()) table.write_csv(spec.output_path);
    return table;
  }

 private:
  void say(const std::string& msg) const {
    if (log_) *log_ << msg << std::endl;
  }

  unsigned threads_;
  std::ostream* log_;
  std::map<std::string, TrainingView> views_;
};

// ---------------------------------------------------------------------------
// Report: tables plus expectation bands

struct BandResult {
  std::string table;
  std::string column;
  std::string row;
  double value = std::numeric_limits<double>::quiet_NaN();
  double min = -std::numeric_limits<double>::infinity();
  double max = std::numeric_limits<double>::infinity();
  bool pass = false;
  std::string reason;
};

struct ReportOutcome {
  nlohmann::json summary;
  std::size_t failed = 0;
};

inline ReportOutcome run_report(const nlohmann::json& spec, const std::filesystem::path& out_dir, unsigned threads = 1,
                                std::ostream* log = nullptr) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());
  ExperimentRunner runner(threads, log);
  std::map<std::string, ResultTable> tables;
  nlohmann::json table_names = nlohmann::json::array();
  if (spec.contains("tables"))
    for (const auto& tj : spec.at("tables")) {
      ExperimentSpec es = ExperimentSpec::from_json(tj);
      es.output_path = out_dir / (es.name + ".csv");
      if (tables.count(es.name)) throw InvalidInput("duplicate table name '" + es.name + "'");
      tables.emplace(es.name, runner.run(es));
      table_names.push_back(es.name);
    }

  std::vector<BandResult> bands;
  if (spec.contains("bands"))
    for (const auto& bj : spec.at("bands")) {
      BandResult b;
      try {
        b.table = bj.at("table").get<std::string>();
        b.column = bj.at("column").get<std::string>();
        if (bj.contains("min")) b.min = bj.at("min").get<double>();
        if (bj.contains("max")) b.max = bj.at("max").get<double>();
      } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("invalid band: ") + e.what());
      }
      auto it = tables.find(b.table);
      if (it == tables.end()) {
        b.reason = "no such table";
        bands.push_back(b);
        continue;
      }
      const ResultTable& t = it->second;
      const auto col = t.column(b.column);
      std::optional<std::size_t> row;
      if (bj.contains("row")) {
        const auto r = bj.at("row").get<std::size_t>();
        if (r < t.rows.size()) row = r;
        b.row = std::to_string(r);
      } else if (bj.contains("d")) {
        const auto& dj = bj.at("d");
        const double want = dj.is_string() ? kInfiniteGroup : dj.get<double>();
        b.row = "d=" + ResultTable::format(want, true);
        for (std::size_t r = 0; r < t.rows.size(); ++r)
          if (t.rows[r][0] == want && (!bj.contains("dt_us") || t.rows[r][1] == bj.at("dt_us").get<double>())) {
            row = r;
            break;
          }
      } else {
        row = 0;
        b.row = "0";
      }
      if (!col || !row) {
        b.reason = !col ? "no such column" : "no such row";
      } else {
        b.value = t.rows[*row][*col];
        b.pass = b.value >= b.min && b.value <= b.max;
        if (!b.pass) b.reason = "value outside band";
      }
      bands.push_back(b);
    }

  ReportOutcome out;
  nlohmann::json bj = nlohmann::json::array();
  for (const auto& b : bands) {
    if (!b.pass) ++out.failed;
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(ResultTable::format(v)); };
    bj.push_back({{"table", b.table},
                  {"column", b.column},
                  {"row", b.row},
                  {"value", num(b.value)},
                  {"min", num(b.min)},
                  {"max", num(b.max)},
                  {"pass", b.pass},
                  {"reason", b.reason}});
  }
  nlohmann::json details = nlohmann::json::object();
  for (const auto& [name, t] : tables) details[name] = t.details;
  out.summary = {{"tables", table_names}, {"bands", bj}, {"failed", out.failed}, {"details", details}};
  std::ofstream f(out_dir / "summary.json", std::ios::trunc);
  if (!f) throw IoError("cannot write summary.json");
  f << out.summary.dump(2) << '\n';
  return out;
}

}  // namespace hamlearn
