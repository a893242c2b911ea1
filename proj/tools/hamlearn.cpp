// hamlearn command-line driver: simulate, train, evaluate, report.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "hamlearn/desk_scale.hpp"
#include "hamlearn/hamlearn.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Usage problems detected after flag parsing (bad values, divisibility).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const json& desk_defaults() {
  static const json j = json::parse(hamlearn::config::kDeskScaleJson);
  return j;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw hamlearn::IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("cannot parse " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw hamlearn::IoError("cannot write " + path.string());
  out << text;
  if (!out) throw hamlearn::IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string grid;
  fs::path out;
  std::optional<std::size_t> n;
  std::uint64_t seed = 0;
  bool desk = false;
  bool noise_free = false;
  std::optional<unsigned> threads;
};

hamlearn::DatasetManifest custom_manifest(const json& j, std::size_t default_n, std::uint64_t seed, bool noise_free) {
  using namespace hamlearn;
  DatasetManifest m;
  m.name = j.value("name", "custom");
  if (j.contains("epsilon_sweep")) {
    const auto& e = j.at("epsilon_sweep");
    m.grid = ParameterGrid::epsilon_sweep(e.at("K").get<std::size_t>(), e.value("omega", kDefaultOmega));
  } else if (j.contains("grid")) {
    for (const auto& p : j.at("grid")) m.grid.pairs.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    m.grid.sweeps = j.value("sweeps", std::vector<std::size_t>{m.grid.pairs.size()});
  } else {
    throw UsageError("custom grid needs \"grid\" or \"epsilon_sweep\"");
  }
  m.kappa = j.value("kappa", kDefaultKappa);
  m.eta = j.value("eta", kDefaultEta);
  m.gamma_s = j.value("gamma_s", 0.0);
  m.include_relaxation = j.value("include_relaxation", false);
  m.dt_us = j.value("dt_us", kDefaultDt);
  m.T_us = j.value("T_us", kDefaultTotalTime);
  m.axes.clear();
  if (j.contains("axes")) {
    for (const auto& a : j.at("axes"))
      m.axes.push_back({parse_axis(a.at(0).get<std::string>()), parse_axis(a.at(1).get<std::string>())});
  } else {
    m.axes = {{Axis::X, Axis::Y}};
  }
  if (j.contains("initial_spin_up")) {
    const auto& s = j.at("initial_spin_up");
    m.initial_along_measurement = false;
    m.initial_spin_up = {parse_axis(s.at(0).get<std::string>()), parse_axis(s.at(1).get<std::string>())};
  }
  m.noise_free = noise_free;
  m.n = noise_free ? 1 : j.value("N", default_n);
  m.seed = seed;
  m.grid.validate();
  (void)m.sim_config(0, 0).steps();
  return m;
}

int run_simulate(const SimulateArgs& a) {
  using namespace hamlearn;
  const json& scale = a.desk ? desk_defaults().at("simulate") : desk_defaults().at("full");
  DatasetManifest m;
  if (a.grid == "main") {
    const std::size_t k = scale.at("main").at("K").get<std::size_t>();
    const std::size_t n = a.n.value_or(scale.at("main").at("N").get<std::size_t>());
    m = grid_manifest(ParameterGrid::main(k), n, a.seed, a.noise_free);
  } else if (a.grid == "gamma") {
    const std::size_t k = scale.at("gamma").at("K").get<std::size_t>();
    const std::size_t n = a.n.value_or(scale.at("gamma").at("N").get<std::size_t>());
    m = gamma_manifest(k, n, a.seed, a.noise_free);
  } else {
    const json j = read_json_file(a.grid);
    m = custom_manifest(j, a.n.value_or(scale.at("custom").at("N").get<std::size_t>()), a.seed, a.noise_free);
    if (a.n && !a.noise_free) m.n = *a.n;
  }
  const unsigned threads = resolve_threads(a.threads);
  std::cerr << "simulating " << m.grid.size() << " pairs x " << m.configs() << " configurations x " << m.n
            << " trajectories (" << threads << " threads)\n";
  write_dataset(m, a.out, {threads});
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string mode;
  fs::path data;
  std::size_t d = 0;
  std::size_t restarts = 0;
  std::uint64_t seed = 0;
  fs::path out;
  std::optional<fs::path> history;
  std::size_t dt_factor = 1;
  std::size_t train_limit = 0;
  std::optional<std::size_t> epochs_per_run;
  std::optional<std::size_t> max_runs;
  std::size_t encoder_steps = 0;
  std::optional<unsigned> threads;
};

int run_train(const TrainArgs& a) {
  using namespace hamlearn;
  const Mode mode = parse_mode(a.mode);
  const DatasetManifest m = read_manifest(a.data);
  const std::size_t n_train = a.train_limit == 0 ? m.n : std::min(a.train_limit, m.n);
  if (!m.noise_free && (a.d == 0 || n_train % a.d != 0))
    throw UsageError("--d " + std::to_string(a.d) + " does not divide N = " + std::to_string(n_train));
  if (m.steps() % a.dt_factor != 0) throw UsageError("--dt-factor must divide the record length");

  const std::size_t enc_steps =
      a.encoder_steps ? a.encoder_steps : desk_defaults().at("train").at("encoder_steps").get<std::size_t>();
  const TrainingView view = TrainingView::build(a.data, {enc_steps, a.train_limit});
  ModelOptions opt;
  opt.dt_factor = a.dt_factor;
  const ModelConfig cfg = make_model_config(mode, view, opt);

  TrainPlan plan;
  plan.mode = mode;
  plan.restarts = a.restarts ? a.restarts : desk_defaults().at("train").at("restarts").get<std::size_t>();
  plan.seed = a.seed;
  plan.d = a.d;
  plan.dt_factor = a.dt_factor;
  plan.threads = resolve_threads(a.threads);
  if (a.epochs_per_run) plan.epochs_per_run = *a.epochs_per_run;
  if (a.max_runs) plan.max_runs = *a.max_runs;
  if (plan.final_run_tail >= plan.epochs_per_run) plan.final_run_tail = std::max<std::size_t>(1, plan.epochs_per_run / 5);
  std::cerr << "training " << mode_name(mode) << " with " << plan.restarts << " restarts\n";
  const TrainResult result = train(plan, view, cfg);
  const fs::path history = a.history.value_or(fs::path(a.out.string() + ".history.json"));
  write_text(history, result.history_json().dump(2) + "\n");
  if (result.all_diverged()) {
    std::cerr << "error: all restarts diverged\n";
    return 2;
  }
  const auto& best = result.restarts[*result.best];
  const Model model = restart_model(cfg, best);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  model.save(a.out, {{"encoder_steps", enc_steps},
                     {"record_steps", m.steps()},
                     {"dt_factor", a.dt_factor},
                     {"d", a.d},
                     {"train_limit", a.train_limit},
                     {"restart", *result.best},
                     {"val_loss", best.final_val_loss}});
  std::cerr << "best restart " << *result.best << " validation loss " << best.final_val_loss << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  fs::path ckpt;
  fs::path data;
  std::string split;
  std::size_t d = 0;
  std::size_t repeats = 100;
  fs::path out;
  std::optional<fs::path> pairs_json;
  std::uint64_t seed = 0;
  std::optional<unsigned> threads;
};

int run_evaluate(const EvaluateArgs& a) {
  using namespace hamlearn;
  const SplitKind split = parse_split(a.split);
  const auto [header, values] = nn::read_checkpoint(a.ckpt);
  (void)values;
  const Model model = Model::load(a.ckpt);
  const json extra = header.value("extra", json::object());
  const std::size_t enc_steps = extra.value("encoder_steps", std::size_t{64});
  const DatasetManifest m = read_manifest(a.data);
  if (m.channels() != model.config().encoder.input_channels)
    throw Error("checkpoint expects " + std::to_string(model.config().encoder.input_channels) +
                " voltage channels but the dataset has " + std::to_string(m.channels()));
  if (extra.contains("record_steps") && extra.at("record_steps").get<std::size_t>() != m.steps())
    throw Error("checkpoint was trained on records of " + std::to_string(extra.at("record_steps").get<std::size_t>()) +
                " steps but the dataset has " + std::to_string(m.steps()));
  const TrainingView view = TrainingView::build(a.data, {enc_steps, 0});
  const std::size_t held = (split == SplitKind::Test ? view.split().test_trajectories() : view.split().val_trajectories()).size();
  if (!m.noise_free && (a.d == 0 || a.d > held))
    throw UsageError("--d must lie in [1, " + std::to_string(held) + "]");
  const EvalReport rep = shuffle_evaluate(model, view, split, a.d, a.repeats, a.seed, resolve_threads(a.threads));
  std::string csv = "split,d,repeats,mse_omega,mse_eps\n";
  csv += a.split + "," + std::to_string(rep.d) + "," + std::to_string(rep.repeats) + "," +
         ResultTable::format(rep.mse_omega) + "," + ResultTable::format(rep.mse_epsilon) + "\n";
  write_text(a.out, csv);
  write_text(a.pairs_json.value_or(fs::path(a.out.string() + ".pairs.json")), rep.to_json().dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// report

int run_report_cmd(const fs::path& spec_path, const fs::path& out, std::optional<unsigned> threads) {
  using namespace hamlearn;
  json spec = read_json_file(spec_path);
  if (!spec.is_object()) throw UsageError("report spec must be a JSON object");
  if (spec.contains("mode")) {
    // A single experiment spec: run it as the only table.
    json wrapped{{"tables", json::array({spec})}};
    if (!spec.contains("name")) wrapped["tables"][0]["name"] = "results";
    spec = wrapped;
  }
  const ReportOutcome outcome = run_report(spec, out, resolve_threads(threads), &std::cerr);
  if (spec.contains("tables"))
    for (const auto& t : spec.at("tables"))
      if (t.contains("output_path")) {
        const fs::path src = out / (t.value("name", std::string("results")) + ".csv");
        const fs::path dst = t.at("output_path").get<std::string>();
        if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
        fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
      }
  if (outcome.failed > 0) {
    std::cerr << "failed bands:\n";
    for (const auto& b : outcome.summary.at("bands"))
      if (!b.at("pass").get<bool>())
        std::cerr << "  " << b.at("table").get<std::string>() << " [" << b.at("row").get<std::string>() << "] "
                  << b.at("column").get<std::string>() << ": " << b.at("value").dump() << " ("
                  << b.at("reason").get<std::string>() << ")\n";
    return 2;
  }
  return 0;
}

void add_threads(CLI::App* cmd, std::optional<unsigned>& threads) {
  cmd->add_option("--threads", threads, "Worker threads (default: HAMLEARN_THREADS, else all cores)")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hamiltonian parameter learning from simulated weak-measurement records"};
  app.require_subcommand(1);
  app.allow_extras(false);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Simulate a dataset directory of measurement records");
  simulate->add_option("--grid", sim.grid, "main, gamma, or a custom grid JSON file")->required();
  simulate->add_option("--out", sim.out, "Output dataset directory")->required();
  simulate->add_option("--n", sim.n, "Trajectories per pair and configuration")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sim.seed, "Master seed");
  simulate->add_flag("--desk-scale", sim.desk, "Use the reduced desk-scale grid and N");
  simulate->add_flag("--noise-free", sim.noise_free, "Write the expected (noise-free) record, one per pair");
  add_threads(simulate, sim.threads);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train encoder (and decoder) models with random restarts");
  train->add_option("--mode", tr.mode, "sup, unsup or unsup-corr")->required()->check(CLI::IsMember({"sup", "unsup", "unsup-corr"}));
  train->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--d", tr.d, "Trajectory group size")->required()->check(CLI::PositiveNumber);
  train->add_option("--restarts", tr.restarts, "Random restarts (default from desk config)")->check(CLI::PositiveNumber);
  train->add_option("--seed", tr.seed, "Master seed");
  train->add_option("--out", tr.out, "Checkpoint path")->required();
  train->add_option("--history", tr.history, "History JSON path (default CKPT.history.json)");
  train->add_option("--dt-factor", tr.dt_factor, "Sub-sampling factor of the decoder time step")->check(CLI::PositiveNumber);
  train->add_option("--train-limit", tr.train_limit, "Use only the first N trajectories of each training pair");
  train->add_option("--epochs-per-run", tr.epochs_per_run, "Epochs per run (default 100)")->check(CLI::PositiveNumber);
  train->add_option("--max-runs", tr.max_runs, "Cap on runs per restart (default 10)")->check(CLI::PositiveNumber);
  train->add_option("--encoder-steps", tr.encoder_steps, "Pooled sequence length seen by the encoder")->check(CLI::PositiveNumber);
  add_threads(train, tr.threads);

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Shuffle-evaluate a checkpoint on held-out pairs");
  evaluate->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--split", ev.split, "val or test")->required()->check(CLI::IsMember({"val", "test"}));
  evaluate->add_option("--d", ev.d, "Trajectory group size")->required()->check(CLI::PositiveNumber);
  evaluate->add_option("--repeats", ev.repeats, "Random regroupings to average")->check(CLI::PositiveNumber);
  evaluate->add_option("--out", ev.out, "Result CSV path")->required();
  evaluate->add_option("--pairs-json", ev.pairs_json, "Per-pair error JSON (default OUT.pairs.json)");
  evaluate->add_option("--seed", ev.seed, "Regrouping seed");
  add_threads(evaluate, ev.threads);

  fs::path report_spec, report_out;
  std::optional<unsigned> report_threads;
  auto* report = app.add_subcommand("report", "Run experiment tables and check expectation bands");
  report->add_option("--spec", report_spec, "Report or experiment spec JSON")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out, "Output directory")->required();
  add_threads(report, report_threads);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    const auto chosen = app.get_subcommands();
    std::cerr << (chosen.empty() ? app.help() : chosen.front()->help());
    return 1;
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*train) return run_train(tr);
    if (*evaluate) return run_evaluate(ev);
    if (*report) return run_report_cmd(report_spec, report_out, report_threads);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const hamlearn::InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const hamlearn::GridTooSmall& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
