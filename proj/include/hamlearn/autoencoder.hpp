#pragma once

// Parameter-estimating autoencoder.  The encoder maps (pooled) grouped
// voltage records to physical parameters; the flex-integrator decoder rolls the
// unconditioned master equation forward from those parameters, optionally
// adding an LSTM-generated traceless Hermitian correction to each Euler step,
// and emits the expected voltages.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hamlearn/error.hpp"
#include "hamlearn/nn.hpp"
#include "hamlearn/pauli_coords.hpp"
#include "hamlearn/quantum.hpp"
#include "hamlearn/simulator.hpp"
#include "json.hpp"

namespace hamlearn {

using nn::Matrix;
using nn::Vector;

enum class Param { Omega, Epsilon };

inline std::string param_name(Param p) { return p == Param::Omega ? "omega" : "epsilon"; }

inline Param parse_param(const std::string& s) {
  if (s == "omega") return Param::Omega;
  if (s == "epsilon") return Param::Epsilon;
  throw InvalidInput("unknown parameter '" + s + "'");
}

inline double get_param(const PhysicalParams& p, Param which) { return which == Param::Omega ? p.omega : p.epsilon; }

inline void set_param(PhysicalParams& p, Param which, double v) {
  (which == Param::Omega ? p.omega : p.epsilon) = v;
}

// ---------------------------------------------------------------------------
// Encoder

struct ParamRange {
  double min = 0.0;
  double max = 1.0;
};

struct EncoderConfig {
  std::size_t input_channels = 2;
  std::size_t pool_window = 16;
  std::size_t lstm_hidden = 32;
  std::vector<std::size_t> dense_sizes{32, 16, 2};
  std::vector<Param> params{Param::Omega, Param::Epsilon};
  std::vector<ParamRange> param_ranges{{0.0, 1.0}, {0.0, 1.0}};

  std::size_t p() const { return dense_sizes.empty() ? 0 : dense_sizes.back(); }

  void validate() const {
    if (input_channels == 0 || pool_window == 0 || lstm_hidden == 0) throw InvalidInput("encoder sizes must be positive");
    if (dense_sizes.empty()) throw InvalidInput("encoder needs at least one dense layer");
    for (auto s : dense_sizes)
      if (s == 0) throw InvalidInput("dense sizes must be positive");
    if (params.size() != p() || param_ranges.size() != p())
      throw InvalidInput("encoder output size must equal the number of estimated parameters");
    for (const auto& r : param_ranges)
      if (!std::isfinite(r.min) || !std::isfinite(r.max) || !(r.min < r.max))
        throw InvalidInput("parameter ranges must be finite with min < max");
  }

  /// Ranges spanning `values` per parameter, padded by `pad` of the span on each side.
  static std::vector<ParamRange> padded_ranges(const std::vector<std::vector<double>>& values, double pad = 0.1) {
    std::vector<ParamRange> out;
    for (const auto& v : values) {
      if (v.empty()) throw InvalidInput("padded_ranges: no values");
      const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
      double span = *hi - *lo;
      if (span <= 0.0) span = std::max(1.0, std::abs(*lo));
      out.push_back({*lo - pad * span, *hi + pad * span});
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json names = nlohmann::json::array(), ranges = nlohmann::json::array();
    for (auto q : params) names.push_back(param_name(q));
    for (const auto& r : param_ranges) ranges.push_back({r.min, r.max});
    return {{"input_channels", input_channels}, {"pool_window", pool_window}, {"lstm_hidden", lstm_hidden},
            {"dense_sizes", dense_sizes},       {"params", names},           {"param_ranges", ranges}};
  }

  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.input_channels = j.at("input_channels").get<std::size_t>();
    c.pool_window = j.at("pool_window").get<std::size_t>();
    c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    c.dense_sizes = j.at("dense_sizes").get<std::vector<std::size_t>>();
    c.params.clear();
    for (const auto& n : j.at("params")) c.params.push_back(parse_param(n.get<std::string>()));
    c.param_ranges.clear();
    for (const auto& r : j.at("param_ranges")) c.param_ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    c.validate();
    return c;
  }
};

class Encoder {
 public:
  struct Tape {
    std::vector<nn::LstmCache> lstm;
    std::vector<Vector> activations;  // [0] = final hidden state, [i+1] = output of dense layer i
    Vector squashed;                  // sigmoid outputs before range scaling
  };

  Encoder(const EncoderConfig& cfg, nn::ParameterLayout& layout) : cfg_(cfg) {
    cfg_.validate();
    lstm_ = nn::LstmLayer::add(layout, "encoder.lstm", cfg_.input_channels, cfg_.lstm_hidden);
    std::size_t in = cfg_.lstm_hidden;
    for (std::size_t i = 0; i < cfg_.dense_sizes.size(); ++i) {
      const bool last = i + 1 == cfg_.dense_sizes.size();
      dense_.push_back(nn::DenseLayer::add(layout, "encoder.dense" + std::to_string(i), in, cfg_.dense_sizes[i],
                                           last ? nn::Activation::Identity : nn::Activation::Tanh));
      in = cfg_.dense_sizes[i];
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  void init(double* w, std::mt19937_64& rng) const {
    lstm_.init(w, rng);
    for (const auto& d : dense_) d.init(w, rng);
  }

  /// Zeroes the last dense layer so every input maps to the range midpoints.
  void zero_output_layer(double* w) const { dense_.back().zero(w); }

  /// Encodes an already pooled sequence (steps x channels).
  Vector forward_pooled(const double* w, const Eigen::Ref<const Matrix>& pooled, Tape* tape = nullptr) const {
    if (static_cast<std::size_t>(pooled.cols()) != cfg_.input_channels)
      throw ShapeMismatch("encoder: expected " + std::to_string(cfg_.input_channels) + " channels");
    if (pooled.rows() == 0) throw ShapeMismatch("encoder: empty sequence");
    const auto s = nn::lstm_sequence(pooled, nn::LstmState::zeros(Eigen::Index(cfg_.lstm_hidden)), lstm_.params(w),
                                     tape ? &tape->lstm : nullptr);
    Vector a = s.h;
    if (tape) {
      tape->activations.clear();
      tape->activations.push_back(a);
    }
    for (const auto& d : dense_) {
      a = d.forward(w, a);
      if (tape) tape->activations.push_back(a);
    }
    Vector theta(a.size());
    Vector sq(a.size());
    for (Eigen::Index j = 0; j < a.size(); ++j) {
      sq(j) = nn::sigmoid(a(j));
      const auto& r = cfg_.param_ranges[static_cast<std::size_t>(j)];
      theta(j) = r.min + (r.max - r.min) * sq(j);
    }
    if (tape) tape->squashed = sq;
    return theta;
  }

  /// Pools a raw sequence (steps x channels) by the configured window, then encodes.
  Vector encode(const double* w, const Eigen::Ref<const Matrix>& x) const {
    return forward_pooled(w, nn::avg_pool_time(x, cfg_.pool_window));
  }

  /// Accumulates weight gradients given dloss/dtheta.  Returns dloss/d(pooled input).
  Matrix backward(const double* w, double* g, const Tape& tape, const Vector& dtheta) const {
    Vector da(dtheta.size());
    for (Eigen::Index j = 0; j < dtheta.size(); ++j) {
      const auto& r = cfg_.param_ranges[static_cast<std::size_t>(j)];
      const double s = tape.squashed(j);
      da(j) = dtheta(j) * (r.max - r.min) * s * (1.0 - s);
    }
    for (std::size_t i = dense_.size(); i-- > 0;)
      da = dense_[i].backward(w, g, tape.activations[i], tape.activations[i + 1], da);
    auto grads = lstm_.grads(g);
    return nn::lstm_sequence_backward(lstm_.params(w), tape.lstm, da, Vector::Zero(da.size()), grads);
  }

 private:
  EncoderConfig cfg_;
  nn::LstmLayer lstm_;
  std::vector<nn::DenseLayer> dense_;
};

// ---------------------------------------------------------------------------
// Traceless Hermitian parametrization

/// The 15 generalized Gell-Mann matrices of su(4): symmetric and antisymmetric
/// off-diagonal pairs, then the diagonal ones.
inline std::array<ComplexMatrix4, 15> gell_mann_basis() {
  using namespace std::complex_literals;
  std::array<ComplexMatrix4, 15> out;
  std::size_t k = 0;
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b) {
      ComplexMatrix4 s = ComplexMatrix4::Zero(), t = ComplexMatrix4::Zero();
      s(a, b) = s(b, a) = 1.0;
      t(a, b) = -1.0i;
      t(b, a) = 1.0i;
      out[k++] = s;
      out[k++] = t;
    }
  for (int l = 1; l < 4; ++l) {
    ComplexMatrix4 d = ComplexMatrix4::Zero();
    const double scale = std::sqrt(2.0 / (l * (l + 1)));
    for (int j = 0; j < l; ++j) d(j, j) = scale;
    d(l, l) = -l * scale;
    out[k++] = d;
  }
  return out;
}

/// Herm(v) = sum_k v_k lambda_k, traceless and Hermitian for any real v.
inline ComplexMatrix4 herm(const Eigen::Ref<const Vector>& v) {
  if (v.size() != 15) throw ShapeMismatch("herm: expected 15 values");
  static const auto basis = gell_mann_basis();
  ComplexMatrix4 m = ComplexMatrix4::Zero();
  for (std::size_t k = 0; k < 15; ++k) m += v(Eigen::Index(k)) * basis[k];
  return m;
}

/// Pauli coordinates of Herm(v) as a linear map: coords = M v.
inline const Eigen::Matrix<double, 16, 15>& herm_coords_map() {
  static const Eigen::Matrix<double, 16, 15> m = [] {
    Eigen::Matrix<double, 16, 15> out;
    const auto basis = gell_mann_basis();
    for (int k = 0; k < 15; ++k) out.col(k) = PauliBasis::instance().to_coords(basis[static_cast<std::size_t>(k)]);
    return out;
  }();
  return m;
}

// ---------------------------------------------------------------------------
// Decoder

namespace detail {

inline nlohmann::json measurement_to_json(const MeasurementConfig& m) {
  nlohmann::json rho = nlohmann::json::array();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) rho.push_back({m.initial_state(i, j).real(), m.initial_state(i, j).imag()});
  return {{"axes", {std::string(1, axis_name(m.axes[0])), std::string(1, axis_name(m.axes[1]))}},
          {"initial_state", rho}};
}

inline MeasurementConfig measurement_from_json(const nlohmann::json& j) {
  MeasurementConfig m;
  m.axes = {parse_axis(j.at("axes").at(0).get<std::string>()), parse_axis(j.at("axes").at(1).get<std::string>())};
  const auto& rho = j.at("initial_state");
  if (rho.size() != 16) throw InvalidInput("initial_state must hold 16 complex entries");
  ComplexMatrix4 mat;
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k) {
      const auto& z = rho.at(static_cast<std::size_t>(4 * i + k));
      mat(i, k) = Complex(z.at(0).get<double>(), z.at(1).get<double>());
    }
  m.initial_state = DensityMatrix::from_matrix(mat);
  return m;
}

}  // namespace detail

struct DecoderConfig {
  double dt = 1.0 / 256.0;
  std::size_t steps = 1024;
  PhysicalParams known{};           // fields not being estimated, plus kappa, eta, gamma_s
  std::vector<Param> estimated{Param::Omega, Param::Epsilon};
  bool correction_enabled = false;
  std::size_t lstm_hidden = 32;
  std::vector<MeasurementConfig> meas{MeasurementConfig{}};
  bool include_relaxation = false;

  double total_time() const { return dt * static_cast<double>(steps); }
  std::size_t channels() const { return 2 * meas.size(); }
  std::size_t p() const { return estimated.size(); }

  void validate() const {
    if (!(dt > 0.0) || steps == 0) throw InvalidInput("decoder needs positive dt and steps");
    if (meas.empty()) throw InvalidInput("decoder needs at least one measurement configuration");
    if (lstm_hidden == 0) throw InvalidInput("decoder hidden size must be positive");
    known.validate();
  }

  PhysicalParams params_for(const Eigen::Ref<const Vector>& theta) const {
    if (static_cast<std::size_t>(theta.size()) != estimated.size()) throw ShapeMismatch("decoder: parameter count");
    PhysicalParams p = known;
    for (std::size_t j = 0; j < estimated.size(); ++j) set_param(p, estimated[j], theta(Eigen::Index(j)));
    return p;
  }

  nlohmann::json to_json() const {
    nlohmann::json names = nlohmann::json::array(), m = nlohmann::json::array();
    for (auto q : estimated) names.push_back(param_name(q));
    for (const auto& c : meas) m.push_back(detail::measurement_to_json(c));
    return {{"dt", dt},
            {"steps", steps},
            {"known",
             {{"omega", known.omega},
              {"epsilon", known.epsilon},
              {"kappa", known.kappa},
              {"eta", known.eta},
              {"gamma_s", known.gamma_s}}},
            {"estimated", names},
            {"correction_enabled", correction_enabled},
            {"lstm_hidden", lstm_hidden},
            {"measurements", m},
            {"include_relaxation", include_relaxation}};
  }

  static DecoderConfig from_json(const nlohmann::json& j) {
    DecoderConfig c;
    c.dt = j.at("dt").get<double>();
    c.steps = j.at("steps").get<std::size_t>();
    const auto& k = j.at("known");
    c.known = {k.at("omega").get<double>(), k.at("epsilon").get<double>(), k.at("kappa").get<double>(),
               k.at("eta").get<double>(), k.at("gamma_s").get<double>()};
    c.estimated.clear();
    for (const auto& n : j.at("estimated")) c.estimated.push_back(parse_param(n.get<std::string>()));
    c.correction_enabled = j.at("correction_enabled").get<bool>();
    c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    c.meas.clear();
    for (const auto& m : j.at("measurements")) c.meas.push_back(detail::measurement_from_json(m));
    c.include_relaxation = j.at("include_relaxation").get<bool>();
    c.validate();
    return c;
  }
};

struct FlexCellState {
  Coords r;
  nn::LstmState lstm;

  DensityMatrix rho() const { return DensityMatrix::trusted(PauliBasis::instance().from_coords(r)); }
};

/// Physical part of the decoder drift: the Lindblad generator assembled from
/// the estimated and known parameters.  This is the seam where another
/// integrator backend would plug in.
class LindbladDrift {
 public:
  LindbladDrift(const DecoderConfig& cfg, const MeasurementConfig& meas)
      : ops_(ModelOperators::build(meas)), cfg_(&cfg) {}

  RealGenerator generator(const Eigen::Ref<const Vector>& theta) const {
    return ops_.generator(cfg_->params_for(theta), cfg_->include_relaxation);
  }

  /// d generator / d theta_j.
  const RealGenerator& unit(std::size_t j) const {
    return cfg_->estimated[j] == Param::Omega ? ops_.unit_omega : ops_.unit_epsilon;
  }

  Coords signal(std::size_t qubit) const { return std::sqrt(cfg_->known.kappa) * ops_.unit_signal[qubit]; }

 private:
  ModelOperators ops_;
  const DecoderConfig* cfg_;
};

class FlexDecoder {
 public:
  struct ConfigTape {
    std::vector<Coords> r;  // state before each step
    std::vector<nn::LstmCache> lstm;
    std::vector<Vector> head;  // correction head outputs
  };

  struct Tape {
    Vector theta;
    std::vector<ConfigTape> configs;
  };

  FlexDecoder(const DecoderConfig& cfg, nn::ParameterLayout& layout) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.correction_enabled) {
      lstm_ = nn::LstmLayer::add(layout, "decoder.lstm", 16 + cfg_.p() + 1, cfg_.lstm_hidden);
      head_ = nn::DenseLayer::add(layout, "decoder.head", cfg_.lstm_hidden, 15, nn::Activation::Identity);
    }
    gain_ = std::sqrt(cfg_.known.eta / 2.0);
    for (const auto& m : cfg_.meas) {
      drifts_.emplace_back(cfg_, m);
      initial_.push_back(to_coords(m.initial_state));
    }
  }

  FlexDecoder(const FlexDecoder& o) : cfg_(o.cfg_), lstm_(o.lstm_), head_(o.head_), gain_(o.gain_), initial_(o.initial_) {
    for (const auto& m : cfg_.meas) drifts_.emplace_back(cfg_, m);
  }
  FlexDecoder& operator=(const FlexDecoder&) = delete;

  const DecoderConfig& config() const { return cfg_; }

  /// Correction LSTM gets the usual init; the output head starts at zero so
  /// the untrained decoder equals the bare physical model.
  void init(double* w, std::mt19937_64& rng) const {
    if (!cfg_.correction_enabled) return;
    lstm_.init(w, rng);
    head_.zero(w);
  }

  FlexCellState initial_state(std::size_t config) const {
    return {initial_.at(config), nn::LstmState::zeros(Eigen::Index(cfg_.lstm_hidden))};
  }

  /// One flex-cell step at step index n: Euler drift plus optional Hermitian
  /// correction, then projection.  Returns the voltages emitted on the new state.
  std::array<double, 2> step(const double* w, const Eigen::Ref<const Vector>& theta, const RealGenerator& generator,
                             std::size_t config, std::size_t n, FlexCellState& s, nn::LstmCache* cache = nullptr,
                             Vector* head_out = nullptr) const {
    try {
      if (!cfg_.correction_enabled) {
        euler_step(s.r, generator, cfg_.dt);
      } else {
        Vector x(16 + theta.size() + 1);
        x.head<16>() = s.r;
        x.segment(16, theta.size()) = theta;
        x(x.size() - 1) = static_cast<double>(n) * cfg_.dt / cfg_.total_time();
        s.lstm = nn::lstm_cell(x, s.lstm, lstm_.params(w), cache);
        Vector v = head_.forward(w, s.lstm.h);
        const Coords corr = herm_coords_map() * v;
        s.r += cfg_.dt * (generator * s.r + corr);
        project_coords(s.r);
        if (head_out) *head_out = std::move(v);
      }
    } catch (const InvalidInput& e) {
      throw DecodeDiverged(n, e.what());
    } catch (const NonFinite& e) {
      throw DecodeDiverged(n, e.what());
    }
    const auto& d = drifts_[config];
    return {gain_ * d.signal(0).dot(s.r), gain_ * d.signal(1).dot(s.r)};
  }

  /// Predicted voltages, steps x (2 * configurations), channel 2c + i.
  Matrix decode(const double* w, const Eigen::Ref<const Vector>& theta, Tape* tape = nullptr) const {
    if (static_cast<std::size_t>(theta.size()) != cfg_.p()) throw ShapeMismatch("decode: parameter count");
    if (!theta.allFinite()) throw DecodeDiverged(0, "non-finite parameters");
    Matrix out(Eigen::Index(cfg_.steps), Eigen::Index(cfg_.channels()));
    if (tape) {
      tape->theta = theta;
      tape->configs.assign(cfg_.meas.size(), {});
    }
    for (std::size_t c = 0; c < cfg_.meas.size(); ++c) {
      const RealGenerator gen = drifts_[c].generator(theta);
      FlexCellState s = initial_state(c);
      ConfigTape* ct = tape ? &tape->configs[c] : nullptr;
      if (ct) {
        ct->r.resize(cfg_.steps);
        if (cfg_.correction_enabled) {
          ct->lstm.resize(cfg_.steps);
          ct->head.resize(cfg_.steps);
        }
      }
      for (std::size_t n = 0; n < cfg_.steps; ++n) {
        if (ct) ct->r[n] = s.r;
        const auto v = step(w, theta, gen, c, n, s, ct && cfg_.correction_enabled ? &ct->lstm[n] : nullptr,
                            ct && cfg_.correction_enabled ? &ct->head[n] : nullptr);
        if (!std::isfinite(v[0]) || !std::isfinite(v[1])) throw DecodeDiverged(n, "non-finite voltage");
        out(Eigen::Index(n), Eigen::Index(2 * c)) = v[0];
        out(Eigen::Index(n), Eigen::Index(2 * c + 1)) = v[1];
      }
    }
    return out;
  }

  /// Reverse pass through the drift, correction and projection.  Accumulates correction
  /// weight gradients into g and returns dloss/dtheta.
  Vector backward(const double* w, double* g, const Tape& tape, const Eigen::Ref<const Matrix>& dV) const {
    const Eigen::Index p = Eigen::Index(cfg_.p());
    Vector dtheta = Vector::Zero(p);
    const auto& M = herm_coords_map();
    for (std::size_t c = 0; c < cfg_.meas.size(); ++c) {
      const auto& ct = tape.configs[c];
      const auto& d = drifts_[c];
      const RealGenerator gen = d.generator(tape.theta);
      const RealGenerator gen_t = gen.transpose();
      const Coords s0 = gain_ * d.signal(0), s1 = gain_ * d.signal(1);
      Coords lambda = Coords::Zero();
      const auto hidden = Eigen::Index(cfg_.lstm_hidden);
      Vector dh = Vector::Zero(hidden), dc = Vector::Zero(hidden), dx, dh_prev, dc_prev;
      std::optional<nn::LstmGrads> lg;
      if (cfg_.correction_enabled) lg.emplace(lstm_.grads(g));
      for (std::size_t n = cfg_.steps; n-- > 0;) {
        lambda += dV(Eigen::Index(n), Eigen::Index(2 * c)) * s0 + dV(Eigen::Index(n), Eigen::Index(2 * c + 1)) * s1;
        const Coords& r = ct.r[n];
        // Pull the adjoint back through the projection at the pre-projection point.
        Coords u = r;
        if (cfg_.correction_enabled) {
          const Coords corr = M * ct.head[n];
          u += cfg_.dt * (gen * r + corr);
        } else {
          u += cfg_.dt * (gen * r);
        }
        lambda = project_coords_jacobian(u, lambda);
        for (std::size_t j = 0; j < cfg_.p(); ++j) dtheta(Eigen::Index(j)) += cfg_.dt * lambda.dot(d.unit(j) * r);
        Coords dr = lambda + cfg_.dt * (gen_t * lambda);
        if (cfg_.correction_enabled) {
          const Vector dv = cfg_.dt * (M.transpose() * lambda);
          const auto& cache = ct.lstm[n];
          // h_n is the head input; the LSTM output at step n.
          const Vector h_out = cache.gates.segment(3 * hidden, hidden).cwiseProduct(cache.tanh_c);
          dh += head_.backward(w, g, h_out, ct.head[n], dv);
          nn::lstm_cell_backward(lstm_.params(w), cache, dh, dc, *lg, dx, dh_prev, dc_prev);
          dr += dx.head<16>();
          dtheta += dx.segment(16, p);
          dh = std::move(dh_prev);
          dc = std::move(dc_prev);
        }
        lambda = dr;
      }
    }
    return dtheta;
  }

 private:
  DecoderConfig cfg_;
  nn::LstmLayer lstm_;
  nn::DenseLayer head_;
  double gain_ = 0.0;
  std::vector<LindbladDrift> drifts_;
  std::vector<Coords> initial_;
};

// ---------------------------------------------------------------------------
// Whole model

enum class Mode { Supervised, Unsupervised, UnsupervisedCorrected };

inline std::string mode_name(Mode m) {
  switch (m) {
    case Mode::Supervised: return "sup";
    case Mode::Unsupervised: return "unsup";
    case Mode::UnsupervisedCorrected: return "unsup-corr";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "sup" || s == "supervised") return Mode::Supervised;
  if (s == "unsup" || s == "unsupervised") return Mode::Unsupervised;
  if (s == "unsup-corr" || s == "unsupervised_with_correction") return Mode::UnsupervisedCorrected;
  throw InvalidInput("unknown training mode '" + s + "'");
}

struct ModelConfig {
  Mode mode = Mode::Supervised;
  EncoderConfig encoder;
  std::optional<DecoderConfig> decoder;  // absent for supervised models

  void validate() const {
    encoder.validate();
    if (mode == Mode::Supervised) {
      if (decoder) throw InvalidInput("supervised models carry no decoder");
      return;
    }
    if (!decoder) throw InvalidInput("unsupervised models need a decoder");
    decoder->validate();
    if (decoder->correction_enabled != (mode == Mode::UnsupervisedCorrected))
      throw InvalidInput("decoder correction flag does not match the training mode");
    if (decoder->estimated != encoder.params) throw InvalidInput("encoder and decoder disagree on estimated parameters");
  }

  nlohmann::json to_json() const {
    return {{"mode", mode_name(mode)},
            {"encoder", encoder.to_json()},
            {"decoder", decoder ? decoder->to_json() : nlohmann::json(nullptr)}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.encoder = EncoderConfig::from_json(j.at("encoder"));
    if (!j.at("decoder").is_null()) c.decoder = DecoderConfig::from_json(j.at("decoder"));
    c.validate();
    return c;
  }
};

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)), encoder_((cfg_.validate(), cfg_.encoder), layout_) {
    if (cfg_.decoder) decoder_.emplace(*cfg_.decoder, layout_);
    weights_.assign(layout_.size(), 0.0);
  }

  Model(const Model& o) : cfg_(o.cfg_), layout_(o.layout_), encoder_(o.encoder_), decoder_(o.decoder_), weights_(o.weights_), seed_(o.seed_) {}
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const nn::ParameterLayout& layout() const { return layout_; }
  const Encoder& encoder() const { return encoder_; }
  const FlexDecoder* decoder() const { return decoder_ ? &*decoder_ : nullptr; }
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }
  std::uint64_t seed() const { return seed_; }

  void init(std::uint64_t seed) {
    seed_ = seed;
    std::mt19937_64 rng(seed);
    encoder_.init(weights_.data(), rng);
    if (decoder_) decoder_->init(weights_.data(), rng);
  }

  Vector encode(const Eigen::Ref<const Matrix>& record) const { return encoder_.encode(weights_.data(), record); }
  Vector encode_pooled(const Eigen::Ref<const Matrix>& pooled) const {
    return encoder_.forward_pooled(weights_.data(), pooled);
  }

  /// L2 norm of the decoder correction weights.
  double decoder_weight_norm() const { return decoder_weight_norm(weights_); }

  double decoder_weight_norm(const std::vector<double>& w) const {
    double acc = 0.0;
    for (const auto& b : layout_.blocks())
      if (b.name.rfind("decoder.", 0) == 0)
        for (std::size_t k = 0; k < b.size(); ++k) acc += w[b.offset + k] * w[b.offset + k];
    return std::sqrt(acc);
  }

  nlohmann::json header(const nlohmann::json& extra = {}) const {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : layout_.blocks())
      blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"shape", {b.rows, b.cols}}});
    nlohmann::json h{{"format", "hamlearn-model"},
                     {"version", 1},
                     {"config", cfg_.to_json()},
                     {"seed", seed_},
                     {"param_count", layout_.size()},
                     {"blocks", blocks}};
    if (!extra.is_null()) h["extra"] = extra;
    return h;
  }

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const {
    nn::write_checkpoint(path, header(extra), weights_);
  }

  static Model load(const std::filesystem::path& path) {
    auto [header, values] = nn::read_checkpoint(path);
    if (header.value("format", "") != "hamlearn-model") throw IoError("not a model checkpoint: " + path.string());
    ModelConfig cfg;
    try {
      cfg = ModelConfig::from_json(header.at("config"));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("bad model config in checkpoint: ") + e.what());
    }
    Model m(cfg);
    if (values.size() != m.layout_.size() || header.at("param_count").get<std::size_t>() != values.size())
      throw IoError("checkpoint parameter count does not match its config");
    m.weights_ = std::move(values);
    m.seed_ = header.value("seed", std::uint64_t{0});
    return m;
  }

 private:
  ModelConfig cfg_;
  nn::ParameterLayout layout_;
  Encoder encoder_;
  std::optional<FlexDecoder> decoder_;
  std::vector<double> weights_;
  std::uint64_t seed_ = 0;
};

}  // namespace hamlearn
