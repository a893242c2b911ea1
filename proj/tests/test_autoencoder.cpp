#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "hamlearn/autoencoder.hpp"
#include "hamlearn/simulator.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hamlearn;

namespace {

PhysicalParams known_params() { return PhysicalParams{0.0, 0.0, 3.326, 0.1469, 0.0}; }

DecoderConfig small_decoder(bool correction, std::size_t steps = 128, double dt = 1.0 / 64.0) {
  DecoderConfig d;
  d.dt = dt;
  d.steps = steps;
  d.known = known_params();
  d.correction_enabled = correction;
  d.lstm_hidden = 6;
  d.meas = {MeasurementConfig::spin_up_along_measurement(Axis::X, Axis::Y)};
  return d;
}

EncoderConfig small_encoder() {
  EncoderConfig e;
  e.input_channels = 2;
  e.pool_window = 4;
  e.lstm_hidden = 6;
  e.dense_sizes = {6, 2};
  e.param_ranges = {{0.5, 2.5}, {-0.2, 2.2}};
  return e;
}

Vector theta_of(double omega, double epsilon) {
  Vector t(2);
  t << omega, epsilon;
  return t;
}

}  // namespace

TEST(Encoder, ZeroOutputLayerGivesRangeMidpoints) {
  nn::ParameterLayout layout;
  const Encoder enc(small_encoder(), layout);
  std::vector<double> w(layout.size());
  std::mt19937_64 rng(1);
  enc.init(w.data(), rng);
  enc.zero_output_layer(w.data());
  const Matrix x = gradcheck::random_matrix(rng, 64, 2);
  const Vector theta = enc.encode(w.data(), x);
  EXPECT_NEAR(theta(0), 1.5, 1e-15);
  EXPECT_NEAR(theta(1), 1.0, 1e-15);
}

TEST(Encoder, OutputsStayInsideRangesAndAreDeterministic) {
  nn::ParameterLayout layout;
  const Encoder enc(small_encoder(), layout);
  std::vector<double> w(layout.size());
  std::mt19937_64 rng(2);
  std::normal_distribution<double> big(0.0, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    for (double& v : w) v = big(rng);
    const Matrix x = 10.0 * gradcheck::random_matrix(rng, 32, 2);
    const Vector a = enc.encode(w.data(), x);
    EXPECT_EQ(a, enc.encode(w.data(), x));
    EXPECT_GE(a(0), 0.5);
    EXPECT_LE(a(0), 2.5);
    EXPECT_GE(a(1), -0.2);
    EXPECT_LE(a(1), 2.2);
  }
  EXPECT_THROW(enc.encode(w.data(), Matrix::Zero(32, 3)), ShapeMismatch);
  EXPECT_THROW(enc.encode(w.data(), Matrix::Zero(30, 2)), ShapeMismatch);
}

TEST(Encoder, PaddedRangesExample) {
  const auto r = EncoderConfig::padded_ranges({{1.0, 3.0, 2.0}, {0.5}});
  ASSERT_EQ(r.size(), 2u);
  EXPECT_DOUBLE_EQ(r[0].min, 0.8);
  EXPECT_DOUBLE_EQ(r[0].max, 3.2);
  EXPECT_DOUBLE_EQ(r[1].min, 0.4);
  EXPECT_DOUBLE_EQ(r[1].max, 0.6);
  EXPECT_THROW(EncoderConfig::padded_ranges({{}}), InvalidInput);
}

TEST(GellMann, TracelessHermitianAndOrthogonal) {
  const auto basis = gell_mann_basis();
  for (std::size_t a = 0; a < 15; ++a) {
    EXPECT_LT(std::abs(basis[a].trace()), 1e-15);
    EXPECT_LT((basis[a] - basis[a].adjoint()).norm(), 1e-15);
    for (std::size_t b = 0; b < 15; ++b)
      EXPECT_NEAR((basis[a] * basis[b]).trace().real(), a == b ? 2.0 : 0.0, 1e-14);
  }
}

TEST(GellMann, CoordinateMapMatchesMatrix) {
  std::mt19937_64 rng(3);
  const auto& m = herm_coords_map();
  for (int trial = 0; trial < 20; ++trial) {
    const Vector v = gradcheck::random_vector(rng, 15);
    const ComplexMatrix4 h = herm(v);
    EXPECT_LT(std::abs(h.trace()), 1e-14);
    EXPECT_LT((h - h.adjoint()).norm(), 1e-14);
    const Coords want = PauliBasis::instance().to_coords(h);
    EXPECT_LT((want - m * v).norm(), 1e-13);
    EXPECT_EQ((m * v)(0), 0.0);
  }
  EXPECT_THROW(herm(Vector::Zero(14)), ShapeMismatch);
}

TEST(FlexDecoder, WithoutCorrectionEqualsUnconditionedIntegrator) {
  const DecoderConfig cfg = small_decoder(false);
  nn::ParameterLayout layout;
  const FlexDecoder dec(cfg, layout);
  EXPECT_EQ(layout.size(), 0u);
  SimConfig sim;
  sim.dt = cfg.dt;
  sim.total_time = cfg.total_time();
  sim.meas = cfg.meas[0];
  for (const auto& [om, ep] : std::vector<std::pair<double, double>>{{1.395, 1.0}, {0.7, 0.2}, {2.0, 1.8}}) {
    const Matrix v = dec.decode(nullptr, theta_of(om, ep));
    PhysicalParams p = known_params();
    p.omega = om;
    p.epsilon = ep;
    const auto points = integrate_unconditioned(sim, p);
    ASSERT_EQ(static_cast<std::size_t>(v.rows()), points.size());
    for (std::size_t n = 0; n < points.size(); ++n)
      for (std::size_t q = 0; q < 2; ++q)
        EXPECT_NEAR(v(Eigen::Index(n), Eigen::Index(q)), points[n].voltage[q], 1e-12);
  }
}

TEST(FlexDecoder, FrozenDynamicsGiveConstantVoltages) {
  DecoderConfig cfg = small_decoder(false, 64);
  cfg.known.kappa = 0.0;
  nn::ParameterLayout layout;
  const FlexDecoder dec(cfg, layout);
  const Matrix v = dec.decode(nullptr, theta_of(0.0, 0.0));
  for (Eigen::Index n = 0; n < v.rows(); ++n) EXPECT_EQ(v.row(n), v.row(0));
}

TEST(FlexDecoder, ZeroHeadMatchesBarePhysics) {
  nn::ParameterLayout with_layout, bare_layout;
  const FlexDecoder with(small_decoder(true), with_layout);
  const FlexDecoder bare(small_decoder(false), bare_layout);
  std::vector<double> w(with_layout.size());
  std::mt19937_64 rng(4);
  with.init(w.data(), rng);
  const Vector theta = theta_of(1.395, 0.9);
  EXPECT_EQ(with.decode(w.data(), theta), bare.decode(nullptr, theta));
}

TEST(FlexDecoder, StatesStayPhysicalForArbitraryWeights) {
  nn::ParameterLayout layout;
  const DecoderConfig cfg = small_decoder(true, 100);
  const FlexDecoder dec(cfg, layout);
  std::vector<double> w(layout.size());
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 3.0);
  const RealGenerator gen = LindbladDrift(cfg, cfg.meas[0]).generator(theta_of(1.395, 1.0));
  for (int trial = 0; trial < 100; ++trial) {
    for (double& v : w) v = n(rng);
    FlexCellState s = dec.initial_state(0);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      dec.step(w.data(), theta_of(1.395, 1.0), gen, 0, step, s);
      const ComplexMatrix4 rho = PauliBasis::instance().from_coords(s.r);
      ASSERT_NO_THROW(DensityMatrix::from_matrix(rho)) << "trial " << trial << " step " << step;
    }
  }
}

TEST(FlexDecoder, ParameterGradientMatchesFiniteDifferences) {
  for (bool correction : {false, true}) {
    nn::ParameterLayout layout;
    const FlexDecoder dec(small_decoder(correction, 64), layout);
    std::vector<double> w(layout.size());
    std::mt19937_64 rng(6);
    dec.init(w.data(), rng);
    if (correction) {
      std::uniform_real_distribution<double> u(-0.05, 0.05);
      for (double& v : w) v += u(rng);
    }
    const Matrix dv = gradcheck::random_matrix(rng, 64, 2);
    const Vector theta = theta_of(1.2, 0.7);
    FlexDecoder::Tape tape;
    dec.decode(w.data(), theta, &tape);
    std::vector<double> g(w.size(), 0.0);
    const Vector analytic = dec.backward(w.data(), g.data(), tape, dv);
    for (Eigen::Index j = 0; j < 2; ++j) {
      const double h = 1e-6;
      Vector tp = theta, tm = theta;
      tp(j) += h;
      tm(j) -= h;
      const double fd =
          ((dec.decode(w.data(), tp).cwiseProduct(dv)).sum() - (dec.decode(w.data(), tm).cwiseProduct(dv)).sum()) /
          (2.0 * h);
      EXPECT_LE(oracle::rel_err(analytic(j), fd, 1e-4), 1e-4) << "correction " << correction << " j " << j;
    }
  }
}

TEST(Model, EndToEndGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1, 2}) {
    EXPECT_LE(gradcheck::end_to_end(seed, true).worst, 1e-3);
    EXPECT_LE(gradcheck::end_to_end(seed, false).worst, 1e-3);
  }
}

TEST(Model, ConfigValidation) {
  ModelConfig c;
  c.encoder = small_encoder();
  EXPECT_NO_THROW(c.validate());
  c.decoder = small_decoder(false);
  EXPECT_THROW(c.validate(), InvalidInput);
  c.mode = Mode::Unsupervised;
  EXPECT_NO_THROW(c.validate());
  c.mode = Mode::UnsupervisedCorrected;
  EXPECT_THROW(c.validate(), InvalidInput);
  c.mode = Mode::Unsupervised;
  c.decoder->estimated = {Param::Omega};
  EXPECT_THROW(c.validate(), InvalidInput);
  c.decoder.reset();
  EXPECT_THROW(c.validate(), InvalidInput);
  c.mode = Mode::Supervised;
  c.encoder.param_ranges[0] = {1.0, 1.0};
  EXPECT_THROW(c.validate(), InvalidInput);
  EXPECT_THROW(parse_mode("semi"), InvalidInput);
  EXPECT_EQ(parse_mode("unsupervised_with_correction"), Mode::UnsupervisedCorrected);
}

TEST(Model, SaveLoadRoundTrip) {
  ModelConfig c;
  c.mode = Mode::UnsupervisedCorrected;
  c.encoder = small_encoder();
  c.decoder = small_decoder(true);
  c.decoder->meas = {MeasurementConfig::spin_up_along_measurement(Axis::Z, Axis::Y),
                     MeasurementConfig::spin_up_along_measurement(Axis::X, Axis::X)};
  c.encoder.input_channels = 4;
  Model m(c);
  m.init(77);
  std::mt19937_64 rng(8);
  for (double& v : m.weights()) v += std::normal_distribution<double>(0.0, 0.1)(rng);
  const auto dir = testutil::scratch_dir("ae_model");
  m.save(dir / "m.ckpt", {{"note", "x"}});
  const Model back = Model::load(dir / "m.ckpt");
  EXPECT_EQ(back.weights(), m.weights());
  EXPECT_EQ(back.seed(), 77u);
  EXPECT_EQ(back.config().to_json(), m.config().to_json());
  const Matrix x = gradcheck::random_matrix(rng, 64, 4);
  EXPECT_EQ(back.encode(x), m.encode(x));
  const Vector theta = theta_of(1.0, 1.0);
  EXPECT_EQ(back.decoder()->decode(back.weights().data(), theta), m.decoder()->decode(m.weights().data(), theta));
  EXPECT_THROW(Model::load(dir / "missing.ckpt"), IoError);
}
