#include <gtest/gtest.h>

#include <random>

#include "hamlearn/pauli_coords.hpp"
#include "hamlearn/quantum.hpp"
#include "oracles.hpp"

using namespace hamlearn;
using namespace std::complex_literals;

namespace {

PhysicalParams reference_params(double epsilon = 1.0) {
  PhysicalParams p;
  p.omega = 1.395;
  p.epsilon = epsilon;
  p.kappa = 3.326;
  p.eta = 0.1469;
  return p;
}

double max_abs(const ComplexMatrix4& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Pauli, AlgebraRelations) {
  for (int q : {1, 2}) {
    const auto x = pauli(q, Axis::X), y = pauli(q, Axis::Y), z = pauli(q, Axis::Z);
    EXPECT_LT(max_abs(x * x - ComplexMatrix4::Identity()), 1e-15);
    EXPECT_LT(max_abs(x * y - 1.0i * z), 1e-15);
    EXPECT_LT(max_abs(y * z - 1.0i * x), 1e-15);
  }
  EXPECT_LT(max_abs(pauli(1, Axis::X) * pauli(2, Axis::Y) - pauli(2, Axis::Y) * pauli(1, Axis::X)), 1e-15);
  EXPECT_THROW(pauli(3, Axis::X), InvalidInput);
}

TEST(Pauli, LoweringMapsUpToDown) {
  ComplexVector4 up = spin_up(Axis::Z, Axis::Z);
  ComplexVector4 expected = ComplexVector4::Zero();
  expected(2) = 1.0;  // |10>
  EXPECT_LT((lowering(1) * up - expected).norm(), 1e-15);
  EXPECT_LT((lowering(1) * expected).norm(), 1e-15);
}

TEST(Hamiltonian, HermitianWithExpectedSpectrumAtZeroDrive) {
  PhysicalParams p = reference_params(0.7);
  EXPECT_LT(max_hermitian_defect(build_hamiltonian(p)), 1e-15);
  p.omega = 0.0;
  const auto h = build_hamiltonian(p);
  EXPECT_NEAR(h(0, 0).real(), 0.7, 1e-15);
  EXPECT_NEAR(h(1, 1).real(), -0.7, 1e-15);
}

TEST(Superoperators, MatchVectorizedOracleOnRandomStates) {
  std::mt19937_64 rng(11);
  const PhysicalParams p = reference_params();
  const ComplexMatrix4 h = build_hamiltonian(p);
  for (auto axes : {std::array<Axis, 2>{Axis::X, Axis::Y}, std::array<Axis, 2>{Axis::Z, Axis::X}}) {
    MeasurementConfig meas{axes, DensityMatrix::pure(spin_up(axes[0], axes[1]))};
    const ComplexMatrix4 l1 = std::sqrt(p.kappa) * meas.collapse(1);
    const ComplexMatrix4 l2 = std::sqrt(p.kappa) * meas.collapse(2);
    const auto gen = oracle::lindblad_generator(h, {l1, l2});
    const auto d1 = oracle::dissipator_generator(l1);
    const auto b1 = oracle::backaction_generator(l1);
    for (int trial = 0; trial < 200; ++trial) {
      const ComplexMatrix4 rho = oracle::random_density(rng);
      const auto v = oracle::vec(rho);
      EXPECT_LT(max_abs(lindblad_dissipator(l1, rho) - oracle::unvec(d1 * v)), 1e-12);
      const ComplexMatrix4 lin = oracle::unvec(b1 * v);
      EXPECT_LT(max_abs(measurement_superop(l1, rho) - (lin - rho * lin.trace())), 1e-12);
      const ComplexMatrix4 ours =
          -1.0i * (h * rho - rho * h) + lindblad_dissipator(l1, rho) + lindblad_dissipator(l2, rho);
      EXPECT_LT(max_abs(ours - oracle::unvec(gen * v)), 1e-12);
    }
  }
}

TEST(Superoperators, DissipatorIsTracelessAndHermitian) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const ComplexMatrix4 rho = oracle::random_density(rng);
    const ComplexMatrix4 l = oracle::random_ginibre(rng);
    const ComplexMatrix4 d = lindblad_dissipator(l, rho);
    EXPECT_LT(std::abs(d.trace()), 1e-12);
    EXPECT_LT(max_hermitian_defect(d), 1e-12);
    EXPECT_LT(std::abs(measurement_superop(l, rho).trace()), 1e-12);
  }
}

TEST(Simplex, ExamplesAndOracle) {
  const auto a = project_to_simplex<3>({0.5, 0.5, 0.5});
  for (double v : a) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const auto b = project_to_simplex<2>({2.0, 0.0});
  EXPECT_DOUBLE_EQ(b[0], 1.0);
  EXPECT_DOUBLE_EQ(b[1], 0.0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::array<double, 4> mu{n(rng), n(rng), n(rng), n(rng)};
    const auto got = project_to_simplex(mu);
    const auto want = oracle::simplex_by_enumeration({mu.begin(), mu.end()});
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Projection, MatchesEnumerationOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const ComplexMatrix4 m = oracle::random_hermitian(rng, 0.6) + ComplexMatrix4::Identity() * 0.25;
    const ComplexMatrix4 got = project_to_density(m).matrix();
    EXPECT_LT((got - oracle::density_projection(m)).norm(), 1e-10);
    EXPECT_TRUE(DensityMatrix::satisfies_invariants(got));
  }
}

TEST(Projection, FixesValidStatesAndIsIdempotent) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const ComplexMatrix4 rho = oracle::random_density(rng);
    EXPECT_LT((project_to_density(rho).matrix() - rho).norm(), 1e-12);
    const ComplexMatrix4 p = project_to_density(oracle::random_hermitian(rng)).matrix();
    EXPECT_LT((project_to_density(p).matrix() - p).norm(), 1e-12);
  }
  ComplexMatrix4 bad = ComplexMatrix4::Identity();
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(project_to_density(bad), InvalidInput);
}

TEST(DensityMatrix, RejectsInvalidMatrices) {
  ComplexMatrix4 m = ComplexMatrix4::Identity() / 4.0;
  EXPECT_NO_THROW(DensityMatrix::from_matrix(m));
  EXPECT_THROW(DensityMatrix::from_matrix(ComplexMatrix4::Identity()), InvalidInput);
  m(0, 1) = 0.1;
  EXPECT_THROW(DensityMatrix::from_matrix(m), InvalidInput);
  ComplexMatrix4 neg = ComplexMatrix4::Zero();
  neg(0, 0) = 1.5;
  neg(1, 1) = -0.5;
  EXPECT_THROW(DensityMatrix::from_matrix(neg), InvalidInput);
}

TEST(DensityMatrix, InitialStatesArePure) {
  for (Axis a : {Axis::X, Axis::Y, Axis::Z}) {
    const auto cfg = MeasurementConfig::spin_up_along_measurement(a, Axis::Z);
    EXPECT_NEAR(cfg.initial_state.purity(), 1.0, 1e-14);
    EXPECT_NEAR(expectation(cfg.collapse(1), cfg.initial_state.matrix()), 2.0, 1e-14);
  }
}

TEST(PauliCoords, RoundTripAndRepresentation) {
  std::mt19937_64 rng(13);
  const auto& basis = PauliBasis::instance();
  const ComplexMatrix4 h = build_hamiltonian(reference_params());
  const auto ops = ModelOperators::build(MeasurementConfig{});
  const PhysicalParams p = reference_params();
  const RealGenerator g = ops.generator(p, false);
  const auto gen = oracle::lindblad_generator(
      h, {std::sqrt(p.kappa) * pauli(1, Axis::X), std::sqrt(p.kappa) * pauli(2, Axis::Y)});
  for (int trial = 0; trial < 100; ++trial) {
    const ComplexMatrix4 rho = oracle::random_density(rng);
    const Coords r = basis.to_coords(rho);
    EXPECT_NEAR(r(0), 1.0, 1e-14);
    EXPECT_LT((basis.from_coords(r) - rho).norm(), 1e-14);
    const ComplexMatrix4 drift = basis.from_coords(g * r);
    EXPECT_LT(max_abs(drift - oracle::unvec(gen * oracle::vec(rho))), 1e-12);
  }
  EXPECT_LT(g.row(0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PauliCoords, ProjectCoordsAgreesWithMatrixProjection) {
  std::mt19937_64 rng(17);
  const auto& basis = PauliBasis::instance();
  for (int trial = 0; trial < 200; ++trial) {
    const ComplexMatrix4 m = oracle::random_hermitian(rng, 0.4) + ComplexMatrix4::Identity() * 0.25;
    Coords r = basis.to_coords(m);
    project_coords(r);
    EXPECT_LT((basis.from_coords(r) - oracle::density_projection(m)).norm(), 1e-10);
  }
}

TEST(Hamiltonian, ExamplesAndSpectrum) {
  PhysicalParams zero;
  EXPECT_LT(max_abs(build_hamiltonian(zero)), 1e-15);
  const auto h = build_hamiltonian(reference_params());
  const ComplexMatrix4 want = 0.6975 * (pauli(1, Axis::X) + pauli(2, Axis::X)) + pauli(1, Axis::Z) * pauli(2, Axis::Z);
  EXPECT_LT(max_abs(h - want), 1e-15);
  // Eigenvalues from a general eigensolver agree with the Hermitian one.
  Eigen::ComplexEigenSolver<ComplexMatrix4> general(h);
  std::vector<double> a;
  for (int i = 0; i < 4; ++i) a.push_back(general.eigenvalues()(i).real());
  std::sort(a.begin(), a.end());
  Eigen::SelfAdjointEigenSolver<ComplexMatrix4> herm(h);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(a[static_cast<std::size_t>(i)], herm.eigenvalues()(i), 1e-12);
}

TEST(Superoperators, DissipatorAndMeasurementExamples) {
  const double kappa = 3.326;
  const ComplexMatrix4 l = std::sqrt(kappa) * pauli(1, Axis::Z);
  const ComplexMatrix4 mixed = ComplexMatrix4::Identity() / 4.0;
  EXPECT_LT(max_abs(lindblad_dissipator(l, mixed)), 1e-15);
  const ComplexMatrix4 plus_x = (ComplexMatrix4::Identity() + pauli(1, Axis::X)) / 4.0;
  EXPECT_LT(max_abs(lindblad_dissipator(l, plus_x) + kappa * pauli(1, Axis::X) / 2.0), 1e-14);
  ComplexMatrix4 up = ComplexMatrix4::Zero();
  up(0, 0) = 1.0;
  EXPECT_LT(max_abs(measurement_superop(l, up)), 1e-15);
  EXPECT_LT(max_abs(measurement_superop(l, mixed) - std::sqrt(kappa) / 2.0 * pauli(1, Axis::Z)), 1e-15);
  EXPECT_NEAR(expectation(l, up), 2.0 * std::sqrt(kappa), 1e-14);
  EXPECT_NEAR(expectation(l, mixed), 0.0, 1e-15);
}

TEST(Superoperators, ExpectationMatchesEntrywiseSum) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const ComplexMatrix4 rho = oracle::random_density(rng);
    const ComplexMatrix4 l = oracle::random_ginibre(rng);
    const ComplexMatrix4 a = l + l.adjoint();
    Complex acc = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) acc += rho(i, j) * a(j, i);
    EXPECT_NEAR(expectation(l, rho), acc.real(), 1e-12);
  }
}

TEST(Superoperators, LinearityOfDissipatorOnly) {
  std::mt19937_64 rng(29);
  const ComplexMatrix4 l = oracle::random_ginibre(rng);
  const ComplexMatrix4 r1 = oracle::random_density(rng), r2 = oracle::random_density(rng);
  const double a = 0.3, b = -1.7;
  EXPECT_LT(max_abs(lindblad_dissipator(l, a * r1 + b * r2) -
                    (a * lindblad_dissipator(l, r1) + b * lindblad_dissipator(l, r2))),
            1e-12);
  EXPECT_GT(max_abs(measurement_superop(l, a * r1 + b * r2) -
                    (a * measurement_superop(l, r1) + b * measurement_superop(l, r2))),
            1e-3);
}

TEST(Superoperators, HermiticityAndTraceSweep) {
  std::mt19937_64 rng(31);
  const ComplexMatrix4 h = build_hamiltonian(reference_params());
  for (int trial = 0; trial < 1000; ++trial) {
    const ComplexMatrix4 rho = oracle::random_density(rng);
    const ComplexMatrix4 l = std::sqrt(3.326) * pauli(1 + trial % 2, static_cast<Axis>(trial % 3));
    const ComplexMatrix4 d = lindblad_dissipator(l, rho);
    const ComplexMatrix4 m = measurement_superop(l, rho);
    EXPECT_LE(max_hermitian_defect(d), 1e-10);
    EXPECT_LE(max_hermitian_defect(m), 1e-10);
    EXPECT_LE(max_hermitian_defect(ComplexMatrix4(-1.0i * (h * rho - rho * h))), 1e-10);
    EXPECT_LE(std::abs(d.trace()), 1e-10);
    EXPECT_LE(std::abs(m.trace()), 1e-10);
  }
}

TEST(Projection, DocumentedSpectrumExample) {
  std::mt19937_64 rng(37);
  const ComplexMatrix4 u = Eigen::HouseholderQR<ComplexMatrix4>(oracle::random_ginibre(rng)).householderQ();
  const Eigen::Vector4d mu(0.6, 0.5, 0.0, -0.1);
  const ComplexMatrix4 m = u * mu.cast<Complex>().asDiagonal() * u.adjoint();
  const Eigen::Vector4d want(0.55, 0.45, 0.0, 0.0);
  const ComplexMatrix4 expected = u * want.cast<Complex>().asDiagonal() * u.adjoint();
  EXPECT_LT((project_to_density(m).matrix() - expected).norm(), 1e-12);
}

TEST(Projection, NoRandomDensityMatrixIsCloser) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    const ComplexMatrix4 m = oracle::random_hermitian(rng, 0.5);
    const double best = (m - project_to_density(m).matrix()).norm();
    for (int s = 0; s < 10000; ++s) {
      // Mix random states with the projection so samples also land nearby.
      const double w = static_cast<double>(s % 100) / 100.0;
      const ComplexMatrix4 rho = w * oracle::random_density(rng) + (1.0 - w) * project_to_density(m).matrix();
      EXPECT_GE((m - rho).norm(), best - 1e-12);
    }
  }
}

TEST(PauliCoords, ProjectionJacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(43);
  std::normal_distribution<double> n01(0.0, 1.0);
  const auto& basis = PauliBasis::instance();
  const auto projected = [](Coords r) {
    project_coords(r);
    return r;
  };
  int eigen_path = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Coords u;
    if (trial % 2 == 0) {
      u = basis.to_coords(oracle::random_hermitian(rng, 0.5));
    } else {
      // A pure state pushed slightly off the manifold, as in the first decoder step.
      const ComplexMatrix4 rho = oracle::random_density(rng);
      Eigen::SelfAdjointEigenSolver<ComplexMatrix4> es(rho);
      const ComplexMatrix4 pure = es.eigenvectors().col(3) * es.eigenvectors().col(3).adjoint();
      u = basis.to_coords(ComplexMatrix4(pure + 0.05 * oracle::random_hermitian(rng, 1.0)));
    }
    Coords shifted = u;
    if (!project_coords(shifted)) ++eigen_path;
    Coords v, w;
    for (int k = 0; k < 16; ++k) {
      v(k) = n01(rng);
      w(k) = n01(rng);
    }
    const double h = 1e-7;
    const Coords fd = (projected(u + h * v) - projected(u - h * v)) / (2.0 * h);
    const Coords jv = project_coords_jacobian(u, v);
    EXPECT_LE((fd - jv).norm(), 1e-5 * std::max(1.0, jv.norm())) << "trial " << trial;
    EXPECT_NEAR(w.dot(jv), v.dot(project_coords_jacobian(u, w)), 1e-10);
  }
  EXPECT_GT(eigen_path, 50);
}
