#pragma once

// Two-qubit operator algebra: Paulis, the model Hamiltonian, the Lindblad and
// measurement superoperators, and projection onto physical density matrices.
//
// Basis order is |00>, |01>, |10>, |11> with qubit 1 as the left tensor factor.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <numeric>
#include <string>

#include "hamlearn/error.hpp"

namespace hamlearn {

using Complex = std::complex<double>;
using ComplexMatrix4 = Eigen::Matrix<Complex, 4, 4>;
using ComplexVector4 = Eigen::Matrix<Complex, 4, 1>;

enum class Axis { X, Y, Z };

inline char axis_name(Axis a) {
  switch (a) {
    case Axis::X: return 'X';
    case Axis::Y: return 'Y';
    case Axis::Z: return 'Z';
  }
  return '?';
}

inline Axis parse_axis(const std::string& s) {
  if (s == "X" || s == "x") return Axis::X;
  if (s == "Y" || s == "y") return Axis::Y;
  if (s == "Z" || s == "z") return Axis::Z;
  throw InvalidInput("unknown measurement axis '" + s + "'");
}

namespace detail {

inline Eigen::Matrix2cd single_qubit_pauli(Axis a) {
  using namespace std::complex_literals;
  Eigen::Matrix2cd m;
  switch (a) {
    case Axis::X: m << 0.0, 1.0, 1.0, 0.0; break;
    case Axis::Y: m << 0.0, -1.0i, 1.0i, 0.0; break;
    case Axis::Z: m << 1.0, 0.0, 0.0, -1.0; break;
  }
  return m;
}

inline ComplexMatrix4 kron(const Eigen::Matrix2cd& a, const Eigen::Matrix2cd& b) {
  ComplexMatrix4 out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) out(2 * i + k, 2 * j + l) = a(i, j) * b(k, l);
  return out;
}

}  // namespace detail

/// sigma_axis acting on `qubit` (1 or 2), identity on the other.
inline ComplexMatrix4 pauli(int qubit, Axis axis) {
  const Eigen::Matrix2cd id = Eigen::Matrix2cd::Identity();
  const Eigen::Matrix2cd s = detail::single_qubit_pauli(axis);
  if (qubit == 1) return detail::kron(s, id);
  if (qubit == 2) return detail::kron(id, s);
  throw InvalidInput("qubit index must be 1 or 2, got " + std::to_string(qubit));
}

/// (X - iY)/2 on `qubit`; maps |0> (spin-up along Z) to |1>.
inline ComplexMatrix4 lowering(int qubit) {
  using namespace std::complex_literals;
  return 0.5 * (pauli(qubit, Axis::X) - 1.0i * pauli(qubit, Axis::Y));
}

struct PhysicalParams {
  double omega = 0.0;    // radians/us
  double epsilon = 0.0;  // radians/us
  double kappa = 0.0;    // radians/us
  double eta = 0.0;
  double gamma_s = 0.0;  // radians/us

  void validate() const {
    if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidInput("eta must lie in [0, 1]");
    if (!(kappa >= 0.0)) throw InvalidInput("kappa must be non-negative");
    if (!(gamma_s >= 0.0)) throw InvalidInput("gamma_s must be non-negative");
    if (!std::isfinite(omega) || !std::isfinite(epsilon)) throw InvalidInput("omega/epsilon must be finite");
  }
};

/// H = (omega/2)(X1 + X2) + epsilon Z1 Z2.
inline ComplexMatrix4 build_hamiltonian(const PhysicalParams& p) {
  return 0.5 * p.omega * (pauli(1, Axis::X) + pauli(2, Axis::X)) +
         p.epsilon * pauli(1, Axis::Z) * pauli(2, Axis::Z);
}

/// D[L](rho) = L rho L^dag - 1/2 {L^dag L, rho}.
inline ComplexMatrix4 lindblad_dissipator(const ComplexMatrix4& L, const ComplexMatrix4& rho) {
  const ComplexMatrix4 LdL = L.adjoint() * L;
  return L * rho * L.adjoint() - 0.5 * (LdL * rho + rho * LdL);
}

/// H[L](rho) = L rho + rho L^dag - rho tr(rho (L + L^dag)).  Not linear in rho.
inline ComplexMatrix4 measurement_superop(const ComplexMatrix4& L, const ComplexMatrix4& rho) {
  const Complex tr = (rho * (L + L.adjoint())).trace();
  return L * rho + rho * L.adjoint() - rho * tr;
}

/// tr(rho (L + L^dag)); the imaginary part vanishes for Hermitian rho.
inline double expectation(const ComplexMatrix4& L, const ComplexMatrix4& rho) {
  return (rho * (L + L.adjoint())).trace().real();
}

inline double max_hermitian_defect(const ComplexMatrix4& m) { return (m - m.adjoint()).cwiseAbs().maxCoeff(); }

/// Euclidean projection of `values` onto the probability simplex (sort-based).
template <std::size_t N>
std::array<double, N> project_to_simplex(const std::array<double, N>& values) {
  std::array<double, N> sorted = values;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    cumulative += sorted[k];
    const double candidate = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] - candidate > 0.0) tau = candidate;
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = std::max(values[i] - tau, 0.0);
  return out;
}

class DensityMatrix;
DensityMatrix project_to_density(const ComplexMatrix4& m);

/// A 4x4 Hermitian, unit-trace, positive semidefinite matrix.
class DensityMatrix {
 public:
  static constexpr double kHermitianTol = 1e-12;
  static constexpr double kTraceTol = 1e-10;
  static constexpr double kEigenTol = -1e-10;

  DensityMatrix() : m_(ComplexMatrix4::Identity() / 4.0) {}

  /// Throws InvalidInput if `m` violates any invariant.
  static DensityMatrix from_matrix(const ComplexMatrix4& m) {
    std::string why;
    if (!satisfies_invariants(m, &why)) throw InvalidInput("not a density matrix: " + why);
    return DensityMatrix(m);
  }

  /// For matrices already known to be valid (e.g. fresh projections).
  static DensityMatrix trusted(const ComplexMatrix4& m) { return DensityMatrix(m); }

  static DensityMatrix pure(const ComplexVector4& psi) {
    const ComplexVector4 n = psi / psi.norm();
    return DensityMatrix(n * n.adjoint());
  }

  static bool satisfies_invariants(const ComplexMatrix4& m, std::string* why = nullptr) {
    auto fail = [&](const char* msg) {
      if (why) *why = msg;
      return false;
    };
    if (!m.allFinite()) return fail("non-finite entries");
    if (max_hermitian_defect(m) > kHermitianTol) return fail("not Hermitian");
    if (std::abs(m.trace() - Complex(1.0)) > kTraceTol) return fail("trace differs from 1");
    Eigen::SelfAdjointEigenSolver<ComplexMatrix4> es(m, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < kEigenTol) return fail("negative eigenvalue");
    return true;
  }

  const ComplexMatrix4& matrix() const { return m_; }
  Complex operator()(int r, int c) const { return m_(r, c); }
  double purity() const { return (m_ * m_).trace().real(); }

 private:
  explicit DensityMatrix(const ComplexMatrix4& m) : m_(m) {}
  ComplexMatrix4 m_;
};

/// Nearest (Frobenius) unit-trace PSD matrix to the Hermitian part of `m`.
inline DensityMatrix project_to_density(const ComplexMatrix4& m) {
  if (!m.allFinite()) throw InvalidInput("project_to_density: non-finite input");
  const ComplexMatrix4 h = 0.5 * (m + m.adjoint());

  // When the trace-corrected matrix is positive definite the simplex step is a
  // uniform eigenvalue shift, so no eigendecomposition is needed.
  const double shift = (h.trace().real() - 1.0) / 4.0;
  ComplexMatrix4 shifted = h;
  shifted.diagonal().array() -= shift;
  Eigen::LLT<ComplexMatrix4> llt(shifted);
  if (llt.info() == Eigen::Success) return DensityMatrix::trusted(shifted);

  Eigen::SelfAdjointEigenSolver<ComplexMatrix4> es(h);
  if (es.info() != Eigen::Success) throw InvalidInput("project_to_density: eigendecomposition failed");
  std::array<double, 4> mu{};
  for (int i = 0; i < 4; ++i) mu[i] = es.eigenvalues()(i);
  const auto lambda = project_to_simplex(mu);
  Eigen::Vector4d diag(lambda[0], lambda[1], lambda[2], lambda[3]);
  const ComplexMatrix4& v = es.eigenvectors();
  ComplexMatrix4 out = v * diag.cast<Complex>().asDiagonal() * v.adjoint();
  out = 0.5 * (out + out.adjoint());
  return DensityMatrix::trusted(out);
}

inline ComplexVector4 spin_up(Axis q1, Axis q2) {
  using namespace std::complex_literals;
  auto single = [](Axis a) {
    Eigen::Vector2cd v;
    switch (a) {
      case Axis::X: v << 1.0, 1.0; break;
      case Axis::Y: v << 1.0, 1.0i; break;
      case Axis::Z: v << 1.0, 0.0; break;
    }
    return Eigen::Vector2cd(v / v.norm());
  };
  const Eigen::Vector2cd a = single(q1), b = single(q2);
  ComplexVector4 out;
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k) out(2 * i + k) = a(i) * b(k);
  return out;
}

struct MeasurementConfig {
  std::array<Axis, 2> axes{Axis::X, Axis::Y};
  DensityMatrix initial_state = DensityMatrix::pure(spin_up(Axis::X, Axis::Y));

  /// Both qubits start spin-up along their own measurement axis.
  static MeasurementConfig spin_up_along_measurement(Axis q1, Axis q2) {
    return MeasurementConfig{{q1, q2}, DensityMatrix::pure(spin_up(q1, q2))};
  }

  /// Measurement collapse operator C_i for qubit i (1-based).
  ComplexMatrix4 collapse(int qubit) const { return pauli(qubit, axes[static_cast<std::size_t>(qubit - 1)]); }
};

}  // namespace hamlearn
