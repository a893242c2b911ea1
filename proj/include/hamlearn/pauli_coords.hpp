#pragma once

// Real coordinates for Hermitian 4x4 matrices in the two-qubit Pauli-string
// basis: rho = (1/4) sum_k r_k P_k with r_k = tr(P_k rho), P_{4a+b} = s_a (x) s_b
// and s_0..s_3 = I, X, Y, Z.  Hermiticity-preserving superoperators become real
// 16x16 matrices, which is what the simulator and decoder inner loops use.

#include <Eigen/Dense>

#include <array>
#include <vector>

#include "hamlearn/quantum.hpp"

namespace hamlearn {

using Coords = Eigen::Matrix<double, 16, 1>;
using RealGenerator = Eigen::Matrix<double, 16, 16>;

class PauliBasis {
 public:
  static const PauliBasis& instance() {
    static const PauliBasis basis;
    return basis;
  }

  const ComplexMatrix4& element(int k) const { return elements_[static_cast<std::size_t>(k)]; }

  Coords to_coords(const ComplexMatrix4& m) const {
    Coords r;
    for (int k = 0; k < 16; ++k) {
      Complex acc = 0.0;
      for (const auto& e : entries_[static_cast<std::size_t>(k)]) acc += e.value * m(e.col, e.row);
      r(k) = acc.real();
    }
    return r;
  }

  ComplexMatrix4 from_coords(const Coords& r) const {
    ComplexMatrix4 m = ComplexMatrix4::Zero();
    for (int k = 0; k < 16; ++k)
      for (const auto& e : entries_[static_cast<std::size_t>(k)]) m(e.row, e.col) += 0.25 * r(k) * e.value;
    return m;
  }

  /// Real matrix of a Hermiticity-preserving linear map acting on coordinates.
  template <class Superop>
  RealGenerator represent(Superop&& op) const {
    RealGenerator g;
    for (int k = 0; k < 16; ++k) g.col(k) = 0.25 * to_coords(op(elements_[static_cast<std::size_t>(k)]));
    return g;
  }

  /// Row vector a with a . r = Re tr(A rho).
  Coords functional(const ComplexMatrix4& a) const {
    Coords f;
    for (int k = 0; k < 16; ++k) f(k) = 0.25 * (a * elements_[static_cast<std::size_t>(k)]).trace().real();
    return f;
  }

 private:
  struct Entry {
    int row;
    int col;
    Complex value;
  };

  PauliBasis() {
    const std::array<Eigen::Matrix2cd, 4> single = {Eigen::Matrix2cd::Identity(), detail::single_qubit_pauli(Axis::X),
                                                    detail::single_qubit_pauli(Axis::Y),
                                                    detail::single_qubit_pauli(Axis::Z)};
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) {
        const auto k = static_cast<std::size_t>(4 * a + b);
        elements_[k] = detail::kron(single[static_cast<std::size_t>(a)], single[static_cast<std::size_t>(b)]);
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j)
            if (elements_[k](i, j) != Complex(0.0)) entries_[k].push_back({i, j, elements_[k](i, j)});
      }
  }

  std::array<ComplexMatrix4, 16> elements_;
  std::array<std::vector<Entry>, 16> entries_;
};

inline Coords to_coords(const DensityMatrix& rho) { return PauliBasis::instance().to_coords(rho.matrix()); }

/// Projection applied in coordinate space.  Returns true when the cheap
/// trace-shift path was sufficient (the projection is then affine).
inline bool project_coords(Coords& r) {
  if (!r.allFinite()) throw InvalidInput("project_coords: non-finite input");
  const auto& basis = PauliBasis::instance();
  Coords shifted = r;
  shifted(0) = 1.0;
  const ComplexMatrix4 m = basis.from_coords(shifted);
  Eigen::LLT<ComplexMatrix4> llt(m);
  if (llt.info() == Eigen::Success) {
    r = shifted;
    return true;
  }
  r = basis.to_coords(project_to_density(basis.from_coords(r)).matrix());
  return false;
}

/// Jacobian of project_coords at the pre-projection point `u`, applied to `v`.
/// The Jacobian of a Euclidean projection onto a convex set is symmetric, so
/// the same map serves forward and reverse mode.
inline Coords project_coords_jacobian(const Coords& u, const Coords& v) {
  const auto& basis = PauliBasis::instance();
  Coords shifted = u;
  shifted(0) = 1.0;
  Eigen::LLT<ComplexMatrix4> llt(basis.from_coords(shifted));
  if (llt.info() == Eigen::Success) {
    Coords out = v;
    out(0) = 0.0;
    return out;
  }
  const ComplexMatrix4 h = basis.from_coords(u);
  Eigen::SelfAdjointEigenSolver<ComplexMatrix4> es(0.5 * (h + h.adjoint()));
  if (es.info() != Eigen::Success) throw InvalidInput("project_coords_jacobian: eigendecomposition failed");
  std::array<double, 4> mu{};
  for (int i = 0; i < 4; ++i) mu[static_cast<std::size_t>(i)] = es.eigenvalues()(i);
  const auto lambda = project_to_simplex(mu);
  std::array<bool, 4> active{};
  double n_active = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    active[i] = lambda[i] > 0.0;
    n_active += active[i] ? 1.0 : 0.0;
  }
  const ComplexMatrix4& vecs = es.eigenvectors();
  ComplexMatrix4 e = vecs.adjoint() * basis.from_coords(v) * vecs;
  double active_diag = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    if (active[i]) active_diag += e(Eigen::Index(i), Eigen::Index(i)).real();
  const double scale = std::max(1.0, std::abs(mu[0]) + std::abs(mu[3]));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const auto a = Eigen::Index(i), b = Eigen::Index(j);
      if (i == j) {
        e(a, a) = active[i] ? e(a, a).real() - active_diag / n_active : 0.0;
      } else if (std::abs(mu[i] - mu[j]) > 1e-12 * scale) {
        e(a, b) *= (lambda[i] - lambda[j]) / (mu[i] - mu[j]);
      } else {
        e(a, b) *= (active[i] && active[j]) ? 1.0 : 0.0;
      }
    }
  return basis.to_coords(vecs * e * vecs.adjoint());
}

/// Lindblad generator and measurement maps of the two-qubit model, split into
/// parts that scale with each physical parameter.
struct ModelOperators {
  RealGenerator unit_omega;        // -i[(X1+X2)/2, .]
  RealGenerator unit_epsilon;      // -i[Z1 Z2, .]
  RealGenerator unit_dephasing;    // sum_i D[C_i]
  RealGenerator unit_relaxation;   // sum_i D[sigma_i^-]
  std::array<RealGenerator, 2> unit_backaction;  // rho -> C_i rho + rho C_i
  std::array<Coords, 2> unit_signal;             // r -> tr(rho (C_i + C_i^dag))

  static ModelOperators build(const MeasurementConfig& meas) {
    using namespace std::complex_literals;
    const auto& basis = PauliBasis::instance();
    ModelOperators ops;
    const ComplexMatrix4 hx = 0.5 * (pauli(1, Axis::X) + pauli(2, Axis::X));
    const ComplexMatrix4 hzz = pauli(1, Axis::Z) * pauli(2, Axis::Z);
    ops.unit_omega = basis.represent([&](const ComplexMatrix4& p) { return ComplexMatrix4(-1.0i * (hx * p - p * hx)); });
    ops.unit_epsilon =
        basis.represent([&](const ComplexMatrix4& p) { return ComplexMatrix4(-1.0i * (hzz * p - p * hzz)); });
    const ComplexMatrix4 c1 = meas.collapse(1), c2 = meas.collapse(2);
    ops.unit_dephasing = basis.represent([&](const ComplexMatrix4& p) {
      return ComplexMatrix4(lindblad_dissipator(c1, p) + lindblad_dissipator(c2, p));
    });
    const ComplexMatrix4 s1 = lowering(1), s2 = lowering(2);
    ops.unit_relaxation = basis.represent([&](const ComplexMatrix4& p) {
      return ComplexMatrix4(lindblad_dissipator(s1, p) + lindblad_dissipator(s2, p));
    });
    const std::array<ComplexMatrix4, 2> cs = {c1, c2};
    for (std::size_t i = 0; i < 2; ++i) {
      const ComplexMatrix4 c = cs[i];
      ops.unit_backaction[i] =
          basis.represent([&](const ComplexMatrix4& p) { return ComplexMatrix4(c * p + p * c.adjoint()); });
      ops.unit_signal[i] = basis.functional(c + c.adjoint());
    }
    return ops;
  }

  RealGenerator generator(const PhysicalParams& p, bool include_relaxation) const {
    RealGenerator g = p.omega * unit_omega + p.epsilon * unit_epsilon + p.kappa * unit_dephasing;
    if (include_relaxation) g += p.gamma_s * unit_relaxation;
    return g;
  }
};

}  // namespace hamlearn
