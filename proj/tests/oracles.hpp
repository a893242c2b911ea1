#pragma once

// Independent reference computations used by the unit and acceptance tests.
// They deliberately avoid the library's own code paths: superoperators are
// built as explicit 16x16 column-stacking matrices, density projection uses a
// general (non-Hermitian) eigensolver plus exhaustive support enumeration.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <random>
#include <vector>

#include "hamlearn/quantum.hpp"

namespace oracle {

using hamlearn::Complex;
using hamlearn::ComplexMatrix4;
using Matrix16c = Eigen::Matrix<Complex, 16, 16>;
using Vector16c = Eigen::Matrix<Complex, 16, 1>;

inline ComplexMatrix4 random_ginibre(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ComplexMatrix4 g;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) g(i, j) = Complex(n(rng), n(rng));
  return g;
}

inline ComplexMatrix4 random_density(std::mt19937_64& rng) {
  const ComplexMatrix4 g = random_ginibre(rng);
  ComplexMatrix4 rho = g * g.adjoint();
  rho /= rho.trace();
  return 0.5 * (rho + rho.adjoint());
}

inline ComplexMatrix4 random_hermitian(std::mt19937_64& rng, double scale = 1.0) {
  const ComplexMatrix4 g = random_ginibre(rng);
  return scale * 0.5 * (g + g.adjoint());
}

inline Vector16c vec(const ComplexMatrix4& m) {
  Vector16c v;
  for (int c = 0; c < 4; ++c)
    for (int r = 0; r < 4; ++r) v(4 * c + r) = m(r, c);
  return v;
}

inline ComplexMatrix4 unvec(const Vector16c& v) {
  ComplexMatrix4 m;
  for (int c = 0; c < 4; ++c)
    for (int r = 0; r < 4; ++r) m(r, c) = v(4 * c + r);
  return m;
}

/// kron(A, B) for 4x4 factors.
inline Matrix16c kron4(const ComplexMatrix4& a, const ComplexMatrix4& b) {
  Matrix16c k;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) k.block<4, 4>(4 * i, 4 * j) = a(i, j) * b;
  return k;
}

/// vec(A X B) = (B^T kron A) vec(X).
inline Matrix16c sandwich(const ComplexMatrix4& a, const ComplexMatrix4& b) { return kron4(b.transpose(), a); }

inline Matrix16c commutator_generator(const ComplexMatrix4& h) {
  const ComplexMatrix4 id = ComplexMatrix4::Identity();
  return Complex(0.0, -1.0) * (sandwich(h, id) - sandwich(id, h));
}

inline Matrix16c dissipator_generator(const ComplexMatrix4& l) {
  const ComplexMatrix4 id = ComplexMatrix4::Identity();
  const ComplexMatrix4 ldl = l.adjoint() * l;
  return sandwich(l, l.adjoint()) - 0.5 * sandwich(ldl, id) - 0.5 * sandwich(id, ldl);
}

/// Full Lindblad generator: -i[H, .] + sum_k D[L_k].
inline Matrix16c lindblad_generator(const ComplexMatrix4& h, const std::vector<ComplexMatrix4>& ls) {
  Matrix16c g = commutator_generator(h);
  for (const auto& l : ls) g += dissipator_generator(l);
  return g;
}

/// Linear part of the measurement map: rho -> L rho + rho L^dag.
inline Matrix16c backaction_generator(const ComplexMatrix4& l) {
  const ComplexMatrix4 id = ComplexMatrix4::Identity();
  return sandwich(l, id) + sandwich(id, l.adjoint());
}

/// Projection of the eigenvalues `mu` onto the simplex by trying every
/// support set and keeping the KKT-feasible candidate closest to mu.
inline std::vector<double> simplex_by_enumeration(const std::vector<double>& mu) {
  const int n = static_cast<int>(mu.size());
  std::vector<double> best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int mask = 1; mask < (1 << n); ++mask) {
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < n; ++i)
      if (mask & (1 << i)) {
        sum += mu[static_cast<std::size_t>(i)];
        ++count;
      }
    const double tau = (sum - 1.0) / count;
    std::vector<double> cand(static_cast<std::size_t>(n), 0.0);
    bool ok = true;
    for (int i = 0; i < n; ++i) {
      const double v = mu[static_cast<std::size_t>(i)] - tau;
      if (mask & (1 << i)) {
        if (v < -1e-15) ok = false;
        cand[static_cast<std::size_t>(i)] = std::max(v, 0.0);
      } else if (v > 1e-15) {
        ok = false;
      }
    }
    if (!ok) continue;
    double dist = 0.0;
    for (int i = 0; i < n; ++i) {
      const double diff = cand[static_cast<std::size_t>(i)] - mu[static_cast<std::size_t>(i)];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = cand;
    }
  }
  return best;
}

/// Nearest density matrix via a general complex eigensolver on the Hermitian
/// part and enumeration-based simplex projection.
inline ComplexMatrix4 density_projection(const ComplexMatrix4& m) {
  const ComplexMatrix4 h = 0.5 * (m + m.adjoint());
  Eigen::ComplexEigenSolver<ComplexMatrix4> es(h);
  std::vector<double> mu(4);
  for (int i = 0; i < 4; ++i) mu[static_cast<std::size_t>(i)] = es.eigenvalues()(i).real();
  const auto lambda = simplex_by_enumeration(mu);
  // Eigenvectors of a Hermitian matrix are orthogonal up to round-off; QR
  // restores exact orthonormality while keeping each column's direction.
  const ComplexMatrix4 v = es.eigenvectors();
  Eigen::HouseholderQR<ComplexMatrix4> qr(v);
  const ComplexMatrix4 q = qr.householderQ();
  ComplexMatrix4 out = ComplexMatrix4::Zero();
  for (int i = 0; i < 4; ++i) {
    const auto col = q.col(i);
    out += lambda[static_cast<std::size_t>(i)] * (col * col.adjoint());
  }
  return out;
}

/// Relative error with an absolute floor for tiny values.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle
