#pragma once

// Random instances and naive reference computations shared by the tests.
// Nothing here calls into the library routines it is used to check.

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "spdls/symmat.hpp"

namespace spdls::testing {

inline Matrix random_matrix(long rows, long cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix a(rows, cols);
  for (long j = 0; j < cols; ++j)
    for (long i = 0; i < rows; ++i) a(i, j) = g(rng);
  return a;
}

inline SymMat random_sym(long m, std::mt19937_64& rng) { return SymMat(random_matrix(m, m, rng)); }

inline SymMat random_psd(long m, long rank, std::mt19937_64& rng) {
  const Matrix g = random_matrix(m, rank, rng);
  return SymMat(Matrix(g * g.transpose()));
}

/// sum_jk a_jk b_jk by explicit loops.
inline double naive_frobenius(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (long j = 0; j < a.rows(); ++j)
    for (long k = 0; k < a.cols(); ++k) s += a(j, k) * b(j, k);
  return s;
}

/// Smallest eigenvalue via Eigen directly, independent of eig_sym.
inline double naive_lambda_min(const Matrix& a) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(a, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

}  // namespace spdls::testing
