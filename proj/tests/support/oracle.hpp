#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "towl/numerics.hpp"
#include "towl/rng.hpp"

namespace towl::test {

inline Eigen::MatrixXd to_eigen(const Mat& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  }
  return e;
}

inline Mat from_eigen(const Eigen::MatrixXd& e) {
  Mat m(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    for (Eigen::Index j = 0; j < e.cols(); ++j) m(i, j) = e(i, j);
  }
  return m;
}

/// Largest singular value by Jacobi SVD.
inline double svd_norm(const Mat& m) {
  if (m.empty()) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
  return svd.singularValues()(0);
}

/// Eigenvalues of a symmetric matrix, ascending.
inline Eigen::VectorXd sym_eigenvalues(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(m));
  return es.eigenvalues();
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
  }
  return d;
}

/// Entry-by-entry triple loop.
inline Mat naive_matmul(const Mat& a, const Mat& b) {
  Mat c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  }
  return c;
}

}  // namespace towl::test
