#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace ifscert {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

struct QrFactors {
  Matrix q;
  Matrix r;
};

/// Householder QR with the sign convention diag(R) >= 0. Thin when a is tall.
inline QrFactors qr_positive(const Matrix& a) {
  const Eigen::Index rows = a.rows();
  const Eigen::Index cols = a.cols();
  Eigen::HouseholderQR<Matrix> qr(a);
  QrFactors out;
  out.q = qr.householderQ() * Matrix::Identity(rows, std::min(rows, cols));
  out.r = qr.matrixQR().topRows(std::min(rows, cols)).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < out.r.rows(); ++j) {
    if (out.r(j, j) < 0.0) {
      out.r.row(j) *= -1.0;
      out.q.col(j) *= -1.0;
    }
  }
  return out;
}

/// Orthonormal basis of the orthogonal complement of span(basis) in R^rows.
/// basis must have orthonormal columns.
inline Matrix orthogonal_complement(const Matrix& basis) {
  const Eigen::Index n = basis.rows();
  const Eigen::Index k = basis.cols();
  Eigen::HouseholderQR<Matrix> qr(basis);
  Matrix full = qr.householderQ() * Matrix::Identity(n, n);
  Matrix comp = full.rightCols(n - k);
  // Fix orientation so the result is a deterministic function of span(basis).
  for (Eigen::Index j = 0; j < comp.cols(); ++j) {
    Eigen::Index pivot = 0;
    comp.col(j).cwiseAbs().maxCoeff(&pivot);
    if (comp(pivot, j) < 0.0) comp.col(j) *= -1.0;
  }
  return comp;
}

inline Vector singular_values(const Matrix& a) {
  if (a.size() == 0) return Vector();
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues();
}

inline double op_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return singular_values(a)(0);
}

inline double min_singular_value(const Matrix& a) {
  const Vector s = singular_values(a);
  return s(s.size() - 1);
}

inline double max_abs_entry(const Matrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

/// True when columns are orthonormal within tol (Gram matrix check).
inline bool is_orthonormal(const Matrix& a, double tol) {
  const Matrix gram = a.transpose() * a;
  return max_abs_entry(gram - Matrix::Identity(gram.rows(), gram.cols())) <= tol;
}

}  // namespace linalg
}  // namespace ifscert
