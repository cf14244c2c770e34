#include "fedga/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace fedga {

namespace {

void require_square(const Matrix& m, const std::string& what) {
  if (m.rows() != m.cols())
    throw std::invalid_argument(what + " must be square, got " + std::to_string(m.rows()) +
                                "x" + std::to_string(m.cols()));
}

double scale_of(const Matrix& m) { return std::max(1.0, m.cwiseAbs().maxCoeff()); }

}  // namespace

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

bool is_symmetric(const Matrix& m, double tol) {
  return m.rows() == m.cols() && (m - m.transpose()).norm() <= tol;
}

double min_eigenvalue(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Matrix psd_sqrt(const Matrix& m, const std::string& what) {
  require_square(m, what);
  if (m.size() == 0) return m;
  if (!m.allFinite()) throw NotPositiveSemiDefinite(what + " has non-finite entries");
  const double tol = kPsdTolerance * scale_of(m);
  if ((m - m.transpose()).norm() > tol)
    throw NotPositiveSemiDefinite(what + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  Vector ev = es.eigenvalues();
  if (ev.minCoeff() < -tol)
    throw NotPositiveSemiDefinite(what + " is not positive semi-definite (min eigenvalue " +
                                  std::to_string(ev.minCoeff()) + ")");
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Matrix inverse_sqrt(const Matrix& m, const std::string& what) {
  require_square(m, what);
  if (!is_symmetric(m, kPsdTolerance * scale_of(m)))
    throw std::invalid_argument(what + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  const Vector& ev = es.eigenvalues();
  if (ev.minCoeff() <= kPsdTolerance * scale_of(m))
    throw std::invalid_argument(what + " is singular or not positive definite");
  Vector inv = ev.cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

double relative_frobenius(const Matrix& a, const Matrix& b) {
  const double denom = b.norm();
  if (denom == 0.0) return a.norm() == 0.0 ? 0.0 : INFINITY;
  return (a - b).norm() / denom;
}

}  // namespace fedga
