#pragma once

#include <stdexcept>
#include <string>

#include "fedga/types.hpp"

namespace fedga {

/// Raised when a covariance input is not symmetric positive semi-definite
/// (within tolerance), so no Gaussian factor exists.
class NotPositiveSemiDefinite : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kPsdTolerance = 1e-10;

/// Symmetric square root L with L*L^T == M. Eigenvalues in [-tol, 0) are
/// clipped to zero; anything more negative throws NotPositiveSemiDefinite.
Matrix psd_sqrt(const Matrix& m, const std::string& what = "covariance");

/// M^{-1/2} for symmetric positive definite M.
Matrix inverse_sqrt(const Matrix& m, const std::string& what = "scaling");

Matrix symmetrize(const Matrix& m);

bool is_symmetric(const Matrix& m, double tol);

double min_eigenvalue(const Matrix& m);

/// Frobenius relative error |a - b|_F / |b|_F.
double relative_frobenius(const Matrix& a, const Matrix& b);

}  // namespace fedga
