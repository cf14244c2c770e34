#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "fedga/types.hpp"

namespace fedga {

/// Reasons a candidate mixing matrix is rejected.
enum class ConnectionDefect {
  kNotSquare,
  kAsymmetric,
  kRowSums,
  kNegativeEntry,
  kZeroDiagonal,
  kDisconnected,  // second eigenvalue modulus reaches 1
  kBadParameter,
};

const char* to_string(ConnectionDefect defect);

class InvalidConnection : public std::invalid_argument {
 public:
  InvalidConnection(ConnectionDefect defect, const std::string& detail);
  ConnectionDefect defect() const { return defect_; }

 private:
  ConnectionDefect defect_;
};

/// Symmetric, row-stochastic K x K mixing matrix with its spectral gap.
///
/// Instances are only produced by the constructors below (or
/// validate_connection), so every live object satisfies C 1 = 1, C = C^T,
/// nonnegative entries, positive diagonal and rho < 1. Immutable; safe to
/// share read-only across Monte-Carlo workers.
class ConnectionMatrix {
 public:
  /// The trivial single-client matrix [1].
  ConnectionMatrix() : entries_(Matrix::Identity(1, 1)), eigenvalues_(Vector::Ones(1)), lambda2_(0.0) {}

  int size() const { return static_cast<int>(entries_.rows()); }
  const Matrix& entries() const { return entries_; }
  /// Second-largest eigenvalue modulus.
  double lambda2() const { return lambda2_; }
  /// Eigenvalues sorted by decreasing value.
  const Vector& eigenvalues() const { return eigenvalues_; }
  /// True when C is the uniform averaging matrix K^{-1} 1 1^T.
  bool is_uniform() const;

 private:
  friend ConnectionMatrix validate_connection(const Matrix& c);
  ConnectionMatrix(Matrix entries, Vector eigenvalues, double lambda2)
      : entries_(std::move(entries)), eigenvalues_(std::move(eigenvalues)), lambda2_(lambda2) {}

  Matrix entries_;
  Vector eigenvalues_;
  double lambda2_;
};

inline constexpr double kConnectionTolerance = 1e-12;

/// Checks every invariant and computes rho. Throws InvalidConnection.
ConnectionMatrix validate_connection(const Matrix& c);

/// Circulant band: client i averages uniformly over itself and `bandwidth`
/// neighbours on each side, indices taken modulo K.
ConnectionMatrix banded_connection(int clients, int bandwidth);

/// rho * I + (1 - rho) / K * 1 1^T.
ConnectionMatrix rho_mix_connection(int clients, double rho);

/// K^{-1} 1 1^T (complete averaging).
ConnectionMatrix uniform_connection(int clients);

/// Reads K rows of K comma-separated reals and validates the result.
ConnectionMatrix load_connection_csv(const std::filesystem::path& path);

}  // namespace fedga
