#pragma once

#include <cstdint>
#include <vector>

#include "fedga/engine.hpp"
#include "fedga/graph.hpp"
#include "fedga/random.hpp"
#include "fedga/types.hpp"

namespace fedga {

/// Linearised SGD dynamics: the products prod_{j=s+1}^t (I - eta_j A) over a
/// horizon n. All step matrices are polynomials in A and commute.
class ContractionKernel {
 public:
  ContractionKernel(Matrix hessian, StepSchedule schedule, int horizon);

  const Matrix& hessian() const { return a_; }
  const StepSchedule& schedule() const { return schedule_; }
  int horizon() const { return n_; }
  int dim() const { return static_cast<int>(a_.rows()); }
  double eta(int t) const { return etas_[t]; }
  /// False when some eta_t * lambda_max(A) >= 1 (products may not contract).
  bool contractive() const { return contractive_; }

  /// I - eta_t A.
  Matrix step(int t) const;

  /// prod_{j=s+1}^t (I - eta_j A); identity when s == t.
  Matrix contraction_product(int s, int t) const;

  /// Q_s = eta_s sum_{j=s}^n A_s^j for s = 1..n (index 0 unused), via the
  /// backward recurrence S_s = I + (I - eta_{s+1} A) S_{s+1}.
  std::vector<Matrix> q_matrices() const;
  Matrix q_matrix(int s) const;

  /// B_{s,t} = eta_s sum_{j=s}^t A_s^j for s = 1..t (index 0 unused); B_{s,n} = Q_s
  /// and B_{s,t} tends to A^{-1}.
  std::vector<Matrix> b_matrices(int t) const;

  /// |B_{1,t}|_F + sum_{s=2}^t |B_{s,t} - B_{s-1,t}|_F.
  double omega(int t) const;

 private:
  Matrix a_;
  StepSchedule schedule_;
  int n_;
  std::vector<double> etas_;  // etas_[t], t = 1..n
  bool contractive_ = true;
};

/// Sigma_n = n^{-1} sum_s Q_s V Q_s^T.
Matrix sigma_n(const ContractionKernel& kernel, const Matrix& v_k);

/// n^beta sum_s eta_s^2 A_s^n V (A_s^n)^T.
Matrix sigma_tilde_n(const ContractionKernel& kernel, const Matrix& v_k);

/// Sigma = A^{-1} (K V_K) A^{-T}; the CLT covariance of sqrt(n)(Ybar - theta*) is Sigma / K.
Matrix sigma_asymptotic(const Matrix& hessian, const Matrix& v_k, int clients);

double omega_stat(const ContractionKernel& kernel, int t);

struct CovariancePack {
  Matrix sigma_n;
  Matrix sigma_tilde_n;
  Matrix sigma_asym;  // not divided by K
  Matrix v_k;
};

CovariancePack covariance_pack(const ContractionKernel& kernel, const Matrix& v_k, int clients);

/// Draws N(0, Sigma) vectors through a PSD square root.
class GaussianSampler {
 public:
  explicit GaussianSampler(const Matrix& covariance, const std::string& what = "covariance");
  int dim() const { return static_cast<int>(root_.rows()); }
  void sample(Rng& rng, Eigen::Ref<Vector> out);

 private:
  Matrix root_;
  Vector z_;
};

/// A simulated Gaussian path: iterates and their partial sums.
struct GaussianPath {
  Matrix ys;            // d x n
  Matrix partial_sums;  // d x n; column t-1 holds sum_{s<=t} Y_s
};

/// Y_t = (I - eta_t A) Y_{t-1} + eta_t K^{-1/2} Z_t with Z_t ~ N(0, K V_K).
GaussianPath simulate_aggr_ga(const ContractionKernel& kernel, const Matrix& v_k, int clients, Rng& rng);

/// Theta_t = ((I - eta_t A) Theta_{t-1} + eta_t M_t) C_t with
/// M_t = K (w_1 Z^1_t, ..., w_K Z^K_t); Y_t = K^{-1} Theta_t 1.
GaussianPath simulate_client_ga(const ContractionKernel& kernel, const std::vector<Matrix>& client_covs,
                                const Vector& weights, const ConnectionMatrix& connection, int tau, Rng& rng);

/// I.i.d. N(0, Sigma) increments Z_1..Z_n (ys) with their partial sums.
GaussianPath simulate_fclt(const Matrix& sigma, int n, Rng& rng);

/// Covariance of the Aggr-GA iterate by the deterministic recursion
/// V_t = (I - eta_t A) V_{t-1} (I - eta_t A)^T + eta_t^2 V_K; entry t-1 holds V_t.
std::vector<Matrix> aggr_ga_covariance(const ContractionKernel& kernel, const Matrix& v_k);

}  // namespace fedga
