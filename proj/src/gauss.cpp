#include "fedga/gauss.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

#include "fedga/linalg.hpp"

namespace fedga {

ContractionKernel::ContractionKernel(Matrix hessian, StepSchedule schedule, int horizon)
    : a_(std::move(hessian)), schedule_(schedule), n_(horizon) {
  if (a_.rows() != a_.cols() || a_.rows() == 0) throw std::invalid_argument("kernel: A must be square");
  if (!is_symmetric(a_, 1e-10 * std::max(1.0, a_.norm())))
    throw std::invalid_argument("kernel: A must be symmetric");
  if (horizon < 1) throw std::invalid_argument("kernel: horizon must be >= 1");
  schedule_.validate();
  Eigen::SelfAdjointEigenSolver<Matrix> es(a_, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= 0.0) throw std::invalid_argument("kernel: A must be positive definite");
  const double lmax = es.eigenvalues().maxCoeff();
  etas_.assign(n_ + 1, 0.0);
  for (int t = 1; t <= n_; ++t) {
    etas_[t] = schedule_(t);
    if (etas_[t] * lmax >= 1.0) contractive_ = false;
  }
}

Matrix ContractionKernel::step(int t) const {
  return Matrix::Identity(dim(), dim()) - etas_.at(t) * a_;
}

Matrix ContractionKernel::contraction_product(int s, int t) const {
  if (s > t) throw std::invalid_argument("contraction_product: s > t");
  if (s < 0 || t > n_) throw std::out_of_range("contraction_product: indices outside [0, n]");
  Matrix p = Matrix::Identity(dim(), dim());
  for (int j = s + 1; j <= t; ++j) p = step(j) * p;
  return p;
}

std::vector<Matrix> ContractionKernel::q_matrices() const {
  const int d = dim();
  std::vector<Matrix> q(n_ + 1, Matrix::Zero(d, d));
  Matrix s_acc = Matrix::Identity(d, d);  // S_n
  q[n_] = etas_[n_] * s_acc;
  for (int s = n_ - 1; s >= 1; --s) {
    s_acc = Matrix::Identity(d, d) + step(s + 1) * s_acc;
    q[s] = etas_[s] * s_acc;
  }
  return q;
}

Matrix ContractionKernel::q_matrix(int s) const {
  if (s < 1 || s > n_) throw std::out_of_range("q_matrix: s outside [1, n]");
  return q_matrices()[s];
}

std::vector<Matrix> ContractionKernel::b_matrices(int t) const {
  if (t < 1 || t > n_) throw std::out_of_range("b_matrices: t outside [1, n]");
  const int d = dim();
  std::vector<Matrix> b(t + 1, Matrix::Zero(d, d));
  Matrix s_acc = Matrix::Identity(d, d);  // sum_{j=s}^t A_s^j
  b[t] = etas_[t] * s_acc;
  for (int s = t - 1; s >= 1; --s) {
    s_acc = Matrix::Identity(d, d) + step(s + 1) * s_acc;
    b[s] = etas_[s] * s_acc;
  }
  return b;
}

double ContractionKernel::omega(int t) const {
  const auto b = b_matrices(t);
  double total = b[1].norm();
  for (int s = 2; s <= t; ++s) total += (b[s] - b[s - 1]).norm();
  return total;
}

double omega_stat(const ContractionKernel& kernel, int t) { return kernel.omega(t); }

Matrix sigma_n(const ContractionKernel& kernel, const Matrix& v_k) {
  const int n = kernel.horizon();
  const auto q = kernel.q_matrices();
  Matrix acc = Matrix::Zero(kernel.dim(), kernel.dim());
  for (int s = 1; s <= n; ++s) acc.noalias() += q[s] * v_k * q[s].transpose();
  return symmetrize(acc / n);
}

Matrix sigma_tilde_n(const ContractionKernel& kernel, const Matrix& v_k) {
  const int n = kernel.horizon();
  const int d = kernel.dim();
  Matrix prod = Matrix::Identity(d, d);  // A_n^n
  Matrix acc = Matrix::Zero(d, d);
  for (int s = n; s >= 1; --s) {
    const double eta = kernel.eta(s);
    acc.noalias() += eta * eta * prod * v_k * prod.transpose();
    if (s > 1) prod = prod * kernel.step(s);  // A_{s-1}^n = A_s^n (I - eta_s A)
  }
  return symmetrize(std::pow(static_cast<double>(n), kernel.schedule().beta) * acc);
}

Matrix sigma_asymptotic(const Matrix& hessian, const Matrix& v_k, int clients) {
  if (clients < 1) throw std::invalid_argument("sigma_asymptotic: K must be >= 1");
  Eigen::FullPivLU<Matrix> lu(hessian);
  if (!lu.isInvertible()) throw std::invalid_argument("sigma_asymptotic: Hessian A is singular");
  const Matrix a_inv = lu.inverse();
  return symmetrize(a_inv * (clients * v_k) * a_inv.transpose());
}

CovariancePack covariance_pack(const ContractionKernel& kernel, const Matrix& v_k, int clients) {
  return {sigma_n(kernel, v_k), sigma_tilde_n(kernel, v_k), sigma_asymptotic(kernel.hessian(), v_k, clients),
          v_k};
}

GaussianSampler::GaussianSampler(const Matrix& covariance, const std::string& what)
    : root_(psd_sqrt(covariance, what)), z_(covariance.rows()) {}

void GaussianSampler::sample(Rng& rng, Eigen::Ref<Vector> out) {
  rng.fill_normal(z_);
  out.noalias() = root_ * z_;
}

GaussianPath simulate_aggr_ga(const ContractionKernel& kernel, const Matrix& v_k, int clients, Rng& rng) {
  if (clients < 1) throw std::invalid_argument("simulate_aggr_ga: K must be >= 1");
  const int d = kernel.dim();
  const int n = kernel.horizon();
  GaussianSampler sampler(clients * v_k, "K * V_K");
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(clients));
  GaussianPath path{Matrix(d, n), Matrix(d, n)};
  Vector y = Vector::Zero(d), z(d), sum = Vector::Zero(d);
  const Matrix& a = kernel.hessian();
  for (int t = 1; t <= n; ++t) {
    sampler.sample(rng, z);
    const double eta = kernel.eta(t);
    y = y - eta * (a * y) + (eta * inv_sqrt_k) * z;
    sum += y;
    path.ys.col(t - 1) = y;
    path.partial_sums.col(t - 1) = sum;
  }
  return path;
}

GaussianPath simulate_client_ga(const ContractionKernel& kernel, const std::vector<Matrix>& client_covs,
                                const Vector& weights, const ConnectionMatrix& connection, int tau, Rng& rng) {
  const int k_clients = connection.size();
  if (static_cast<int>(client_covs.size()) != k_clients || weights.size() != k_clients)
    throw std::invalid_argument("simulate_client_ga: need one covariance and weight per client");
  if (tau < 1) throw std::invalid_argument("simulate_client_ga: tau must be >= 1");
  const int d = kernel.dim();
  const int n = kernel.horizon();
  std::vector<GaussianSampler> samplers;
  samplers.reserve(k_clients);
  for (int k = 0; k < k_clients; ++k)
    samplers.emplace_back(client_covs[k], "client " + std::to_string(k) + " noise covariance");

  GaussianPath path{Matrix(d, n), Matrix(d, n)};
  Matrix theta = Matrix::Zero(d, k_clients), noise(d, k_clients), mixed(d, k_clients);
  Vector z(d), sum = Vector::Zero(d);
  const Matrix& a = kernel.hessian();
  const Matrix& c = connection.entries();
  for (int t = 1; t <= n; ++t) {
    for (int k = 0; k < k_clients; ++k) {
      samplers[k].sample(rng, z);
      noise.col(k) = (k_clients * weights[k]) * z;
    }
    const double eta = kernel.eta(t);
    theta = theta - eta * (a * theta) + eta * noise;
    if (t % tau == 0) {
      mixed.noalias() = theta * c;
      theta.swap(mixed);
    }
    const Vector y = theta.rowwise().sum() / static_cast<double>(k_clients);
    sum += y;
    path.ys.col(t - 1) = y;
    path.partial_sums.col(t - 1) = sum;
  }
  return path;
}

GaussianPath simulate_fclt(const Matrix& sigma, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("simulate_fclt: n must be >= 1");
  const int d = static_cast<int>(sigma.rows());
  GaussianSampler sampler(sigma, "Sigma");
  GaussianPath path{Matrix(d, n), Matrix(d, n)};
  Vector z(d), sum = Vector::Zero(d);
  for (int t = 1; t <= n; ++t) {
    sampler.sample(rng, z);
    sum += z;
    path.ys.col(t - 1) = z;
    path.partial_sums.col(t - 1) = sum;
  }
  return path;
}

std::vector<Matrix> aggr_ga_covariance(const ContractionKernel& kernel, const Matrix& v_k) {
  const int n = kernel.horizon();
  std::vector<Matrix> out;
  out.reserve(n);
  Matrix v = Matrix::Zero(kernel.dim(), kernel.dim());
  for (int t = 1; t <= n; ++t) {
    const Matrix s = kernel.step(t);
    const double eta = kernel.eta(t);
    v = s * v * s.transpose() + eta * eta * v_k;
    out.push_back(v);
  }
  return out;
}

}  // namespace fedga
