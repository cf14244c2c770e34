#include "fedga/models.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numeric>

#include "fedga/linalg.hpp"

namespace fedga {

namespace {

/// Nodes and weights for E[f(Z)], Z ~ N(0, 1) (Golub-Welsch on the
/// Hermite Jacobi matrix).
struct NormalQuadrature {
  Vector nodes;
  Vector weights;
};

const NormalQuadrature& normal_quadrature() {
  static const NormalQuadrature q = [] {
    constexpr int n = 48;
    Matrix jac = Matrix::Zero(n, n);
    for (int i = 1; i < n; ++i) jac(i, i - 1) = jac(i - 1, i) = std::sqrt(i / 2.0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(jac);
    NormalQuadrature out;
    out.nodes = std::sqrt(2.0) * es.eigenvalues();
    out.weights = es.eigenvectors().row(0).transpose().array().square();
    return out;
  }();
  return q;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Orthonormal basis of span{u, v} (0, 1 or 2 columns).
Matrix span_basis(const Vector& u, const Vector& v) {
  Matrix basis(u.size(), 0);
  auto add = [&basis](Vector c) {
    for (Eigen::Index j = 0; j < basis.cols(); ++j) c -= basis.col(j).dot(c) * basis.col(j);
    const double nrm = c.norm();
    if (nrm > 1e-12) {
      basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
      basis.col(basis.cols() - 1) = c / nrm;
    }
  };
  add(u);
  add(v);
  return basis;
}

/// E[(sigmoid(x^T theta) - sigmoid(x^T v)) x] for x ~ N(0, I_d).
Vector logistic_population_gradient(const Vector& theta, const Vector& v) {
  const Matrix basis = span_basis(theta, v);
  const Eigen::Index m = basis.cols();
  if (m == 0) return Vector::Zero(theta.size());
  const Vector a = basis.transpose() * theta;
  const Vector b = basis.transpose() * v;
  const auto& q = normal_quadrature();
  Vector acc = Vector::Zero(m);
  if (m == 1) {
    for (Eigen::Index i = 0; i < q.nodes.size(); ++i) {
      const double z = q.nodes[i];
      acc[0] += q.weights[i] * (sigmoid(a[0] * z) - sigmoid(b[0] * z)) * z;
    }
  } else {
    for (Eigen::Index i = 0; i < q.nodes.size(); ++i)
      for (Eigen::Index j = 0; j < q.nodes.size(); ++j) {
        const double z0 = q.nodes[i], z1 = q.nodes[j];
        const double w = q.weights[i] * q.weights[j] *
                         (sigmoid(a[0] * z0 + a[1] * z1) - sigmoid(b[0] * z0 + b[1] * z1));
        acc[0] += w * z0;
        acc[1] += w * z1;
      }
  }
  return basis * acc;
}

}  // namespace

// ---------------------------------------------------------------------------
// FRandEffPopulation

void FRandEffPopulation::finalize(double b1, double b2) {
  const int k = clients();
  if (k < 1) throw std::invalid_argument("population needs at least one client");
  if (dim < 1) throw std::invalid_argument("population dimension must be positive");
  if (beta0.size() != dim) throw std::invalid_argument("beta0 dimension mismatch");
  if (static_cast<int>(sigmas2.size()) != k) throw std::invalid_argument("sigmas2 size mismatch");
  if (weights.size() != k) throw std::invalid_argument("weights size mismatch");
  if (gamma < 0) throw std::invalid_argument("gamma must be nonnegative");
  for (const auto& b : betas)
    if (b.size() != dim) throw std::invalid_argument("beta_k dimension mismatch");
  for (double s : sigmas2)
    if (!(s >= 0.0)) throw std::invalid_argument("sigma_k^2 must be nonnegative");
  if ((weights.array() <= 0.0).any()) throw std::invalid_argument("weights must be positive");
  if (std::abs(weights.sum() - 1.0) > 1e-12) throw std::invalid_argument("weights must sum to 1");
  const Vector kw = k * weights;
  if (kw.minCoeff() < b1 - 1e-12 || kw.maxCoeff() > b2 + 1e-12)
    throw std::invalid_argument("weights violate b1 <= K w_k <= b2");
  theta_star = Vector::Zero(dim);
  for (int i = 0; i < k; ++i) theta_star += weights[i] * betas[i];
}

FRandEffPopulation sample_frandeff(int clients, int dim, const Vector& beta0, double gamma,
                                   const std::vector<double>& sigma_set, std::uint64_t seed,
                                   std::optional<Vector> weights) {
  if (clients < 1) throw std::invalid_argument("K must be >= 1");
  if (gamma < 0) throw std::invalid_argument("gamma must be >= 0");
  if (sigma_set.empty()) throw std::invalid_argument("sigma_set must not be empty");
  if (beta0.size() != dim) throw std::invalid_argument("beta0 must have dimension d");

  FRandEffPopulation pop;
  pop.dim = dim;
  pop.beta0 = beta0;
  pop.gamma = gamma;
  pop.seed = seed;
  Rng rng(derive_seed(seed, {stream::kPopulation}));
  const double sd = std::sqrt(gamma);
  for (int k = 0; k < clients; ++k) {
    Vector b(dim);
    for (int j = 0; j < dim; ++j) b[j] = beta0[j] + sd * rng.normal();
    pop.betas.push_back(std::move(b));
  }
  for (int k = 0; k < clients; ++k) pop.sigmas2.push_back(sigma_set[rng.index(sigma_set.size())]);
  pop.weights = weights ? *weights : Vector::Constant(clients, 1.0 / clients);
  pop.finalize();
  return pop;
}

nlohmann::json to_json(const FRandEffPopulation& pop) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json betas = nlohmann::json::array();
  for (const auto& b : pop.betas) betas.push_back(vec(b));
  return {{"model", "frandeff"},
          {"dim", pop.dim},
          {"beta0", vec(pop.beta0)},
          {"gamma", pop.gamma},
          {"betas", betas},
          {"sigmas2", pop.sigmas2},
          {"weights", vec(pop.weights)},
          {"seed", pop.seed}};
}

FRandEffPopulation frandeff_from_json(const nlohmann::json& doc) {
  auto vec = [](const nlohmann::json& j) {
    auto v = j.get<std::vector<double>>();
    return Vector(Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  FRandEffPopulation pop;
  pop.dim = doc.at("dim").get<int>();
  pop.beta0 = vec(doc.at("beta0"));
  pop.gamma = doc.at("gamma").get<double>();
  for (const auto& b : doc.at("betas")) pop.betas.push_back(vec(b));
  pop.sigmas2 = doc.at("sigmas2").get<std::vector<double>>();
  pop.weights = vec(doc.at("weights"));
  pop.seed = doc.value("seed", std::uint64_t{0});
  pop.finalize();
  return pop;
}

// ---------------------------------------------------------------------------
// ModelOracle defaults

Matrix ModelOracle::client_noise_covariance(int client, NoiseMode mode, int n_mc,
                                            std::uint64_t seed) const {
  if (mode == NoiseMode::kAnalytic)
    throw UnsupportedMode("analytic noise covariance is not available for model '" + name() + "'");
  if (n_mc < 2) throw std::invalid_argument("monte_carlo noise covariance needs n_mc >= 2");
  const int d = dim();
  Rng rng(derive_seed(seed, {stream::kClient, static_cast<std::uint64_t>(client)}));
  const Vector& ts = theta_star();
  const Vector mean_grad = exact_gradient(client, ts, nullptr);
  Vector raw(draw_size()), grad(d);
  Matrix acc = Matrix::Zero(d, d);
  for (int i = 0; i < n_mc; ++i) {
    draw(client, rng, raw);
    gradient(client, raw, ts, nullptr, grad);
    const Vector g = mean_grad - grad;
    acc.noalias() += g * g.transpose();
  }
  return acc / n_mc;
}

Matrix ModelOracle::noise_covariance(NoiseMode mode, int n_mc, std::uint64_t seed) const {
  const int d = dim();
  Matrix v = Matrix::Zero(d, d);
  const Vector& w = weights();
  for (int k = 0; k < clients(); ++k)
    v += w[k] * w[k] * client_noise_covariance(k, mode, n_mc, derive_seed(seed, {static_cast<std::uint64_t>(k)}));
  return 0.5 * (v + v.transpose());
}

Vector ModelOracle::aggregate_gradient(const Vector& theta) const {
  Vector g = Vector::Zero(dim());
  for (int k = 0; k < clients(); ++k) g += weights()[k] * exact_gradient(k, theta, nullptr);
  return g;
}

Vector noisy_gradient(const ModelOracle& oracle, int client, const Vector& theta, Rng& rng,
                      const AttackKind* attack) {
  if (client < 0 || client >= oracle.clients())
    throw std::out_of_range("client index " + std::to_string(client) + " out of range");
  Vector raw(oracle.draw_size()), g(oracle.dim());
  oracle.draw(client, rng, raw);
  oracle.gradient(client, raw, theta, attack, g);
  return g;
}

// ---------------------------------------------------------------------------
// FRandEffOracle

FRandEffOracle::FRandEffOracle(FRandEffPopulation pop) : pop_(std::move(pop)) { pop_.finalize(); }

void FRandEffOracle::draw(int, Rng& rng, Eigen::Ref<Vector> out) const {
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = rng.normal();
}

Vector FRandEffOracle::effective_beta(int client, const AttackKind* attack) const {
  Vector beta = pop_.betas[client];
  if (attack) {
    if (const auto* shift = std::get_if<MeanShift>(attack)) beta += shift->mu;
    else throw std::invalid_argument("frandeff model supports only mean-shift attacks");
  }
  return beta;
}

void FRandEffOracle::gradient(int client, const Eigen::Ref<const Vector>& draw,
                              const Eigen::Ref<const Vector>& theta, const AttackKind* attack,
                              Eigen::Ref<Vector> out) const {
  const int d = pop_.dim;
  const auto x = draw.head(d);
  const double noise = std::sqrt(pop_.sigmas2[client]) * draw[d];
  double resid;
  if (attack) {
    resid = x.dot(theta - effective_beta(client, attack)) - noise;
  } else {
    resid = x.dot(theta - pop_.betas[client]) - noise;
  }
  out = resid * x;
}

Vector FRandEffOracle::exact_gradient(int client, const Vector& theta, const AttackKind* attack) const {
  return theta - effective_beta(client, attack);
}

bool FRandEffOracle::supports(const AttackKind& attack) const {
  const auto* shift = std::get_if<MeanShift>(&attack);
  return shift && shift->mu.size() == pop_.dim;
}

Matrix FRandEffOracle::hessian() const { return Matrix::Identity(pop_.dim, pop_.dim); }

Matrix FRandEffOracle::client_noise_covariance(int client, NoiseMode mode, int n_mc,
                                               std::uint64_t seed) const {
  if (mode == NoiseMode::kMonteCarlo) return ModelOracle::client_noise_covariance(client, mode, n_mc, seed);
  // g = (I - x x^T) delta + sigma eps x with delta = theta* - beta_k and
  // E[x x^T v v^T x x^T] = |v|^2 I + 2 v v^T for Gaussian x.
  const Vector delta = pop_.theta_star - pop_.betas[client];
  const int d = pop_.dim;
  return (delta.squaredNorm() + pop_.sigmas2[client]) * Matrix::Identity(d, d) + delta * delta.transpose();
}

// ---------------------------------------------------------------------------
// QuadraticOracle

QuadraticOracle::QuadraticOracle(Matrix hessian, std::vector<Vector> betas, const Matrix& noise_cov)
    : a_(std::move(hessian)), betas_(std::move(betas)), v_(noise_cov) {
  if (betas_.empty()) throw std::invalid_argument("quadratic model needs at least one client");
  const auto d = a_.rows();
  if (d < 1 || a_.cols() != d) throw std::invalid_argument("quadratic model: Hessian must be square");
  if (!is_symmetric(a_, 1e-12) || min_eigenvalue(a_) <= 0.0)
    throw std::invalid_argument("quadratic model: Hessian must be symmetric positive definite");
  if (v_.rows() != d || v_.cols() != d) throw std::invalid_argument("quadratic model: noise covariance is not d x d");
  root_ = psd_sqrt(v_, "quadratic noise covariance");
  const int k = static_cast<int>(betas_.size());
  weights_ = Vector::Constant(k, 1.0 / k);
  theta_star_ = Vector::Zero(d);
  for (const auto& b : betas_) {
    if (b.size() != d) throw std::invalid_argument("quadratic model: client optimum has the wrong dimension");
    theta_star_ += b / k;
  }
}

void QuadraticOracle::draw(int, Rng& rng, Eigen::Ref<Vector> out) const { rng.fill_normal(out); }

void QuadraticOracle::gradient(int client, const Eigen::Ref<const Vector>& draw,
                               const Eigen::Ref<const Vector>& theta, const AttackKind* attack,
                               Eigen::Ref<Vector> out) const {
  out.noalias() = a_ * (theta - betas_[client]) + root_ * draw;
  if (attack) out.noalias() -= a_ * std::get<MeanShift>(*attack).mu;
}

Vector QuadraticOracle::exact_gradient(int client, const Vector& theta, const AttackKind* attack) const {
  Vector beta = betas_[client];
  if (attack) {
    const auto* shift = std::get_if<MeanShift>(attack);
    if (!shift) throw std::invalid_argument("quadratic model supports only mean-shift attacks");
    beta += shift->mu;
  }
  return a_ * (theta - beta);
}

bool QuadraticOracle::supports(const AttackKind& attack) const {
  const auto* shift = std::get_if<MeanShift>(&attack);
  return shift && shift->mu.size() == dim();
}

Matrix QuadraticOracle::client_noise_covariance(int client, NoiseMode mode, int n_mc, std::uint64_t seed) const {
  if (mode == NoiseMode::kMonteCarlo) return ModelOracle::client_noise_covariance(client, mode, n_mc, seed);
  return v_;
}

// ---------------------------------------------------------------------------
// Logistic model

LogisticPopulation sample_logistic(int clients, int dim, const Vector& w0, double gamma,
                                   std::uint64_t seed) {
  if (clients < 1) throw std::invalid_argument("K must be >= 1");
  if (dim < 1) throw std::invalid_argument("d must be >= 1");
  if (w0.size() != dim) throw std::invalid_argument("w0 must have dimension d");
  if (gamma < 0) throw std::invalid_argument("gamma must be >= 0");
  LogisticPopulation pop;
  pop.dim = dim;
  pop.w0 = w0;
  pop.gamma = gamma;
  pop.seed = seed;
  Rng rng(derive_seed(seed, {stream::kPopulation}));
  const double sd = std::sqrt(gamma);
  for (int k = 0; k < clients; ++k) {
    Vector w(dim);
    for (int j = 0; j < dim; ++j) w[j] = w0[j] + sd * rng.normal();
    pop.true_weights.push_back(std::move(w));
  }
  pop.weights = Vector::Constant(clients, 1.0 / clients);
  return pop;
}

LogisticOracle::LogisticOracle(LogisticPopulation pop) : pop_(std::move(pop)) {
  if (pop_.clients() < 1) throw std::invalid_argument("logistic population has no clients");
  if (std::abs(pop_.weights.sum() - 1.0) > 1e-12) throw std::invalid_argument("weights must sum to 1");
  // Newton's method on sum_k w_k grad F_k(theta) = 0.
  Vector theta = Vector::Zero(pop_.dim);
  for (int it = 0; it < 100; ++it) {
    const Vector g = aggregate_gradient(theta);
    const Vector step = hessian_at(theta).ldlt().solve(g);
    theta -= step;
    if (step.norm() < 1e-13) break;
  }
  theta_star_ = theta;
}

void LogisticOracle::draw(int, Rng& rng, Eigen::Ref<Vector> out) const {
  const int d = pop_.dim;
  for (int i = 0; i < d; ++i) out[i] = rng.normal();
  out[d] = rng.uniform();
}

void LogisticOracle::gradient(int client, const Eigen::Ref<const Vector>& draw,
                              const Eigen::Ref<const Vector>& theta, const AttackKind* attack,
                              Eigen::Ref<Vector> out) const {
  const int d = pop_.dim;
  const auto x = draw.head(d);
  int label = draw[d] < sigmoid(x.dot(pop_.true_weights[client])) ? 1 : 0;
  if (attack) {
    if (!std::holds_alternative<LabelFlip>(*attack))
      throw std::invalid_argument("logistic model supports only label-flip attacks");
    label = LogisticPopulation::flip(label);
  }
  out = (sigmoid(x.dot(theta)) - label) * x;
}

Vector LogisticOracle::exact_gradient(int client, const Vector& theta, const AttackKind* attack) const {
  // P(y = 1 | x) = sigmoid(x^T w); flipped labels give sigmoid(-x^T w).
  Vector v = pop_.true_weights[client];
  if (attack) {
    if (!std::holds_alternative<LabelFlip>(*attack))
      throw std::invalid_argument("logistic model supports only label-flip attacks");
    v = -v;
  }
  return logistic_population_gradient(theta, v);
}

bool LogisticOracle::supports(const AttackKind& attack) const {
  return std::holds_alternative<LabelFlip>(attack);
}

Matrix LogisticOracle::hessian_at(const Vector& theta) const {
  // E[sigmoid'(x^T theta) x x^T]; independent of the client's labels.
  const int d = pop_.dim;
  const auto& q = normal_quadrature();
  const double r = theta.norm();
  auto dsig = [](double z) {
    const double s = sigmoid(z);
    return s * (1.0 - s);
  };
  double along = 0.0, across = 0.0;
  for (Eigen::Index i = 0; i < q.nodes.size(); ++i) {
    const double z = q.nodes[i];
    along += q.weights[i] * dsig(r * z) * z * z;
    across += q.weights[i] * dsig(r * z);
  }
  if (r < 1e-14) return along * Matrix::Identity(d, d);
  const Vector e = theta / r;
  const Matrix p = e * e.transpose();
  return along * p + across * (Matrix::Identity(d, d) - p);
}

Matrix LogisticOracle::hessian() const { return hessian_at(theta_star_); }

}  // namespace fedga
